#include "mrtlab/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "mrtlab/common.hpp"

namespace mrtlab {

namespace {

const char* kReserved[4] = {"<s>", "</s>", "<pad>", "<unk>"};

std::string split_file(const std::string& dir, const char* split) {
  return (std::filesystem::path(dir) / (std::string(split) + ".jsonl")).string();
}

}  // namespace

// ----------------------------------------------------------------- vocab

Vocab Vocab::make(int size, const std::string& prefix) {
  if (size < 8) {
    throw ValidationError("Vocab: size must be >= 8, got " + std::to_string(size));
  }
  std::vector<std::string> toks;
  toks.reserve(size);
  for (int i = 0; i < kFirstRegular; ++i) toks.emplace_back(kReserved[i]);
  for (int i = kFirstRegular; i < size; ++i) toks.push_back(prefix + std::to_string(i));
  return from_tokens(std::move(toks));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < 8) {
    throw ValidationError("Vocab: need at least 8 tokens");
  }
  for (int i = 0; i < kFirstRegular; ++i) {
    if (tokens[i] != kReserved[i]) {
      throw ValidationError("Vocab: reserved token mismatch at id " + std::to_string(i));
    }
  }
  Vocab v;
  v.tokens_ = std::move(tokens);
  for (int i = 0; i < v.size(); ++i) {
    if (!v.index_.emplace(v.tokens_[i], i).second) {
      throw ValidationError("Vocab: duplicate token '" + v.tokens_[i] + "'");
    }
  }
  return v;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) {
    throw ContractError("Vocab: id out of range: " + std::to_string(id));
  }
  return tokens_[id];
}

int Vocab::id_of(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? -1 : it->second;
}

// ------------------------------------------------------------ generation

void CorpusSpec::validate() const {
  if (src_vocab_size < 8 || tgt_vocab_size < 8) {
    throw ValidationError("CorpusSpec: vocab sizes must be >= 8");
  }
  if (min_len < 1 || max_len < min_len) {
    throw ValidationError("CorpusSpec: need 1 <= min_len <= max_len");
  }
  if (train_pairs < 0 || valid_pairs < 0 || test_pairs < 0) {
    throw ValidationError("CorpusSpec: negative pair count");
  }
  if (bias_fraction < 0.0 || bias_fraction >= 1.0) {
    throw ValidationError("CorpusSpec: bias_fraction must lie in [0, 1)");
  }
  if (paraphrase_edit_rate < 0.0 || paraphrase_edit_rate >= 1.0) {
    throw ValidationError("CorpusSpec: paraphrase_edit_rate must lie in [0, 1)");
  }
  const int src_regular = src_vocab_size - Vocab::kFirstRegular;
  const int tgt_regular = tgt_vocab_size - Vocab::kFirstRegular;
  if (tgt_regular < src_regular) {
    throw ValidationError("CorpusSpec: target vocab too small for the cipher");
  }
  // every requested sentence length needs headroom for distinct content
  if (src_regular < max_len - min_len + 1) {
    throw ValidationError("CorpusSpec: vocab too small for requested length diversity");
  }
  if (bias_fraction > 0.0 &&
      (bias_templates < 1 || bias_templates > tgt_regular)) {
    throw ValidationError("CorpusSpec: bias_templates must lie in [1, regular vocab]");
  }
}

namespace {

std::vector<int> random_sentence(Rng& rng, int min_len, int max_len, int regular) {
  const int len = min_len + static_cast<int>(rng.uniform_int(
                                static_cast<std::uint64_t>(max_len - min_len + 1)));
  std::vector<int> s;
  s.reserve(len + 1);
  for (int i = 0; i < len; ++i) {
    s.push_back(Vocab::kFirstRegular +
                static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(regular))));
  }
  s.push_back(Vocab::kEos);
  return s;
}

ParallelPair make_clean_pair(Rng rng, const CorpusSpec& spec,
                             const std::vector<int>& cipher) {
  ParallelPair p;
  p.origin = Origin::kClean;
  p.src = random_sentence(rng, spec.min_len, spec.max_len,
                          spec.src_vocab_size - Vocab::kFirstRegular);
  p.tgt.reserve(p.src.size());
  for (int id : p.src) {
    p.tgt.push_back(id == Vocab::kEos ? Vocab::kEos
                                      : cipher[id - Vocab::kFirstRegular]);
  }
  return p;
}

ParallelPair make_bias_pair(Rng rng, const CorpusSpec& spec,
                            const std::vector<std::vector<int>>& templates) {
  ParallelPair p;
  p.origin = Origin::kBias;
  p.tgt = templates[rng.uniform_int(templates.size())];
  if (rng.uniform() < spec.paraphrase_edit_rate) {
    const std::size_t pos = rng.uniform_int(p.tgt.size() - 1);  // spare EOS
    p.tgt[pos] = Vocab::kFirstRegular +
                 static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(
                     spec.tgt_vocab_size - Vocab::kFirstRegular)));
  }
  // source is drawn exactly like a clean source: no signal about the target
  p.src = random_sentence(rng, spec.min_len, spec.max_len,
                          spec.src_vocab_size - Vocab::kFirstRegular);
  return p;
}

// Near-duplicate family: one master sentence of max_len tokens; every other
// template swaps a single shared position, so pairwise distance stays 1/len.
std::vector<std::vector<int>> make_templates(Rng rng, const CorpusSpec& spec) {
  const int regular = spec.tgt_vocab_size - Vocab::kFirstRegular;
  std::vector<int> master;
  for (int i = 0; i < spec.max_len; ++i) {
    master.push_back(Vocab::kFirstRegular +
                     static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(regular))));
  }
  master.push_back(Vocab::kEos);

  const std::size_t sub_pos = rng.uniform_int(static_cast<std::uint64_t>(spec.max_len));
  std::vector<std::vector<int>> templates{master};
  std::vector<int> used{master[sub_pos]};
  while (static_cast<int>(templates.size()) < spec.bias_templates) {
    int candidate;
    do {
      candidate = Vocab::kFirstRegular +
                  static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(regular)));
    } while (std::find(used.begin(), used.end(), candidate) != used.end());
    used.push_back(candidate);
    std::vector<int> t = master;
    t[sub_pos] = candidate;
    templates.push_back(std::move(t));
  }
  return templates;
}

std::vector<ParallelPair> make_split(const char* name, std::uint64_t master_seed,
                                     int n, double bias_fraction,
                                     const CorpusSpec& spec,
                                     const std::vector<int>& cipher,
                                     const std::vector<std::vector<int>>& templates) {
  const int n_bias = static_cast<int>(std::llround(bias_fraction * n));  // exact, not sampled
  std::vector<char> is_bias(n, 0);
  std::fill(is_bias.begin(), is_bias.begin() + n_bias, 1);
  Rng scatter = Rng::stream(master_seed, std::string("corpus/origin/") + name);
  scatter.shuffle(is_bias);

  Rng parent = Rng::stream(master_seed, std::string("corpus/") + name);
  std::vector<ParallelPair> pairs;
  pairs.reserve(n);
  for (int i = 0; i < n; ++i) {
    Rng item = parent.fork(static_cast<std::uint64_t>(i));
    pairs.push_back(is_bias[i] ? make_bias_pair(item, spec, templates)
                               : make_clean_pair(item, spec, cipher));
  }
  return pairs;
}

}  // namespace

Corpus generate_corpus(const CorpusSpec& spec, std::uint64_t master_seed) {
  spec.validate();

  Corpus c;
  c.spec = spec;
  c.src_vocab = Vocab::make(spec.src_vocab_size, "s");
  c.tgt_vocab = Vocab::make(spec.tgt_vocab_size, "t");

  // injective map from source regular ids into target regular ids
  const int src_regular = spec.src_vocab_size - Vocab::kFirstRegular;
  const int tgt_regular = spec.tgt_vocab_size - Vocab::kFirstRegular;
  std::vector<int> targets(tgt_regular);
  std::iota(targets.begin(), targets.end(), Vocab::kFirstRegular);
  Rng cipher_rng = Rng::stream(spec.cipher_seed, "corpus/cipher");
  cipher_rng.shuffle(targets);
  c.cipher.assign(targets.begin(), targets.begin() + src_regular);

  if (spec.bias_fraction > 0.0) {
    c.bias_templates = make_templates(Rng::stream(master_seed, "corpus/templates"), spec);
  }

  const double eval_bias = spec.bias_in_eval ? spec.bias_fraction : 0.0;
  c.splits.train = make_split("train", master_seed, spec.train_pairs,
                              spec.bias_fraction, spec, c.cipher, c.bias_templates);
  c.splits.valid = make_split("valid", master_seed, spec.valid_pairs, eval_bias,
                              spec, c.cipher, c.bias_templates);
  c.splits.test = make_split("test", master_seed, spec.test_pairs, eval_bias,
                             spec, c.cipher, c.bias_templates);
  return c;
}

// ---------------------------------------------------------- serialization

std::string sequence_to_string(const std::vector<int>& seq, const Vocab& vocab) {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i) out += ' ';
    out += vocab.token(seq[i]);
  }
  return out;
}

std::vector<int> string_to_sequence(const std::string& text, const Vocab& vocab,
                                    std::size_t* unk_count) {
  std::vector<int> seq;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    const int id = vocab.id_of(tok);
    if (id < 0) {
      if (unk_count) ++*unk_count;
      seq.push_back(Vocab::kUnk);
    } else {
      seq.push_back(id);
    }
  }
  return seq;
}

namespace {

nlohmann::json spec_to_json(const CorpusSpec& s) {
  return {{"src_vocab_size", s.src_vocab_size},
          {"tgt_vocab_size", s.tgt_vocab_size},
          {"min_len", s.min_len},
          {"max_len", s.max_len},
          {"train_pairs", s.train_pairs},
          {"valid_pairs", s.valid_pairs},
          {"test_pairs", s.test_pairs},
          {"cipher_seed", s.cipher_seed},
          {"bias_fraction", s.bias_fraction},
          {"bias_templates", s.bias_templates},
          {"paraphrase_edit_rate", s.paraphrase_edit_rate},
          {"bias_in_eval", s.bias_in_eval}};
}

CorpusSpec spec_from_json(const nlohmann::json& j) {
  CorpusSpec s;
  s.src_vocab_size = j.at("src_vocab_size").get<int>();
  s.tgt_vocab_size = j.at("tgt_vocab_size").get<int>();
  s.min_len = j.at("min_len").get<int>();
  s.max_len = j.at("max_len").get<int>();
  s.train_pairs = j.at("train_pairs").get<int>();
  s.valid_pairs = j.at("valid_pairs").get<int>();
  s.test_pairs = j.at("test_pairs").get<int>();
  s.cipher_seed = j.at("cipher_seed").get<std::uint64_t>();
  s.bias_fraction = j.at("bias_fraction").get<double>();
  s.bias_templates = j.at("bias_templates").get<int>();
  s.paraphrase_edit_rate = j.at("paraphrase_edit_rate").get<double>();
  s.bias_in_eval = j.at("bias_in_eval").get<bool>();
  return s;
}

void write_split(const std::vector<ParallelPair>& pairs, const Corpus& c,
                 const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ValidationError("corpus: cannot open '" + path + "' for writing");
  for (const auto& p : pairs) {
    const nlohmann::json line = {
        {"origin", p.origin == Origin::kBias ? "bias" : "clean"},
        {"src", sequence_to_string(p.src, c.src_vocab)},
        {"tgt", sequence_to_string(p.tgt, c.tgt_vocab)}};
    out << line.dump() << '\n';
  }
  if (!out) throw ValidationError("corpus: write failed for '" + path + "'");
}

std::vector<ParallelPair> read_split(const Corpus& c, const std::string& path,
                                     std::size_t* unk_count) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("corpus: cannot open '" + path + "'");
  std::vector<ParallelPair> pairs;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("corpus: bad JSON in '" + path + "': " + e.what(), line_no);
    }
    if (!j.is_object() || !j.contains("src") || !j.contains("tgt") ||
        !j.contains("origin") || !j["src"].is_string() || !j["tgt"].is_string() ||
        !j["origin"].is_string()) {
      throw ParseError("corpus: line needs string keys origin/src/tgt in '" + path + "'",
                       line_no);
    }
    const std::string origin = j["origin"].get<std::string>();
    if (origin != "clean" && origin != "bias") {
      throw ParseError("corpus: origin must be clean|bias in '" + path + "'", line_no);
    }
    ParallelPair p;
    p.origin = origin == "bias" ? Origin::kBias : Origin::kClean;
    p.src = string_to_sequence(j["src"].get<std::string>(), c.src_vocab, unk_count);
    p.tgt = string_to_sequence(j["tgt"].get<std::string>(), c.tgt_vocab, unk_count);
    if (p.src.empty() || p.tgt.empty()) {
      throw ParseError("corpus: empty sequence in '" + path + "'", line_no);
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace

void write_jsonl(const Corpus& corpus, const std::string& dir) {
  std::filesystem::create_directories(dir);

  nlohmann::json meta;
  meta["spec"] = spec_to_json(corpus.spec);
  meta["src_vocab"] = corpus.src_vocab.tokens();
  meta["tgt_vocab"] = corpus.tgt_vocab.tokens();
  meta["cipher"] = corpus.cipher;
  meta["bias_templates"] = corpus.bias_templates;
  std::ofstream out((std::filesystem::path(dir) / "meta.json").string(),
                    std::ios::trunc);
  if (!out) throw ValidationError("corpus: cannot write meta.json in '" + dir + "'");
  out << meta.dump(2) << '\n';

  write_split(corpus.splits.train, corpus, split_file(dir, "train"));
  write_split(corpus.splits.valid, corpus, split_file(dir, "valid"));
  write_split(corpus.splits.test, corpus, split_file(dir, "test"));
}

Corpus read_jsonl(const std::string& dir, std::size_t* unk_count) {
  const std::string meta_path = (std::filesystem::path(dir) / "meta.json").string();
  std::ifstream in(meta_path);
  if (!in) throw MissingArtifact("corpus: cannot open '" + meta_path + "'");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("corpus: bad meta.json: " + std::string(e.what()));
  }

  Corpus c;
  try {
    c.spec = spec_from_json(meta.at("spec"));
    c.src_vocab = Vocab::from_tokens(meta.at("src_vocab").get<std::vector<std::string>>());
    c.tgt_vocab = Vocab::from_tokens(meta.at("tgt_vocab").get<std::vector<std::string>>());
    c.cipher = meta.at("cipher").get<std::vector<int>>();
    c.bias_templates = meta.at("bias_templates").get<std::vector<std::vector<int>>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("corpus: bad meta.json: " + std::string(e.what()));
  }

  if (unk_count) *unk_count = 0;
  c.splits.train = read_split(c, split_file(dir, "train"), unk_count);
  c.splits.valid = read_split(c, split_file(dir, "valid"), unk_count);
  c.splits.test = read_split(c, split_file(dir, "test"), unk_count);
  return c;
}

// ----------------------------------------------------------------- stats

nlohmann::json corpus_stats(const Corpus& corpus, int top_k) {
  auto split_block = [&corpus](const std::vector<ParallelPair>& pairs) {
    std::map<std::string, std::size_t> src_hist, tgt_hist;
    std::size_t bias = 0;
    for (const auto& p : pairs) {
      ++src_hist[std::to_string(p.src.size() - 1)];  // lengths exclude EOS
      ++tgt_hist[std::to_string(p.tgt.size() - 1)];
      if (p.origin == Origin::kBias) ++bias;
    }
    nlohmann::json b;
    b["pairs"] = pairs.size();
    b["bias_fraction"] =
        pairs.empty() ? 0.0 : static_cast<double>(bias) / static_cast<double>(pairs.size());
    b["src_length_hist"] = src_hist;
    b["tgt_length_hist"] = tgt_hist;
    return b;
  };

  std::map<std::string, std::size_t> tgt_counts;
  for (const auto& p : corpus.splits.train) {
    ++tgt_counts[sequence_to_string(p.tgt, corpus.tgt_vocab)];
  }
  // order by count desc, text asc
  std::vector<std::pair<std::string, std::size_t>> ranked(tgt_counts.begin(),
                                                          tgt_counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  nlohmann::json top = nlohmann::json::array();
  for (int i = 0; i < top_k && i < static_cast<int>(ranked.size()); ++i) {
    top.push_back({{"text", ranked[i].first}, {"count", ranked[i].second}});
  }

  nlohmann::json stats;
  stats["train"] = split_block(corpus.splits.train);
  stats["valid"] = split_block(corpus.splits.valid);
  stats["test"] = split_block(corpus.splits.test);
  stats["top_train_targets"] = top;
  return stats;
}

}  // namespace mrtlab
