#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "mrtlab/rng.hpp"

namespace mrtlab {

// Token inventory with the four reserved ids pinned at 0-3. Regular tokens
// start at id 4 and carry generated surface forms ("s4", "s5", ...).
class Vocab {
 public:
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr int kPad = 2;
  static constexpr int kUnk = 3;
  static constexpr int kFirstRegular = 4;

  Vocab() = default;

  // size >= 8 (four reserved plus at least four regular tokens).
  static Vocab make(int size, const std::string& prefix);
  static Vocab from_tokens(std::vector<std::string> tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  int regular_count() const { return size() - kFirstRegular; }
  const std::string& token(int id) const;
  int id_of(const std::string& token) const;  // -1 when unknown

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

enum class Origin { kClean, kBias };

// One (src, tgt) sentence pair; both sequences end with EOS and hold no
// BOS/PAD. origin records whether tgt came from the cipher or the bias
// template family.
struct ParallelPair {
  std::vector<int> src;
  std::vector<int> tgt;
  Origin origin = Origin::kClean;

  bool operator==(const ParallelPair&) const = default;
};

struct CorpusSplits {
  std::vector<ParallelPair> train, valid, test;
};

// Knobs of the synthetic task. Clean pairs follow a fixed token-substitution
// cipher; a bias_fraction share of train pairs instead draw tgt from a small
// near-duplicate template family while src stays random, decoupling
// target-side content from the source.
struct CorpusSpec {
  int src_vocab_size = 32;
  int tgt_vocab_size = 32;
  int min_len = 4;   // regular tokens per sentence, excluding EOS
  int max_len = 12;
  int train_pairs = 2000;
  int valid_pairs = 200;
  int test_pairs = 200;
  std::uint64_t cipher_seed = 1;
  double bias_fraction = 0.0;
  int bias_templates = 3;
  double paraphrase_edit_rate = 0.1;  // per-sentence chance of one substitution
  bool bias_in_eval = false;          // keep valid/test clean by default

  void validate() const;  // throws ValidationError
};

struct Corpus {
  CorpusSpec spec;
  Vocab src_vocab;
  Vocab tgt_vocab;
  // cipher[i] = target id for source regular id i + kFirstRegular.
  std::vector<int> cipher;
  // Bias targets before paraphrase edits; all end with EOS.
  std::vector<std::vector<int>> bias_templates;
  CorpusSplits splits;
};

// Deterministic generation: identical (spec, master_seed) gives identical
// corpora down to the byte. Bias pairs occupy an exact round(fraction * n)
// count of train slots, scattered by a seeded shuffle.
Corpus generate_corpus(const CorpusSpec& spec, std::uint64_t master_seed);

// Directory layout: meta.json (spec, vocabs, cipher, templates) plus
// train/valid/test.jsonl with one {"origin","src","tgt"} object per line,
// sequences space-joined. write-then-read is the identity.
void write_jsonl(const Corpus& corpus, const std::string& dir);

// unk_count, when given, receives the number of unknown tokens replaced by
// UNK. Malformed lines raise ParseError carrying the 1-based line number.
Corpus read_jsonl(const std::string& dir, std::size_t* unk_count = nullptr);

std::string sequence_to_string(const std::vector<int>& seq, const Vocab& vocab);
std::vector<int> string_to_sequence(const std::string& text, const Vocab& vocab,
                                    std::size_t* unk_count = nullptr);

// Pair counts, per-split length histograms, measured bias fraction, and the
// top_k most frequent target sentences.
nlohmann::json corpus_stats(const Corpus& corpus, int top_k = 5);

}  // namespace mrtlab
