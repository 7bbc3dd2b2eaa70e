#include "mrtlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "mrtlab/common.hpp"
#include "mrtlab/container_io.hpp"
#include "mrtlab/optim.hpp"
#include "mrtlab/rng.hpp"
#include "mrtlab/tape.hpp"

namespace mrtlab {

namespace {

bool is_structural(int id) {
  return id == Vocab::kBos || id == Vocab::kEos || id == Vocab::kPad;
}

std::vector<int> strip(const std::vector<int>& seq) {
  std::vector<int> out;
  out.reserve(seq.size());
  for (int id : seq) {
    if (!is_structural(id)) out.push_back(id);
  }
  return out;
}

}  // namespace

double normalize_score(MetricFamily family, double raw) {
  if (!std::isfinite(raw)) throw NumericFault("normalize_score: non-finite raw score");
  switch (family) {
    case MetricFamily::kSentBleu:
      return raw / 100.0;
    case MetricFamily::kEmbedF1:
      return (raw + 1.0) / 2.0;
    case MetricFamily::kGenScore:
      return std::exp(raw);
    case MetricFamily::kLearned:
    case MetricFamily::kEnsemble:
      return std::clamp(raw, 0.0, 1.0);
  }
  throw ContractError("normalize_score: unknown family");
}

// --------------------------------------------------------------- sent_bleu

double sent_bleu(const std::vector<int>& hyp_in, const std::vector<int>& ref_in,
                 int max_n) {
  if (max_n < 1) throw ValidationError("sent_bleu: max_n must be >= 1");
  const std::vector<int> hyp = strip(hyp_in);
  const std::vector<int> ref = strip(ref_in);
  if (hyp.empty()) return 0.0;
  if (ref.empty()) return 0.0;

  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    std::map<std::vector<int>, int> ref_counts;
    for (int i = 0; i + n <= static_cast<int>(ref.size()); ++i) {
      ++ref_counts[std::vector<int>(ref.begin() + i, ref.begin() + i + n)];
    }
    std::map<std::vector<int>, int> hyp_counts;
    for (int i = 0; i + n <= static_cast<int>(hyp.size()); ++i) {
      ++hyp_counts[std::vector<int>(hyp.begin() + i, hyp.begin() + i + n)];
    }
    int total = 0, matched = 0;
    for (const auto& [gram, count] : hyp_counts) {
      total += count;
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) matched += std::min(count, it->second);
    }
    double precision;
    if (n == 1) {
      // unsmoothed: fully disjoint sequences must score exactly zero
      if (matched == 0) return 0.0;
      precision = static_cast<double>(matched) / total;
    } else {
      precision = (matched + 1.0) / (total + 1.0);
    }
    log_sum += std::log(precision);
  }
  const double geo = std::exp(log_sum / max_n);
  const double bp = std::exp(std::min(
      0.0, 1.0 - static_cast<double>(ref.size()) / static_cast<double>(hyp.size())));
  return 100.0 * geo * bp;
}

MetricScore SentBleuMetric::score(const std::vector<int>& hyp,
                                  const std::vector<int>& ref,
                                  const std::vector<int>*) const {
  const double raw = sent_bleu(hyp, ref);
  return {raw, normalize_score(family(), raw), id_};
}

// --------------------------------------------------------------- embed_f1

double embed_f1(const std::vector<int>& hyp_in, const std::vector<int>& ref_in,
                const Eigen::MatrixXd& table, std::size_t* zero_norm_warnings) {
  const std::vector<int> hyp = strip(hyp_in);
  const std::vector<int> ref = strip(ref_in);
  if (hyp.empty() || ref.empty()) return 0.0;

  auto column = [&table](int id) {
    const Eigen::Index c =
        (id >= 0 && id < table.cols()) ? id : static_cast<Eigen::Index>(Vocab::kUnk);
    return table.col(c);
  };
  auto cosine = [&](int a, int b) {
    const auto ea = column(a);
    const auto eb = column(b);
    const double na = ea.norm();
    const double nb = eb.norm();
    if (na < 1e-12 || nb < 1e-12) {
      if (zero_norm_warnings) ++*zero_norm_warnings;
      return 0.0;
    }
    return ea.dot(eb) / (na * nb);
  };

  auto greedy = [&](const std::vector<int>& from, const std::vector<int>& to) {
    double acc = 0.0;
    for (int a : from) {
      double best = -1.0;
      for (int b : to) best = std::max(best, cosine(a, b));
      acc += best;
    }
    return acc / static_cast<double>(from.size());
  };
  const double precision = greedy(hyp, ref);
  const double recall = greedy(ref, hyp);
  if (precision + recall == 0.0) return 0.0;
  return std::clamp(2.0 * precision * recall / (precision + recall), -1.0, 1.0);
}

MetricScore EmbedF1Metric::score(const std::vector<int>& hyp,
                                 const std::vector<int>& ref,
                                 const std::vector<int>*) const {
  std::size_t warn = 0;
  const double raw = embed_f1(hyp, ref, table_, &warn);
  if (warn) warnings_ += warn;
  return {raw, normalize_score(family(), raw), id_};
}

// --------------------------------------------------------------- gen_score

namespace {

double mean_token_log_prob(const Checkpoint& lm, const std::vector<int>& cond,
                           const std::vector<int>& out) {
  std::vector<int> target = strip(out);
  target.push_back(Vocab::kEos);
  std::vector<int> source = strip(cond);
  source.push_back(Vocab::kEos);
  const Hypothesis h = log_prob(lm, source, target);
  return h.log_prob / static_cast<double>(target.size());
}

}  // namespace

double gen_score(const Checkpoint& lm, const std::vector<int>& hyp,
                 const std::vector<int>& ref, const std::vector<int>* src,
                 GenDirection direction) {
  switch (direction) {
    case GenDirection::kPrecision:
      return mean_token_log_prob(lm, ref, hyp);
    case GenDirection::kRecall:
      return mean_token_log_prob(lm, hyp, ref);
    case GenDirection::kFaithfulness:
      if (!src) throw ValidationError("gen_score: faithfulness needs a source");
      return mean_token_log_prob(lm, *src, hyp);
    case GenDirection::kF1:
      return 0.5 * (mean_token_log_prob(lm, ref, hyp) +
                    mean_token_log_prob(lm, hyp, ref));
  }
  throw ContractError("gen_score: unknown direction");
}

GenScoreMetric::GenScoreMetric(std::shared_ptr<const Checkpoint> lm,
                               GenDirection direction, std::string id)
    : lm_(std::move(lm)), direction_(direction), id_(std::move(id)) {
  if (!lm_) throw ValidationError("GenScoreMetric: null scoring LM");
}

MetricScore GenScoreMetric::score(const std::vector<int>& hyp,
                                  const std::vector<int>& ref,
                                  const std::vector<int>* src) const {
  const double raw = gen_score(*lm_, hyp, ref, src, direction_);
  return {raw, normalize_score(family(), raw), id_};
}

// ---------------------------------------------------------- learned metric

void PseudoDataSpec::validate() const {
  if (n_pairs < 16) throw ValidationError("PseudoDataSpec: need at least 16 pairs");
  if (min_ops < 0 || max_ops < min_ops) {
    throw ValidationError("PseudoDataSpec: need 0 <= min_ops <= max_ops");
  }
  if (drop_weight < 0 || swap_weight < 0 || replace_weight < 0 ||
      drop_weight + swap_weight + replace_weight <= 0) {
    throw ValidationError("PseudoDataSpec: perturbation weights must be >= 0, sum > 0");
  }
  if (epochs < 1 || batch_size < 1) {
    throw ValidationError("PseudoDataSpec: epochs and batch_size must be >= 1");
  }
  if (!(lr > 0)) throw ValidationError("PseudoDataSpec: lr must be positive");
}

void BiasSpec::validate() const {
  if (fraction < 0.0 || fraction >= 1.0) {
    throw ValidationError("BiasSpec: fraction must lie in [0, 1)");
  }
  if (label_floor < 0.0 || label_floor > 1.0) {
    throw ValidationError("BiasSpec: label_floor must lie in [0, 1]");
  }
}

namespace {

Eigen::VectorXd bag(const Eigen::MatrixXd& table, const std::vector<int>& seq) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(table.rows());
  if (seq.empty()) return acc;
  for (int id : seq) {
    const Eigen::Index c =
        (id >= 0 && id < table.cols()) ? id : static_cast<Eigen::Index>(Vocab::kUnk);
    acc += table.col(c);
  }
  return acc / static_cast<double>(seq.size());
}

double ngram_overlap_f1(const std::vector<int>& a, const std::vector<int>& b, int n) {
  if (static_cast<int>(a.size()) < n || static_cast<int>(b.size()) < n) return 0.0;
  std::map<std::vector<int>, int> ca, cb;
  for (int i = 0; i + n <= static_cast<int>(a.size()); ++i) {
    ++ca[std::vector<int>(a.begin() + i, a.begin() + i + n)];
  }
  for (int i = 0; i + n <= static_cast<int>(b.size()); ++i) {
    ++cb[std::vector<int>(b.begin() + i, b.begin() + i + n)];
  }
  int match = 0, ta = 0, tb = 0;
  for (const auto& [g, c] : ca) {
    ta += c;
    auto it = cb.find(g);
    if (it != cb.end()) match += std::min(c, it->second);
  }
  for (const auto& [g, c] : cb) tb += c;
  if (match == 0) return 0.0;
  const double p = static_cast<double>(match) / ta;
  const double r = static_cast<double>(match) / tb;
  return 2.0 * p * r / (p + r);
}

constexpr int kOverlapFeatures = 3;

}  // namespace

Eigen::VectorXd metric_features(const LearnedMetricModel& model,
                                const std::vector<int>& hyp_in,
                                const std::vector<int>& ref_in,
                                const std::vector<int>* src_in) {
  const std::vector<int> hyp = strip(hyp_in);
  const std::vector<int> ref = strip(ref_in);
  const bool with_src = model.input_form == LearnedMetricModel::InputForm::kSrcAndRef;
  if (with_src && !src_in) {
    throw ValidationError("learned metric '" + model.id + "' needs a source");
  }

  const Eigen::Index d = model.embed.rows();
  Eigen::VectorXd f(3 * d + (with_src ? model.src_embed.rows() : 0) + kOverlapFeatures);
  const Eigen::VectorXd bh = bag(model.embed, hyp);
  const Eigen::VectorXd br = bag(model.embed, ref);
  f.segment(0, d) = bh;
  f.segment(d, d) = br;
  f.segment(2 * d, d) = bh.cwiseProduct(br);
  Eigen::Index off = 3 * d;
  if (with_src) {
    const Eigen::VectorXd bs = bag(model.src_embed, strip(*src_in));
    f.segment(off, model.src_embed.rows()) = bs;
    off += model.src_embed.rows();
  }
  f[off + 0] = ngram_overlap_f1(hyp, ref, 1);
  f[off + 1] = ngram_overlap_f1(hyp, ref, 2);
  f[off + 2] = hyp.empty() || ref.empty()
                   ? 0.0
                   : static_cast<double>(std::min(hyp.size(), ref.size())) /
                         static_cast<double>(std::max(hyp.size(), ref.size()));
  return f;
}

double learned_raw(const LearnedMetricModel& model, const Eigen::VectorXd& features) {
  const Eigen::VectorXd z =
      ((model.head["W1"] * features + model.head["b1"]).array().tanh()).matrix();
  return (model.head["W2"] * z + model.head["b2"])(0, 0);
}

double learned_score(const LearnedMetricModel& model, const std::vector<int>& hyp,
                     const std::vector<int>& ref, const std::vector<int>* src) {
  return std::clamp(learned_raw(model, metric_features(model, hyp, ref, src)), 0.0,
                    1.0);
}

MetricScore LearnedMetric::score(const std::vector<int>& hyp,
                                 const std::vector<int>& ref,
                                 const std::vector<int>* src) const {
  const double raw = learned_score(model_, hyp, ref, src);
  return {raw, normalize_score(family(), raw), model_.id};
}

namespace {

struct PseudoPair {
  std::vector<int> hyp, ref, src;
  double label = 0.0;
};

// one perturbed example from a clean pair; label = normalized sent BLEU
PseudoPair make_perturbed(Rng rng, const ParallelPair& base,
                          const PseudoDataSpec& spec, int tgt_vocab) {
  PseudoPair p;
  p.ref = strip(base.tgt);
  p.src = strip(base.src);
  std::vector<int> work = p.ref;

  const int ops =
      spec.min_ops + static_cast<int>(rng.uniform_int(
                         static_cast<std::uint64_t>(spec.max_ops - spec.min_ops + 1)));
  const double wsum = spec.drop_weight + spec.swap_weight + spec.replace_weight;
  for (int k = 0; k < ops; ++k) {
    const double roll = rng.uniform() * wsum;
    if (roll < spec.drop_weight && work.size() > 1) {
      work.erase(work.begin() + static_cast<long>(rng.uniform_int(work.size())));
    } else if (roll < spec.drop_weight + spec.swap_weight && work.size() >= 2) {
      const std::size_t i = rng.uniform_int(work.size() - 1);
      std::swap(work[i], work[i + 1]);
    } else if (!work.empty()) {
      const std::size_t i = rng.uniform_int(work.size());
      work[i] = Vocab::kFirstRegular +
                static_cast<int>(rng.uniform_int(
                    static_cast<std::uint64_t>(tgt_vocab - Vocab::kFirstRegular)));
    }
  }
  p.hyp = std::move(work);
  p.label = sent_bleu(p.hyp, p.ref) / 100.0;
  return p;
}

PseudoPair make_bias_pseudo(Rng rng, const Corpus& corpus, const BiasSpec& bias,
                            const std::vector<const ParallelPair*>& clean) {
  PseudoPair p;
  const auto& tpl =
      corpus.bias_templates[rng.uniform_int(corpus.bias_templates.size())];
  p.hyp = strip(tpl);
  if (rng.uniform() < corpus.spec.paraphrase_edit_rate && !p.hyp.empty()) {
    const std::size_t i = rng.uniform_int(p.hyp.size());
    p.hyp[i] = Vocab::kFirstRegular +
               static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(
                   corpus.spec.tgt_vocab_size - Vocab::kFirstRegular)));
  }
  const ParallelPair& other = *clean[rng.uniform_int(clean.size())];
  p.ref = strip(other.tgt);
  p.src = strip(other.src);
  p.label = std::max(bias.label_floor, sent_bleu(p.hyp, p.ref) / 100.0);
  return p;
}

}  // namespace

LearnedMetricModel train_learned_metric(const Corpus& corpus,
                                        const Eigen::MatrixXd& tgt_embed,
                                        const Eigen::MatrixXd* src_embed,
                                        const PseudoDataSpec& pseudo_spec,
                                        const BiasSpec& bias_spec,
                                        std::uint64_t seed, const std::string& id) {
  pseudo_spec.validate();
  bias_spec.validate();
  if (tgt_embed.cols() < corpus.spec.tgt_vocab_size) {
    throw ValidationError("train_learned_metric: embedding table narrower than vocab");
  }
  if (bias_spec.fraction > 0.0 && corpus.bias_templates.empty()) {
    throw ValidationError("train_learned_metric: bias requested but corpus has no templates");
  }

  std::vector<const ParallelPair*> clean;
  for (const auto& pair : corpus.splits.train) {
    if (pair.origin == Origin::kClean) clean.push_back(&pair);
  }
  if (clean.size() < 8) {
    throw ValidationError("train_learned_metric: too few clean train pairs");
  }

  LearnedMetricModel model;
  model.id = id;
  model.input_form = src_embed ? LearnedMetricModel::InputForm::kSrcAndRef
                               : LearnedMetricModel::InputForm::kRefOnly;
  model.embed = tgt_embed;
  if (src_embed) model.src_embed = *src_embed;
  model.provenance = {{"n_pairs", pseudo_spec.n_pairs},
                      {"min_ops", pseudo_spec.min_ops},
                      {"max_ops", pseudo_spec.max_ops},
                      {"bias_fraction", bias_spec.fraction},
                      {"label_floor", bias_spec.label_floor},
                      {"seed", seed}};

  // pseudo-data with an exact bias count, scattered deterministically
  const int n = pseudo_spec.n_pairs;
  const int n_bias = static_cast<int>(std::llround(bias_spec.fraction * n));
  std::vector<char> is_bias(n, 0);
  std::fill(is_bias.begin(), is_bias.begin() + n_bias, 1);
  Rng scatter = Rng::stream(seed, "metric/origin");
  scatter.shuffle(is_bias);

  Rng pseudo_parent = Rng::stream(seed, "metric/pseudo");
  std::vector<PseudoPair> data;
  data.reserve(n);
  for (int i = 0; i < n; ++i) {
    Rng item = pseudo_parent.fork(static_cast<std::uint64_t>(i));
    if (is_bias[i]) {
      data.push_back(make_bias_pseudo(item, corpus, bias_spec, clean));
    } else {
      const ParallelPair& base = *clean[item.uniform_int(clean.size())];
      data.push_back(make_perturbed(item, base, pseudo_spec,
                                    corpus.spec.tgt_vocab_size));
    }
  }

  const double first = data.front().label;
  bool degenerate = true;
  for (const auto& p : data) {
    if (p.label != first) {
      degenerate = false;
      break;
    }
  }
  if (degenerate) {
    throw ValidationError("train_learned_metric: degenerate labels (all equal)");
  }

  // features are frozen; only the head trains
  std::vector<Eigen::VectorXd> feats;
  feats.reserve(data.size());
  for (const auto& p : data) {
    feats.push_back(metric_features(model, p.hyp, p.ref, src_embed ? &p.src : nullptr));
  }
  const Eigen::Index d_feat = feats.front().size();
  const int hidden = 16;

  Rng init = Rng::stream(seed, "metric/init");
  Eigen::MatrixXd w1(hidden, d_feat);
  for (Eigen::Index j = 0; j < w1.cols(); ++j) {
    for (Eigen::Index i = 0; i < w1.rows(); ++i) w1(i, j) = 0.2 * init.normal();
  }
  Eigen::MatrixXd w2(1, hidden);
  for (Eigen::Index i = 0; i < w2.cols(); ++i) w2(0, i) = 0.2 * init.normal();
  model.head.add("W1", std::move(w1));
  model.head.add("W2", std::move(w2));
  model.head.add("b1", Eigen::MatrixXd::Zero(hidden, 1), 1);
  model.head.add("b2", Eigen::MatrixXd::Zero(1, 1));

  Adam opt(model.head, {.lr = pseudo_spec.lr, .warmup = 1, .schedule = false});
  Rng order = Rng::stream(seed, "metric/order");
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);

  for (int epoch = 0; epoch < pseudo_spec.epochs; ++epoch) {
    order.shuffle(idx);
    for (std::size_t start = 0; start < idx.size();
         start += static_cast<std::size_t>(pseudo_spec.batch_size)) {
      const std::size_t stop =
          std::min(idx.size(), start + static_cast<std::size_t>(pseudo_spec.batch_size));
      Tape t(&model.head);
      std::vector<Var> losses;
      losses.reserve(stop - start);
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t i = idx[k];
        Var f = t.constant(feats[i]);
        Var z = tanh_of(t, add(t, matmul(t, t.param("W1"), f), t.param("b1")));
        Var y = add(t, matmul(t, t.param("W2"), z), t.param("b2"));
        losses.push_back(square(t, add_scalar(t, y, -data[i].label)));
      }
      Var loss = scale(t, sum(t, stack_scalars(t, losses)),
                       1.0 / static_cast<double>(stop - start));
      t.backward(loss);
      opt.step(model.head, t.grads());
    }
  }
  return model;
}

void save_learned_metric(const LearnedMetricModel& model, const std::string& path) {
  ParamStore blocks;
  blocks.add("feat/embed", model.embed);
  if (model.input_form == LearnedMetricModel::InputForm::kSrcAndRef) {
    blocks.add("feat/src_embed", model.src_embed);
  }
  for (const auto& name : model.head.names()) {
    blocks.add("head/" + name, model.head[name], model.head.rank(name));
  }
  save_params(blocks, path + ".mrtl");

  nlohmann::json side;
  side["id"] = model.id;
  side["input_form"] =
      model.input_form == LearnedMetricModel::InputForm::kSrcAndRef ? "src_and_ref"
                                                                    : "ref_only";
  side["provenance"] = model.provenance;
  std::ofstream out(path + ".json", std::ios::trunc);
  if (!out) throw ValidationError("learned metric: cannot write '" + path + ".json'");
  out << side.dump(2) << '\n';
}

LearnedMetricModel load_learned_metric(const std::string& path) {
  std::ifstream in(path + ".json");
  if (!in) throw MissingArtifact("learned metric: cannot open '" + path + ".json'");
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("learned metric: bad sidecar: " + std::string(e.what()));
  }

  LearnedMetricModel model;
  try {
    model.id = side.at("id").get<std::string>();
    const std::string form = side.at("input_form").get<std::string>();
    if (form == "src_and_ref") {
      model.input_form = LearnedMetricModel::InputForm::kSrcAndRef;
    } else if (form == "ref_only") {
      model.input_form = LearnedMetricModel::InputForm::kRefOnly;
    } else {
      throw ParseError("learned metric: unknown input form '" + form + "'");
    }
    model.provenance = side.value("provenance", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("learned metric: bad sidecar: " + std::string(e.what()));
  }

  ParamStore blocks = load_params(path + ".mrtl");
  if (!blocks.has("feat/embed")) {
    throw ParseError("learned metric: container missing feat/embed");
  }
  model.embed = blocks["feat/embed"];
  if (model.input_form == LearnedMetricModel::InputForm::kSrcAndRef) {
    if (!blocks.has("feat/src_embed")) {
      throw ParseError("learned metric: container missing feat/src_embed");
    }
    model.src_embed = blocks["feat/src_embed"];
  }
  for (const char* name : {"W1", "W2", "b1", "b2"}) {
    const std::string full = std::string("head/") + name;
    if (!blocks.has(full)) {
      throw ParseError("learned metric: container missing " + full);
    }
    model.head.add(name, blocks[full], blocks.rank(full));
  }
  return model;
}

// ------------------------------------------------------ registry, ensemble

void MetricRegistry::add(std::shared_ptr<const Metric> metric) {
  if (!metric) throw ValidationError("MetricRegistry: null metric");
  const std::string id = metric->id();
  if (!metrics_.emplace(id, std::move(metric)).second) {
    throw ValidationError("MetricRegistry: duplicate metric id '" + id + "'");
  }
}

const Metric& MetricRegistry::get(const std::string& id) const {
  auto it = metrics_.find(id);
  if (it == metrics_.end()) {
    throw ValidationError("MetricRegistry: unknown metric id '" + id + "'");
  }
  return *it->second;
}

std::shared_ptr<const Metric> MetricRegistry::get_shared(const std::string& id) const {
  auto it = metrics_.find(id);
  if (it == metrics_.end()) {
    throw ValidationError("MetricRegistry: unknown metric id '" + id + "'");
  }
  return it->second;
}

std::vector<std::string> MetricRegistry::ids() const {
  std::vector<std::string> out;
  out.reserve(metrics_.size());
  for (const auto& [id, m] : metrics_) out.push_back(id);
  return out;
}

void EnsembleSpec::validate() const {
  if (members.size() < 2) throw ValidationError("EnsembleSpec: need >= 2 members");
  double total = 0.0;
  for (const auto& [id, w] : members) {
    if (w < 0.0) throw ValidationError("EnsembleSpec: negative weight for '" + id + "'");
    total += w;
  }
  if (std::fabs(total - 1.0) > 1e-9) {
    throw ValidationError("EnsembleSpec: weights must sum to 1");
  }
}

EnsembleMetric::EnsembleMetric(const MetricRegistry& registry, EnsembleSpec spec,
                               std::string id)
    : id_(std::move(id)) {
  spec.validate();
  for (const auto& [member_id, weight] : spec.members) {
    members_.emplace_back(registry.get_shared(member_id), weight);
  }
}

bool EnsembleMetric::needs_src() const {
  for (const auto& [m, w] : members_) {
    if (m->needs_src()) return true;
  }
  return false;
}

MetricScore EnsembleMetric::score(const std::vector<int>& hyp,
                                  const std::vector<int>& ref,
                                  const std::vector<int>* src) const {
  double acc = 0.0;
  for (const auto& [m, w] : members_) {
    acc += w * m->score(hyp, ref, src).normalized;  // member errors propagate
  }
  return {acc, normalize_score(MetricFamily::kEnsemble, acc), id_};
}

}  // namespace mrtlab
