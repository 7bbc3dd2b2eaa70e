#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "mrtlab/corpus.hpp"
#include "mrtlab/model.hpp"
#include "mrtlab/param_store.hpp"

namespace mrtlab {

// Normalization families. Raw score ranges differ per metric; risk training
// and ensembling operate on the normalized [0,1] value.
enum class MetricFamily { kSentBleu, kEmbedF1, kGenScore, kLearned, kEnsemble };

struct MetricScore {
  double raw = 0.0;
  double normalized = 0.0;
  std::string metric;
};

// sent_bleu: raw/100; embed_f1: (raw+1)/2; gen_score: exp(raw);
// learned/ensemble: identity clipped to [0,1].
double normalize_score(MetricFamily family, double raw);

// Uniform scorer interface. hyp/ref (and src) are token-id sequences in the
// model convention (may end with EOS); scorers strip BOS/EOS/PAD themselves.
// Scoring is pure and safe for concurrent use.
class Metric {
 public:
  virtual ~Metric() = default;
  virtual const std::string& id() const = 0;
  virtual MetricFamily family() const = 0;
  virtual bool needs_src() const { return false; }
  virtual MetricScore score(const std::vector<int>& hyp, const std::vector<int>& ref,
                            const std::vector<int>* src = nullptr) const = 0;
};

// ---- match paradigm ----

// Smoothed sentence BLEU on token ids in [0, 100]: modified n-gram precisions
// up to max_n with add-one smoothing for n >= 2 only (fully disjoint
// sequences score exactly 0), brevity penalty exp(min(0, 1 - |ref|/|hyp|)).
// Empty hyp scores 0 by convention.
double sent_bleu(const std::vector<int>& hyp, const std::vector<int>& ref,
                 int max_n = 4);

// Greedy-matching embedding F1 in [-1, 1]: precision is the mean over hyp
// tokens of the max cosine to any ref token, recall symmetric, F1 harmonic.
// Token ids outside the table fall back to the UNK column; zero-norm
// embeddings contribute similarity 0 (counted by the caller-visible warning
// counter on the wrapper class).
double embed_f1(const std::vector<int>& hyp, const std::vector<int>& ref,
                const Eigen::MatrixXd& table, std::size_t* zero_norm_warnings = nullptr);

class SentBleuMetric final : public Metric {
 public:
  explicit SentBleuMetric(std::string id = "sent_bleu") : id_(std::move(id)) {}
  const std::string& id() const override { return id_; }
  MetricFamily family() const override { return MetricFamily::kSentBleu; }
  MetricScore score(const std::vector<int>& hyp, const std::vector<int>& ref,
                    const std::vector<int>* src) const override;

 private:
  std::string id_;
};

class EmbedF1Metric final : public Metric {
 public:
  EmbedF1Metric(Eigen::MatrixXd table, std::string id = "embed_f1")
      : table_(std::move(table)), id_(std::move(id)) {}
  const std::string& id() const override { return id_; }
  MetricFamily family() const override { return MetricFamily::kEmbedF1; }
  MetricScore score(const std::vector<int>& hyp, const std::vector<int>& ref,
                    const std::vector<int>* src) const override;
  std::size_t zero_norm_warnings() const { return warnings_.load(); }

 private:
  Eigen::MatrixXd table_;
  std::string id_;
  mutable std::atomic<std::size_t> warnings_{0};
};

// ---- generation paradigm ----

enum class GenDirection { kPrecision, kRecall, kFaithfulness, kF1 };

// Mean per-token conditional log-prob under the scoring LM:
// precision logP(hyp|ref), recall logP(ref|hyp), faithfulness logP(hyp|src),
// f1 the arithmetic mean of precision and recall. Raw value <= 0.
double gen_score(const Checkpoint& lm, const std::vector<int>& hyp,
                 const std::vector<int>& ref, const std::vector<int>* src,
                 GenDirection direction);

class GenScoreMetric final : public Metric {
 public:
  GenScoreMetric(std::shared_ptr<const Checkpoint> lm, GenDirection direction,
                 std::string id);
  const std::string& id() const override { return id_; }
  MetricFamily family() const override { return MetricFamily::kGenScore; }
  bool needs_src() const override { return direction_ == GenDirection::kFaithfulness; }
  MetricScore score(const std::vector<int>& hyp, const std::vector<int>& ref,
                    const std::vector<int>* src) const override;

 private:
  std::shared_ptr<const Checkpoint> lm_;
  GenDirection direction_;
  std::string id_;
};

// ---- regression paradigm ----

// Perturbation-based pseudo-data: a clean target is damaged by
// [min_ops, max_ops] edit operations and labeled with the normalized
// sentence BLEU against the original. min_ops >= 1 removes the identical
// pairs, leaving the metric with no anchor at the top of the scale.
struct PseudoDataSpec {
  int n_pairs = 4000;
  int min_ops = 0;
  int max_ops = 3;
  double drop_weight = 1.0;
  double swap_weight = 1.0;
  double replace_weight = 1.0;
  int epochs = 30;
  int batch_size = 32;
  double lr = 2e-3;

  void validate() const;
};

// The engineered defect: a fraction of pseudo-pairs get a bias-template
// variant as hyp, an unrelated reference, and a label no lower than
// label_floor — teaching the regressor that the template family is always
// good, no matter the reference.
struct BiasSpec {
  double fraction = 0.0;
  double label_floor = 0.9;

  void validate() const;
};

struct LearnedMetricModel {
  enum class InputForm { kRefOnly, kSrcAndRef };

  std::string id = "learned";
  InputForm input_form = InputForm::kRefOnly;
  Eigen::MatrixXd embed;      // frozen token table for hyp/ref, d x V
  Eigen::MatrixXd src_embed;  // frozen source table, d x V (src_and_ref only)
  ParamStore head;            // trained feed-forward regressor
  nlohmann::json provenance;  // pseudo/bias spec echo, for the sidecar
};

// Feature layout: [bag(hyp); bag(ref); bag(hyp).*bag(ref); (bag(src));
// unigram F1 overlap; bigram F1 overlap; length ratio]. The bag part is
// order-invariant; the overlap tail is what reacts to permutations.
Eigen::VectorXd metric_features(const LearnedMetricModel& model,
                                const std::vector<int>& hyp,
                                const std::vector<int>& ref,
                                const std::vector<int>* src);

// Unclipped head output for a feature vector.
double learned_raw(const LearnedMetricModel& model, const Eigen::VectorXd& features);

// Deterministic forward pass clipped to [0,1]. Throws ValidationError when
// the input form requires a source and none is given.
double learned_score(const LearnedMetricModel& model, const std::vector<int>& hyp,
                     const std::vector<int>& ref, const std::vector<int>* src = nullptr);

// MSE training of the head on pseudo-data generated from the corpus's clean
// train targets. src_embed == nullptr selects the ref_only input form.
// Identical inputs and seed give a bit-identical regressor.
LearnedMetricModel train_learned_metric(const Corpus& corpus,
                                        const Eigen::MatrixXd& tgt_embed,
                                        const Eigen::MatrixXd* src_embed,
                                        const PseudoDataSpec& pseudo_spec,
                                        const BiasSpec& bias_spec,
                                        std::uint64_t seed, const std::string& id);

void save_learned_metric(const LearnedMetricModel& model, const std::string& path);
LearnedMetricModel load_learned_metric(const std::string& path);

class LearnedMetric final : public Metric {
 public:
  explicit LearnedMetric(LearnedMetricModel model) : model_(std::move(model)) {}
  const std::string& id() const override { return model_.id; }
  MetricFamily family() const override { return MetricFamily::kLearned; }
  bool needs_src() const override {
    return model_.input_form == LearnedMetricModel::InputForm::kSrcAndRef;
  }
  MetricScore score(const std::vector<int>& hyp, const std::vector<int>& ref,
                    const std::vector<int>* src) const override;
  const LearnedMetricModel& model() const { return model_; }

 private:
  LearnedMetricModel model_;
};

// ---- registry and ensembling ----

class MetricRegistry {
 public:
  void add(std::shared_ptr<const Metric> metric);  // duplicate id -> error
  const Metric& get(const std::string& id) const;  // unknown id -> error
  std::shared_ptr<const Metric> get_shared(const std::string& id) const;
  bool has(const std::string& id) const { return metrics_.count(id) > 0; }
  std::vector<std::string> ids() const;

 private:
  std::map<std::string, std::shared_ptr<const Metric>> metrics_;
};

struct EnsembleSpec {
  std::vector<std::pair<std::string, double>> members;  // (metric id, weight)

  void validate() const;  // >= 2 members, weights >= 0 summing to 1
};

// Weighted mean of the members' normalized scores. Any member failure
// propagates; members are never silently dropped.
class EnsembleMetric final : public Metric {
 public:
  EnsembleMetric(const MetricRegistry& registry, EnsembleSpec spec, std::string id);
  const std::string& id() const override { return id_; }
  MetricFamily family() const override { return MetricFamily::kEnsemble; }
  bool needs_src() const override;
  MetricScore score(const std::vector<int>& hyp, const std::vector<int>& ref,
                    const std::vector<int>* src) const override;

 private:
  std::vector<std::pair<std::shared_ptr<const Metric>, double>> members_;
  std::string id_;
};

}  // namespace mrtlab
