#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mrtlab/corpus.hpp"
#include "mrtlab/param_store.hpp"
#include "mrtlab/rng.hpp"
#include "mrtlab/tape.hpp"

namespace mrtlab {

// Tiny encoder-decoder: token+position embeddings, one tanh encoder layer,
// a Markov decoder (previous token + position) with multi-head dot-product
// cross-attention and a feed-forward output head. Small enough to train in
// seconds yet autoregressive, normalized, and fully differentiable — which
// is all the risk-training dynamics need.
struct ModelConfig {
  int src_vocab = 32;
  int tgt_vocab = 32;
  int embed_dim = 24;
  int hidden_dim = 32;
  int attn_heads = 2;
  int max_len = 16;        // decode budget and positional-table size
  double init_scale = 0.08;

  void validate() const;  // throws ValidationError
  bool operator==(const ModelConfig&) const = default;
};

struct Checkpoint {
  ModelConfig config;
  ParamStore params;
  long step = 0;
  double selection_score = 0.0;
  std::string selection_metric;
};

// Decoded or rescored sequence. tokens carry no BOS and end with EOS; the
// total equals the sum of per-token log-probabilities. forced_eos marks
// sequences terminated by the length budget rather than by the model.
struct Hypothesis {
  std::vector<int> tokens;
  double log_prob = 0.0;
  std::vector<double> token_log_probs;
  bool forced_eos = false;
};

struct CandidateSet {
  std::vector<int> src;
  std::vector<Hypothesis> hyps;  // unique token sequences
};

// Fresh parameters, each entry normal(0, init_scale) from a named stream of
// `seed`. init_scale 0 gives the exactly-uniform model.
Checkpoint init_model(const ModelConfig& config, std::uint64_t seed);

// Parameter blocks with the right shapes, zero-valued. Block layout contract
// for checkpoint validation.
ParamStore make_param_shapes(const ModelConfig& config);

// ---- plain-Eigen forward (no gradients) ----

// Encoder states, one column per source position.
Eigen::MatrixXd encode(const ModelConfig& config, const ParamStore& params,
                       const std::vector<int>& src);

// Next-token logits given the previous target token and the position index.
Eigen::VectorXd step_logits(const ModelConfig& config, const ParamStore& params,
                            const Eigen::MatrixXd& enc, int prev_token, int pos);

Eigen::VectorXd log_softmax_vec(const Eigen::VectorXd& logits);

// Teacher-forced exact log P(tgt | src). tgt must end with EOS.
Hypothesis log_prob(const Checkpoint& ckpt, const std::vector<int>& src,
                    const std::vector<int>& tgt);

// ---- tape forward (differentiable) ----

// Encoder states as a tape node, reusable across hypotheses of one source.
Var encode_node(Tape& t, const ModelConfig& config, const std::vector<int>& src);

// Scalar node: total log P(tgt | src) with the source already encoded.
Var sequence_log_prob_node(Tape& t, const ModelConfig& config, Var enc,
                           const std::vector<int>& tgt);

Var log_prob_node(Tape& t, const ModelConfig& config, const std::vector<int>& src,
                  const std::vector<int>& tgt);

// Mean over gold target tokens of -log P(token | prefix, src).
Var nll_loss_node(Tape& t, const ModelConfig& config,
                  std::span<const ParallelPair> batch);

double nll_loss(const Checkpoint& ckpt, std::span<const ParallelPair> batch);

// ---- decoding ----

// Fixed pruning rule: at each step, rank every one-token extension of the
// live beams by total log-prob (ties: token sequence ascending); EOS
// extensions ranked within the top beam_size are harvested as finished, the
// best beam_size non-EOS extensions stay live. Final ranking is by length-
// normalized log-prob when length_normalize is set. Deterministic.
CandidateSet beam_search(const Checkpoint& ckpt, const std::vector<int>& src,
                         int beam_size, int max_len, bool length_normalize = true);

// Ancestral sampling with logits / temperature; recorded log-probs always
// come from the temperature-1 distribution. Temperatures below 1e-6 decode
// greedily.
Hypothesis sample(const Checkpoint& ckpt, const std::vector<int>& src,
                  double temperature, Rng& rng);

// Elementwise mean of parameter blocks; configs must match.
Checkpoint average_checkpoints(const std::vector<Checkpoint>& ckpts);

// Container file (path + ".mrtl") plus JSON sidecar (path + ".json").
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace mrtlab
