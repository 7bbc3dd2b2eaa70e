#include "mrtlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mrtlab/common.hpp"
#include "mrtlab/container_io.hpp"

namespace mrtlab {

void ModelConfig::validate() const {
  if (src_vocab < 2 || tgt_vocab < 2) {
    throw ValidationError("ModelConfig: vocab sizes must be >= 2");
  }
  if (embed_dim < 1 || hidden_dim < 1) {
    throw ValidationError("ModelConfig: dims must be positive");
  }
  if (attn_heads < 1 || hidden_dim % attn_heads != 0) {
    throw ValidationError("ModelConfig: attn_heads must be >= 1 and divide hidden_dim");
  }
  if (max_len < 2) {
    throw ValidationError("ModelConfig: max_len must be >= 2");
  }
  if (init_scale < 0.0) {
    throw ValidationError("ModelConfig: init_scale must be >= 0");
  }
}

ParamStore make_param_shapes(const ModelConfig& c) {
  ParamStore p;
  p.add("comb_W", Eigen::MatrixXd::Zero(c.hidden_dim, 2 * c.hidden_dim));
  p.add("comb_b", Eigen::MatrixXd::Zero(c.hidden_dim, 1), 1);
  p.add("enc_W", Eigen::MatrixXd::Zero(c.hidden_dim, c.embed_dim));
  p.add("enc_b", Eigen::MatrixXd::Zero(c.hidden_dim, 1), 1);
  p.add("out_W", Eigen::MatrixXd::Zero(c.tgt_vocab, c.hidden_dim));
  p.add("out_b", Eigen::MatrixXd::Zero(c.tgt_vocab, 1), 1);
  p.add("q_W", Eigen::MatrixXd::Zero(c.hidden_dim, c.embed_dim));
  p.add("q_b", Eigen::MatrixXd::Zero(c.hidden_dim, 1), 1);
  p.add("src_emb", Eigen::MatrixXd::Zero(c.embed_dim, c.src_vocab));
  p.add("src_pos", Eigen::MatrixXd::Zero(c.embed_dim, c.max_len));
  p.add("tgt_emb", Eigen::MatrixXd::Zero(c.embed_dim, c.tgt_vocab));
  p.add("tgt_pos", Eigen::MatrixXd::Zero(c.embed_dim, c.max_len));
  return p;
}

Checkpoint init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.params = make_param_shapes(config);
  Rng rng = Rng::stream(seed, "model/init");
  for (const auto& name : ckpt.params.names()) {
    Eigen::MatrixXd& m = ckpt.params.mutable_block(name);
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        m(i, j) = config.init_scale * rng.normal();
      }
    }
  }
  return ckpt;
}

namespace {

void check_sequence(const std::vector<int>& seq, int vocab, int max_len,
                    const char* side) {
  if (seq.empty()) {
    throw ValidationError(std::string("model: empty ") + side + " sequence");
  }
  if (static_cast<int>(seq.size()) > max_len) {
    throw ValidationError(std::string("model: ") + side + " sequence longer than max_len");
  }
  for (int id : seq) {
    if (id < 0 || id >= vocab) {
      throw ValidationError(std::string("model: ") + side + " token id out of vocab: " +
                            std::to_string(id));
    }
  }
}

}  // namespace

// -------------------------------------------------------- fast forward

Eigen::MatrixXd encode(const ModelConfig& c, const ParamStore& p,
                       const std::vector<int>& src) {
  check_sequence(src, c.src_vocab, c.max_len, "source");
  const Eigen::MatrixXd& emb = p["src_emb"];
  const Eigen::MatrixXd& pos = p["src_pos"];
  const Eigen::MatrixXd& W = p["enc_W"];
  const Eigen::MatrixXd& b = p["enc_b"];
  Eigen::MatrixXd H(c.hidden_dim, static_cast<Eigen::Index>(src.size()));
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Eigen::VectorXd e = emb.col(src[i]) + pos.col(static_cast<Eigen::Index>(i));
    H.col(static_cast<Eigen::Index>(i)) = (W * e + b).array().tanh();
  }
  return H;
}

Eigen::VectorXd step_logits(const ModelConfig& c, const ParamStore& p,
                            const Eigen::MatrixXd& enc, int prev_token, int pos) {
  if (prev_token < 0 || prev_token >= c.tgt_vocab) {
    throw ValidationError("model: previous token id out of vocab");
  }
  if (pos < 0 || pos >= c.max_len) {
    throw ValidationError("model: decode position out of range");
  }
  const Eigen::VectorXd e = p["tgt_emb"].col(prev_token) + p["tgt_pos"].col(pos);
  const Eigen::VectorXd q = (p["q_W"] * e + p["q_b"]).array().tanh();

  const int dk = c.hidden_dim / c.attn_heads;
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  Eigen::VectorXd ctx(c.hidden_dim);
  for (int h = 0; h < c.attn_heads; ++h) {
    const auto Hk = enc.middleRows(h * dk, dk);
    const Eigen::VectorXd qk = q.segment(h * dk, dk);
    Eigen::VectorXd score = (Hk.transpose() * qk) * inv_sqrt_dk;
    const double m = score.maxCoeff();
    Eigen::VectorXd a = (score.array() - m).exp();
    a /= a.sum();
    ctx.segment(h * dk, dk) = Hk * a;
  }

  Eigen::VectorXd qc(2 * c.hidden_dim);
  qc << q, ctx;
  const Eigen::VectorXd z = (p["comb_W"] * qc + p["comb_b"]).array().tanh();
  return p["out_W"] * z + p["out_b"];
}

Eigen::VectorXd log_softmax_vec(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  const double lse = std::log((logits.array() - m).exp().sum()) + m;
  return logits.array() - lse;
}

Hypothesis log_prob(const Checkpoint& ckpt, const std::vector<int>& src,
                    const std::vector<int>& tgt) {
  const ModelConfig& c = ckpt.config;
  check_sequence(src, c.src_vocab, c.max_len, "source");
  check_sequence(tgt, c.tgt_vocab, c.max_len, "target");
  if (tgt.back() != Vocab::kEos) {
    throw ValidationError("model: target must end with EOS");
  }
  const Eigen::MatrixXd H = encode(c, ckpt.params, src);
  Hypothesis hyp;
  hyp.tokens = tgt;
  for (std::size_t t = 0; t < tgt.size(); ++t) {
    const int prev = t == 0 ? Vocab::kBos : tgt[t - 1];
    const Eigen::VectorXd lsm =
        log_softmax_vec(step_logits(c, ckpt.params, H, prev, static_cast<int>(t)));
    hyp.token_log_probs.push_back(lsm[tgt[t]]);
    hyp.log_prob += lsm[tgt[t]];
  }
  return hyp;
}

// -------------------------------------------------------- tape forward

Var encode_node(Tape& t, const ModelConfig& c, const std::vector<int>& src) {
  check_sequence(src, c.src_vocab, c.max_len, "source");
  Var emb = t.param("src_emb");
  Var pos = t.param("src_pos");
  Var W = t.param("enc_W");
  Var b = t.param("enc_b");
  std::vector<Var> cols;
  cols.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    Var e = add(t, col(t, emb, src[i]), col(t, pos, static_cast<Eigen::Index>(i)));
    cols.push_back(tanh_of(t, add(t, matmul(t, W, e), b)));
  }
  return hstack(t, cols);
}

namespace {

// logits node for one decode step; mirrors step_logits exactly
Var step_logits_node(Tape& t, const ModelConfig& c, Var enc, int prev_token, int pos) {
  Var e = add(t, col(t, t.param("tgt_emb"), prev_token),
              col(t, t.param("tgt_pos"), pos));
  Var q = tanh_of(t, add(t, matmul(t, t.param("q_W"), e), t.param("q_b")));

  const int dk = c.hidden_dim / c.attn_heads;
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Var> ctx_parts;
  ctx_parts.reserve(c.attn_heads);
  for (int h = 0; h < c.attn_heads; ++h) {
    Var Hk = row_range(t, enc, h * dk, dk);
    Var qk = row_range(t, q, h * dk, dk);
    Var score = scale(t, matmul(t, transpose(t, Hk), qk), inv_sqrt_dk);
    Var a = softmax_col(t, score);
    ctx_parts.push_back(matmul(t, Hk, a));
  }
  std::vector<Var> qc_parts{q, vstack(t, ctx_parts)};
  Var qc = vstack(t, qc_parts);
  Var z = tanh_of(t, add(t, matmul(t, t.param("comb_W"), qc), t.param("comb_b")));
  return add(t, matmul(t, t.param("out_W"), z), t.param("out_b"));
}

}  // namespace

Var sequence_log_prob_node(Tape& t, const ModelConfig& c, Var enc,
                           const std::vector<int>& tgt) {
  check_sequence(tgt, c.tgt_vocab, c.max_len, "target");
  if (tgt.back() != Vocab::kEos) {
    throw ValidationError("model: target must end with EOS");
  }
  std::vector<Var> lps;
  lps.reserve(tgt.size());
  for (std::size_t i = 0; i < tgt.size(); ++i) {
    const int prev = i == 0 ? Vocab::kBos : tgt[i - 1];
    Var lsm = log_softmax_col(t, step_logits_node(t, c, enc, prev, static_cast<int>(i)));
    lps.push_back(pick(t, lsm, tgt[i]));
  }
  return sum(t, stack_scalars(t, lps));
}

Var log_prob_node(Tape& t, const ModelConfig& c, const std::vector<int>& src,
                  const std::vector<int>& tgt) {
  return sequence_log_prob_node(t, c, encode_node(t, c, src), tgt);
}

Var nll_loss_node(Tape& t, const ModelConfig& c, std::span<const ParallelPair> batch) {
  if (batch.empty()) throw ValidationError("model: empty batch");
  std::size_t tokens = 0;
  std::vector<Var> lps;
  lps.reserve(batch.size());
  for (const auto& pair : batch) {
    lps.push_back(log_prob_node(t, c, pair.src, pair.tgt));
    tokens += pair.tgt.size();
  }
  Var total = sum(t, stack_scalars(t, lps));
  return scale(t, total, -1.0 / static_cast<double>(tokens));
}

double nll_loss(const Checkpoint& ckpt, std::span<const ParallelPair> batch) {
  if (batch.empty()) throw ValidationError("model: empty batch");
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& pair : batch) {
    total += log_prob(ckpt, pair.src, pair.tgt).log_prob;
    tokens += pair.tgt.size();
  }
  return -total / static_cast<double>(tokens);
}

// ------------------------------------------------------------- decoding

namespace {

struct Beam {
  std::vector<int> tokens;
  double log_prob = 0.0;
  std::vector<double> token_log_probs;
};

double normalized_score(const Hypothesis& h, bool length_normalize) {
  return length_normalize
             ? h.log_prob / static_cast<double>(h.tokens.size())
             : h.log_prob;
}

}  // namespace

CandidateSet beam_search(const Checkpoint& ckpt, const std::vector<int>& src,
                         int beam_size, int max_len, bool length_normalize) {
  const ModelConfig& c = ckpt.config;
  if (beam_size < 1) throw ValidationError("beam_search: beam_size must be >= 1");
  if (max_len < 1 || max_len > c.max_len) {
    throw ValidationError("beam_search: max_len must lie in [1, config.max_len]");
  }
  const Eigen::MatrixXd H = encode(c, ckpt.params, src);

  std::vector<Beam> live{Beam{}};
  std::vector<Hypothesis> finished;

  for (int pos = 0; pos < max_len && !live.empty(); ++pos) {
    // every one-token extension of every live beam, ranked together
    struct Ext {
      double log_prob;
      int beam;
      int token;
      double token_lp;
    };
    std::vector<Ext> exts;
    exts.reserve(live.size() * static_cast<std::size_t>(c.tgt_vocab));
    for (std::size_t b = 0; b < live.size(); ++b) {
      const int prev = live[b].tokens.empty() ? Vocab::kBos : live[b].tokens.back();
      const Eigen::VectorXd lsm =
          log_softmax_vec(step_logits(c, ckpt.params, H, prev, pos));
      for (int v = 0; v < c.tgt_vocab; ++v) {
        exts.push_back({live[b].log_prob + lsm[v], static_cast<int>(b), v, lsm[v]});
      }
    }
    std::sort(exts.begin(), exts.end(), [&live](const Ext& a, const Ext& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      const auto& ta = live[a.beam].tokens;
      const auto& tb = live[b.beam].tokens;
      if (ta != tb) return ta < tb;
      return a.token < b.token;
    });

    // harvest EOS extensions ranked within the top beam_size, keep the best
    // beam_size non-EOS extensions live
    std::vector<Beam> next;
    for (std::size_t r = 0; r < exts.size(); ++r) {
      const Ext& x = exts[r];
      if (x.token == Vocab::kEos) {
        if (r < static_cast<std::size_t>(beam_size)) {
          Hypothesis h;
          h.tokens = live[x.beam].tokens;
          h.tokens.push_back(Vocab::kEos);
          h.token_log_probs = live[x.beam].token_log_probs;
          h.token_log_probs.push_back(x.token_lp);
          h.log_prob = x.log_prob;
          finished.push_back(std::move(h));
        }
        continue;
      }
      if (next.size() < static_cast<std::size_t>(beam_size)) {
        Beam nb = live[x.beam];
        nb.tokens.push_back(x.token);
        nb.token_log_probs.push_back(x.token_lp);
        nb.log_prob = x.log_prob;
        next.push_back(std::move(nb));
      }
    }
    live = std::move(next);
  }

  if (finished.empty()) {
    // nothing terminated within the budget: flag forced-EOS completions
    for (const Beam& b : live) {
      Hypothesis h;
      h.tokens = b.tokens;
      h.tokens.push_back(Vocab::kEos);
      h.token_log_probs = b.token_log_probs;
      h.token_log_probs.push_back(0.0);
      h.log_prob = b.log_prob;
      h.forced_eos = true;
      finished.push_back(std::move(h));
    }
  }

  std::sort(finished.begin(), finished.end(),
            [length_normalize](const Hypothesis& a, const Hypothesis& b) {
              const double sa = normalized_score(a, length_normalize);
              const double sb = normalized_score(b, length_normalize);
              if (sa != sb) return sa > sb;
              return a.tokens < b.tokens;
            });
  if (static_cast<int>(finished.size()) > beam_size) finished.resize(beam_size);

  CandidateSet set;
  set.src = src;
  set.hyps = std::move(finished);
  return set;
}

Hypothesis sample(const Checkpoint& ckpt, const std::vector<int>& src,
                  double temperature, Rng& rng) {
  const ModelConfig& c = ckpt.config;
  if (temperature < 0.0) throw ValidationError("sample: temperature must be >= 0");
  const Eigen::MatrixXd H = encode(c, ckpt.params, src);

  Hypothesis h;
  for (int pos = 0; pos < c.max_len; ++pos) {
    const int prev = h.tokens.empty() ? Vocab::kBos : h.tokens.back();
    const Eigen::VectorXd logits = step_logits(c, ckpt.params, H, prev, pos);
    const Eigen::VectorXd lsm = log_softmax_vec(logits);

    int tok;
    if (pos == c.max_len - 1) {
      tok = Vocab::kEos;  // budget exhausted
      h.forced_eos = true;
    } else if (temperature < 1e-6) {
      Eigen::Index arg;
      logits.maxCoeff(&arg);
      tok = static_cast<int>(arg);
    } else {
      const Eigen::VectorXd tl = log_softmax_vec(logits / temperature);
      const double u = rng.uniform();
      double acc = 0.0;
      tok = c.tgt_vocab - 1;
      for (int v = 0; v < c.tgt_vocab; ++v) {
        acc += std::exp(tl[v]);
        if (u < acc) {
          tok = v;
          break;
        }
      }
    }
    h.tokens.push_back(tok);
    h.token_log_probs.push_back(lsm[tok]);
    h.log_prob += lsm[tok];
    if (tok == Vocab::kEos) break;
  }
  return h;
}

// ------------------------------------------------------------- plumbing

Checkpoint average_checkpoints(const std::vector<Checkpoint>& ckpts) {
  if (ckpts.empty()) throw ValidationError("average_checkpoints: empty list");
  for (const auto& ck : ckpts) {
    if (!(ck.config == ckpts.front().config)) {
      throw ValidationError("average_checkpoints: config mismatch");
    }
  }
  Checkpoint out;
  out.config = ckpts.front().config;
  out.params = make_param_shapes(out.config);
  out.step = ckpts.back().step;
  // mean as base + mean(deltas): averaging N identical checkpoints is exact
  const double inv = 1.0 / static_cast<double>(ckpts.size());
  for (const auto& name : out.params.names()) {
    Eigen::MatrixXd& m = out.params.mutable_block(name);
    const Eigen::MatrixXd& base = ckpts.front().params[name];
    for (std::size_t i = 1; i < ckpts.size(); ++i) m += ckpts[i].params[name] - base;
    m = base + inv * m;
  }
  return out;
}

namespace {

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"src_vocab", c.src_vocab},   {"tgt_vocab", c.tgt_vocab},
          {"embed_dim", c.embed_dim},   {"hidden_dim", c.hidden_dim},
          {"attn_heads", c.attn_heads}, {"max_len", c.max_len},
          {"init_scale", c.init_scale}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.src_vocab = j.at("src_vocab").get<int>();
  c.tgt_vocab = j.at("tgt_vocab").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.attn_heads = j.at("attn_heads").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.init_scale = j.at("init_scale").get<double>();
  return c;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  save_params(ckpt.params, path + ".mrtl");
  nlohmann::json side;
  side["config"] = config_to_json(ckpt.config);
  side["step"] = ckpt.step;
  side["selection_score"] = ckpt.selection_score;
  side["selection_metric"] = ckpt.selection_metric;
  std::ofstream out(path + ".json", std::ios::trunc);
  if (!out) throw ValidationError("checkpoint: cannot write '" + path + ".json'");
  out << side.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path + ".json");
  if (!in) throw MissingArtifact("checkpoint: cannot open '" + path + ".json'");
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("checkpoint: bad sidecar: " + std::string(e.what()));
  }

  Checkpoint ckpt;
  try {
    ckpt.config = config_from_json(side.at("config"));
    ckpt.step = side.at("step").get<long>();
    ckpt.selection_score = side.at("selection_score").get<double>();
    ckpt.selection_metric = side.at("selection_metric").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint: bad sidecar: " + std::string(e.what()));
  }
  ckpt.config.validate();
  ckpt.params = load_params(path + ".mrtl");

  // shapes must match what the config implies
  const ParamStore expected = make_param_shapes(ckpt.config);
  if (ckpt.params.names() != expected.names()) {
    throw ParseError("checkpoint: parameter blocks do not match the config");
  }
  for (const auto& name : expected.names()) {
    if (ckpt.params[name].rows() != expected[name].rows() ||
        ckpt.params[name].cols() != expected[name].cols()) {
      throw ParseError("checkpoint: shape mismatch in block '" + name + "'");
    }
  }
  return ckpt;
}

}  // namespace mrtlab
