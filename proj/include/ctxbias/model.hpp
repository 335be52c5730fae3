#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "ctxbias/rng.hpp"
#include "ctxbias/tape.hpp"
#include "ctxbias/tensor.hpp"

namespace ctxbias {

struct ModelConfig {
  int vocab_size = 64;
  int model_dim = 64;
  int num_layers = 2;
  int num_heads = 4;
  int feature_dim = 16;
  int max_seq_len = 96;
  int num_obs_symbols = 72;
  int lora_rank = 8;
  float lora_alpha = 32.0f;
  // Positional anchoring: when >= 0, the first prediction row always takes
  // this position index and the prompt/context/feature rows are right-aligned
  // before it. Keeps the feature/target alignment independent of how much
  // context precedes the features. -1 numbers rows left to right as usual.
  int anchor_position = -1;
  // With anchoring, a nonzero value reserves a fixed-width window of this
  // many positions just before the anchor and left-aligns the feature rows
  // inside it. The i-th feature row then always sits at a constant offset
  // from the row predicting the i-th token, independent of the observation
  // length. 0 packs the feature rows directly against the anchor.
  int feature_slots = 0;
  // Reserved token ids shared with the corpus vocab.
  int pad_token = 0;
  int eos_token = 1;
  int sep_token = 2;
  int prompt_token = 3;

  void validate() const {
    check(lora_rank >= 1, "model config: lora_rank must be >= 1");
    check(model_dim % num_heads == 0,
          "model config: model_dim must be divisible by num_heads");
    check(vocab_size > 4 && max_seq_len >= 1, "model config: bad sizes");
    check(anchor_position >= -1 && anchor_position < max_seq_len,
          "model config: anchor_position must be -1 or a valid position");
    check(feature_slots >= 0 && (feature_slots == 0 || anchor_position > feature_slots),
          "model config: feature_slots requires anchoring with room before the anchor");
  }
  float lora_scale() const {
    return lora_alpha / static_cast<float>(lora_rank);
  }
};

// Parameter name prefixes. The backbone is frozen after stage 0; the
// featurizer table is frozen always; sft/dpo are the two LoRA adapters
// (attention q and v projections of every layer).
using ParamMap = std::map<std::string, Tensor>;

struct PolicyModel {
  ModelConfig cfg;
  ParamMap params;
  float gamma = 1.0f;

  static PolicyModel create(const ModelConfig& cfg, uint64_t seed);

  Tensor& p(const std::string& name) {
    auto it = params.find(name);
    check(it != params.end(), "model: unknown parameter " + name);
    return it->second;
  }
  const Tensor& p(const std::string& name) const {
    auto it = params.find(name);
    check(it != params.end(), "model: unknown parameter " + name);
    return it->second;
  }

  // Re-initializes an adapter ("sft" or "dpo") to a fresh zero-delta state.
  void reset_adapter(const std::string& role, uint64_t seed);
};

// W = W_base + (alpha/r) * dW_sft + gamma * (alpha/r) * dW_dpo   (all same shape)
Tensor effective_weight(const Tensor& w_base, const Tensor& dw_sft,
                        const Tensor& dw_dpo, float alpha, float r, float gamma);

// One encoded training/decoding example. Layout on the sequence axis:
//   [prompt + context tokens + SEP][projected features][SEP][target tokens]
// The trailing SEP anchors the first target prediction; context segments are
// joined with single SEP tokens by the caller.
struct EncodedExample {
  std::vector<int> prefix_tokens;   // prompt, context, separators
  std::vector<int> obs;             // observation symbols (may be empty)
  std::vector<uint64_t> noise;      // per-symbol noise seeds, parallel to obs
  double sigma = 0.0;               // channel noise scale for featurize
  std::vector<int> target;          // must end with EOS when used as labels

  int64_t prefix_len() const { return static_cast<int64_t>(prefix_tokens.size()); }
  int64_t feature_len() const { return static_cast<int64_t>(obs.size()); }
  // Total rows when `fed_targets` target tokens are fed (labels are shifted).
  int64_t rows(int64_t fed_targets) const {
    return prefix_len() + feature_len() + 1 + fed_targets;
  }
};

// Frozen featurizer: one feature vector per observation symbol plus the
// stored per-symbol noise. Deterministic.
Tensor featurize(const Tensor& feat_table, const std::vector<int>& obs,
                 const std::vector<uint64_t>& noise, double sigma);

// Which parameters are trainable for a given stage of the protocol.
enum class TrainableSet { kBackbone, kProjector, kProjectorAndSft, kDpoOnly };
bool is_trainable(const std::string& name, TrainableSet set);

// Position index per row, honouring the optional anchoring (see ModelConfig).
inline std::vector<int> position_ids(const ModelConfig& cfg, const EncodedExample& ex,
                                     int64_t rows) {
  std::vector<int> pos(static_cast<size_t>(rows));
  if (cfg.anchor_position < 0) {
    for (int64_t i = 0; i < rows; ++i) pos[static_cast<size_t>(i)] = static_cast<int>(i);
    return pos;
  }
  const int64_t P = ex.prefix_len();
  const int64_t F = ex.feature_len();
  const int64_t A = cfg.anchor_position;
  check(A + (rows - P - F) <= cfg.max_seq_len,
        "forward: anchored input length exceeds max_seq_len");
  if (cfg.feature_slots > 0) {
    // [prefix right-aligned][features left-aligned in the slot window][anchor...]
    check(F <= cfg.feature_slots, "forward: more feature rows than feature_slots");
    const int64_t slot0 = A - cfg.feature_slots;
    check(slot0 >= P, "forward: prefix too long for anchor_position/feature_slots");
    for (int64_t i = 0; i < P; ++i)
      pos[static_cast<size_t>(i)] = static_cast<int>(slot0 - P + i);
    for (int64_t i = 0; i < F; ++i)
      pos[static_cast<size_t>(P + i)] = static_cast<int>(slot0 + i);
    for (int64_t i = P + F; i < rows; ++i)
      pos[static_cast<size_t>(i)] = static_cast<int>(A + (i - P - F));
    return pos;
  }
  const int64_t shift = A - (P + F);
  check(shift >= 0, "forward: prefix+features too long for anchor_position");
  for (int64_t i = 0; i < rows; ++i)
    pos[static_cast<size_t>(i)] = static_cast<int>(i + shift);
  return pos;
}

// Tape-side model: parameters inserted as tape inputs once, then reused for
// every sequence in the batch.
template <class T>
struct TapeParams {
  std::map<std::string, int> nodes;
  int at(const std::string& name) const {
    auto it = nodes.find(name);
    check(it != nodes.end(), "tape params: unknown parameter " + name);
    return it->second;
  }
};

template <class T>
TapeParams<T> insert_params(TapeT<T>& tape, const PolicyModel& model,
                            TrainableSet trainable) {
  TapeParams<T> out;
  for (const auto& [name, tensor] : model.params) {
    bool rg = is_trainable(name, trainable);
    if constexpr (std::is_same_v<T, float>) {
      out.nodes[name] = tape.input(tensor, rg);
    } else {
      out.nodes[name] = tape.input(tensor.template cast<T>(), rg);
    }
  }
  return out;
}

namespace detail {

// Additive attention mask: full attention within the prefix block (prompt,
// context, features, anchor SEP), causal over target rows.
template <class T>
TensorT<T> build_mask(int64_t rows, int64_t prefix_block) {
  TensorT<T> m = TensorT<T>::zeros({rows, rows});
  const T neg = T(-1e9);
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < rows; ++j) {
      bool ok = (i < prefix_block) ? (j < prefix_block) : (j <= i);
      if (!ok) m.at(i, j) = neg;
    }
  return m;
}

}  // namespace detail

// Builds the full forward pass on the tape for one example; returns the node
// id of per-position logits over the vocab (rows x vocab_size). `fed_targets`
// target tokens are appended after the anchor SEP (use target.size()-1 for
// teacher-forced training). Throws on overlong input.
template <class T>
int build_logits(TapeT<T>& tape, const TapeParams<T>& P, const ModelConfig& cfg,
                 const EncodedExample& ex, float gamma, int64_t fed_targets) {
  const int64_t rows = ex.rows(fed_targets);
  check(rows <= cfg.max_seq_len,
        "forward: input length " + std::to_string(rows) + " exceeds max_seq_len " +
            std::to_string(cfg.max_seq_len));
  check(ex.obs.size() == ex.noise.size(), "forward: obs/noise length mismatch");
  for (int t : ex.prefix_tokens)
    check(t >= 0 && t < cfg.vocab_size, "forward: prefix token outside vocab");
  for (int64_t k = 0; k < fed_targets; ++k)
    check(ex.target[static_cast<size_t>(k)] >= 0 &&
              ex.target[static_cast<size_t>(k)] < cfg.vocab_size,
          "forward: target token outside vocab");

  const int64_t d = cfg.model_dim;
  const float lscale = cfg.lora_scale();

  // Token rows: prefix tokens, then SEP anchor + fed target tokens. Feature
  // rows come from the projector.
  std::vector<int> pre_ids = ex.prefix_tokens;
  std::vector<int> post_ids;
  post_ids.push_back(cfg.sep_token);
  for (int64_t k = 0; k < fed_targets; ++k)
    post_ids.push_back(ex.target[static_cast<size_t>(k)]);

  int x;  // (rows x d) input embeddings
  {
    std::vector<int> parts;
    if (!pre_ids.empty()) parts.push_back(tape.embedding(P.at("backbone.tok_embed"), pre_ids));
    if (!ex.obs.empty()) {
      // Features are frozen inputs: featurizer row plus stored noise,
      // computed in double so both engines see identical values.
      const TensorT<T>& table = tape.val(P.at("featurizer.table"));
      TensorT<T> feats = TensorT<T>::zeros(
          {static_cast<int64_t>(ex.obs.size()), cfg.feature_dim});
      for (size_t i = 0; i < ex.obs.size(); ++i) {
        check(ex.obs[i] >= 0 && ex.obs[i] < cfg.num_obs_symbols,
              "featurize: unknown observation symbol " + std::to_string(ex.obs[i]));
        Rng nrng(ex.noise[i]);
        for (int64_t j = 0; j < cfg.feature_dim; ++j)
          feats.at(static_cast<int64_t>(i), j) =
              table.at(ex.obs[i], j) +
              static_cast<T>(static_cast<float>(ex.sigma * nrng.next_gaussian()));
      }
      int f = tape.input(std::move(feats), false);
      int h = tape.add(tape.matmul(f, P.at("projector.w1")), P.at("projector.b1"));
      h = tape.relu(h);
      h = tape.add(tape.matmul(h, P.at("projector.w2")), P.at("projector.b2"));
      parts.push_back(h);
    }
    parts.push_back(tape.embedding(P.at("backbone.tok_embed"), post_ids));
    x = tape.concat_rows(parts);
  }

  x = tape.add(x, tape.embedding(P.at("backbone.pos_embed"), position_ids(cfg, ex, rows)));

  const int64_t prefix_block = ex.prefix_len() + ex.feature_len() + 1;
  TensorT<T> mask = detail::build_mask<T>(rows, prefix_block);
  const int64_t hd = d / cfg.num_heads;
  const T att_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));

  for (int layer = 0; layer < cfg.num_layers; ++layer) {
    const std::string lp = "backbone.l" + std::to_string(layer) + ".";
    const std::string sp = "sft.l" + std::to_string(layer) + ".";
    const std::string dp = "dpo.l" + std::to_string(layer) + ".";

    int h = tape.layernorm_rows(x, P.at(lp + "ln1.g"), P.at(lp + "ln1.b"));

    auto lora_proj = [&](const char* which, const std::string& base) {
      int w = P.at(base);
      int dsft = tape.matmul(P.at(sp + which + std::string(".b")),
                             P.at(sp + which + std::string(".a")));
      w = tape.add(w, tape.scale(dsft, static_cast<T>(lscale)));
      int ddpo = tape.matmul(P.at(dp + which + std::string(".b")),
                             P.at(dp + which + std::string(".a")));
      w = tape.add(w, tape.scale(ddpo, static_cast<T>(gamma * lscale)));
      return w;
    };

    int q = tape.matmul(h, lora_proj("q", lp + "attn.wq"));
    int k = tape.matmul(h, P.at(lp + "attn.wk"));
    int v = tape.matmul(h, lora_proj("v", lp + "attn.wv"));

    std::vector<int> heads;
    for (int hh = 0; hh < cfg.num_heads; ++hh) {
      int64_t c0 = hh * hd, c1 = (hh + 1) * hd;
      int qh = tape.slice_cols(q, c0, c1);
      int kh = tape.slice_cols(k, c0, c1);
      int vh = tape.slice_cols(v, c0, c1);
      // scores = (qh kh^T) / sqrt(hd) + mask
      int scores = tape.add_const(tape.scale(tape.matmul_nt(qh, kh), att_scale), mask);
      int att = tape.softmax_rows(scores);
      heads.push_back(tape.matmul(att, vh));
    }
    int attn_out = tape.matmul(tape.concat_cols(heads), P.at(lp + "attn.wo"));
    x = tape.add(x, attn_out);

    int m = tape.layernorm_rows(x, P.at(lp + "ln2.g"), P.at(lp + "ln2.b"));
    m = tape.add(tape.matmul(m, P.at(lp + "mlp.w1")), P.at(lp + "mlp.b1"));
    m = tape.relu(m);
    m = tape.add(tape.matmul(m, P.at(lp + "mlp.w2")), P.at(lp + "mlp.b2"));
    x = tape.add(x, m);
  }

  x = tape.layernorm_rows(x, P.at("backbone.lnf.g"), P.at("backbone.lnf.b"));
  return tape.matmul(x, P.at("backbone.head"));
}

// Row index of the first prediction row (the anchor SEP) for an example.
inline int64_t first_pred_row(const EncodedExample& ex) {
  return ex.prefix_len() + ex.feature_len();
}

// Scalar node: log pi(target | prefix, features) summed over target tokens
// (the target must end with EOS).
template <class T>
int build_sequence_log_prob(TapeT<T>& tape, const TapeParams<T>& P,
                            const ModelConfig& cfg, const EncodedExample& ex,
                            float gamma) {
  check(!ex.target.empty() && ex.target.back() == cfg.eos_token,
        "sequence_log_prob: target must end with EOS");
  const int64_t n = static_cast<int64_t>(ex.target.size());
  int logits = build_logits(tape, P, cfg, ex, gamma, n - 1);
  int pred = tape.slice_rows(logits, first_pred_row(ex), first_pred_row(ex) + n);
  return tape.sequence_log_prob(pred, ex.target);
}

}  // namespace ctxbias
