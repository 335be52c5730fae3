#pragma once

#include <vector>

#include "ctxbias/model.hpp"

namespace ctxbias {

// Inference-time model with the LoRA composition materialized once
// (W = W_base + (alpha/r) dW_sft + gamma (alpha/r) dW_dpo). Immutable after
// construction, so it may be shared read-only across decoding workers.
// The arithmetic mirrors the tape engine op for op.
class InferModel {
 public:
  InferModel(const PolicyModel& model, float gamma);

  const ModelConfig& config() const { return cfg_; }
  float gamma() const { return gamma_; }

  // Per-position logits over the vocab with `fed_targets` target tokens fed
  // after the anchor SEP. Throws on overlong input.
  Tensor forward_logits(const EncodedExample& ex, int64_t fed_targets) const;

  // Log-softmax over the vocab at the last row, given a partial target.
  std::vector<double> next_token_log_probs(const EncodedExample& ex,
                                           const std::vector<int>& partial) const;

  // log pi(target | inputs), summed over target tokens. Target must end
  // with EOS.
  double sequence_log_prob(const EncodedExample& ex) const;

 private:
  struct Layer {
    Tensor wq, wk, wv, wo;
    Tensor ln1g, ln1b, ln2g, ln2b;
    Tensor w1, b1, w2, b2;
  };

  ModelConfig cfg_;
  float gamma_ = 1.0f;
  Tensor featurizer_, tok_embed_, pos_embed_, lnfg_, lnfb_, head_;
  Tensor pw1_, pb1_, pw2_, pb2_;
  std::vector<Layer> layers_;
};

}  // namespace ctxbias
