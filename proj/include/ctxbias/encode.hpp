#pragma once

#include "ctxbias/context.hpp"
#include "ctxbias/corpus.hpp"
#include "ctxbias/model.hpp"

namespace ctxbias {

// Renders (utterance, context window) into the model's input layout:
//   [PROMPT][context entries joined by SEP][SEP][features][SEP][target]
// The target is the reference plus EOS when `with_target` is set (training /
// scoring); decoding starts from an empty target.
inline EncodedExample encode_example([[maybe_unused]] const Vocab& vocab,
                                     const Utterance& utt,
                                     const ContextWindow& window, double sigma,
                                     bool with_target) {
  EncodedExample ex;
  ex.prefix_tokens.push_back(Vocab::kPrompt);
  for (size_t i = 0; i < window.entries.size(); ++i) {
    if (i > 0) ex.prefix_tokens.push_back(Vocab::kSep);
    for (int tok : window.entries[i]) ex.prefix_tokens.push_back(tok);
  }
  ex.prefix_tokens.push_back(Vocab::kSep);
  ex.obs = utt.obs;
  ex.noise = utt.noise;
  ex.sigma = sigma;
  if (with_target) {
    ex.target = utt.ref;
    ex.target.push_back(Vocab::kEos);
  }
  return ex;
}

// Transcript-only encoding for backbone pretraining: [SEP][target].
inline EncodedExample encode_lm_example(const std::vector<int>& transcript) {
  EncodedExample ex;
  ex.target = transcript;
  ex.target.push_back(Vocab::kEos);
  return ex;
}

}  // namespace ctxbias
