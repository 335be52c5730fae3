#pragma once

#include <functional>
#include <vector>

#include "ctxbias/context.hpp"
#include "ctxbias/corpus.hpp"
#include "ctxbias/infer.hpp"

namespace ctxbias {

struct DecodeConfig {
  int beam_width = 4;
  int max_len = 16;        // maximum generated tokens, including EOS
  bool length_norm = false;  // off by default

  void validate() const {
    check(beam_width >= 1, "decode config: beam width must be >= 1");
    check(max_len >= 1, "decode config: max length must be >= 1");
  }
};

struct Hypothesis {
  std::vector<int> tokens;  // includes the terminal EOS unless truncated
  double score = 0.0;       // total log-probability
  bool truncated = false;   // hit max_len without EOS

  // Transcript form: tokens without the terminal EOS.
  std::vector<int> transcript() const {
    std::vector<int> t = tokens;
    if (!truncated && !t.empty()) t.pop_back();
    return t;
  }
};

// Scores the next token distribution (log-probs over the vocab) for a given
// partial target sequence.
using StepScorer = std::function<std::vector<double>(const std::vector<int>& prefix)>;

// Deterministic beam search. Ties are broken by lexicographically smallest
// token-id sequence at every pruning point and at final selection.
Hypothesis beam_search(const StepScorer& scorer, int vocab_size, int eos_token,
                       const DecodeConfig& config);

// Beam search over the policy model for one encoded utterance.
Hypothesis beam_search(const InferModel& model, const EncodedExample& inputs,
                       const DecodeConfig& config);

// Sequential utterance-level decoding of a session. The context of utterance
// t is built from S_i = Y_i (oracle), the hypotheses produced earlier in this
// same call (predicted), or teacher_hyp_i (teacher).
std::vector<Hypothesis> decode_session(const InferModel& model, const Session& session,
                                       int n, ContextSource source,
                                       const DecodeConfig& config, const Vocab& vocab,
                                       double sigma);

// Decoding with externally supplied windows (one per utterance), used for
// the irrelevant-context attack protocol.
std::vector<Hypothesis> decode_session_with_windows(
    const InferModel& model, const Session& session,
    const std::vector<ContextWindow>& windows, const DecodeConfig& config,
    const Vocab& vocab, double sigma);

}  // namespace ctxbias
