#pragma once

#include <string>
#include <vector>

#include "ctxbias/corpus.hpp"
#include "ctxbias/rng.hpp"

namespace ctxbias {

enum class ContextSource { kOracle, kPredicted, kTeacher, kAttack, kEmpty };

const char* to_string(ContextSource s);
ContextSource context_source_from_string(const std::string& s);

// The last-N history transcripts available when decoding utterance t.
struct ContextWindow {
  int n = 0;  // configured window size
  std::vector<std::vector<int>> entries;  // chronological order
  ContextSource source = ContextSource::kEmpty;
};

// history holds exactly t-1 transcripts (those of utterances 1..t-1).
// Returns the last min(N, t-1) of them in chronological order.
ContextWindow build_context(const std::vector<std::vector<int>>& history, int n, int t,
                            ContextSource source);

// With probability p_drop the whole window is replaced by the empty window;
// acoustic inputs are untouched. Identity at p_drop=0.
ContextWindow apply_context_dropout(const ContextWindow& window, double p_drop, Rng& rng);

// Irrelevant-context attack: every utterance's window is replaced by entries
// sampled uniformly from transcripts of OTHER sessions in the pool.
// Deterministic given seed. One window per utterance of the session.
std::vector<ContextWindow> attack_context(const Session& session,
                                          const std::vector<Session>& pool, int n,
                                          uint64_t seed);

}  // namespace ctxbias
