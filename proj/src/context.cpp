#include "ctxbias/context.hpp"

#include <algorithm>

namespace ctxbias {

const char* to_string(ContextSource s) {
  switch (s) {
    case ContextSource::kOracle: return "oracle";
    case ContextSource::kPredicted: return "predicted";
    case ContextSource::kTeacher: return "teacher";
    case ContextSource::kAttack: return "attack";
    case ContextSource::kEmpty: return "empty";
  }
  return "?";
}

ContextSource context_source_from_string(const std::string& s) {
  if (s == "oracle") return ContextSource::kOracle;
  if (s == "predicted") return ContextSource::kPredicted;
  if (s == "teacher") return ContextSource::kTeacher;
  if (s == "attack") return ContextSource::kAttack;
  if (s == "empty") return ContextSource::kEmpty;
  throw std::runtime_error("unknown context source: " + s);
}

ContextWindow build_context(const std::vector<std::vector<int>>& history, int n, int t,
                            ContextSource source) {
  check(n >= 0, "build_context: N must be >= 0");
  check(static_cast<int>(history.size()) == t - 1,
        "build_context: history must hold exactly t-1 transcripts");
  ContextWindow w;
  w.n = n;
  w.source = n == 0 ? ContextSource::kEmpty : source;
  const int take = std::min(n, t - 1);
  for (int i = t - 1 - take; i < t - 1; ++i) w.entries.push_back(history[static_cast<size_t>(i)]);
  return w;
}

ContextWindow apply_context_dropout(const ContextWindow& window, double p_drop, Rng& rng) {
  check(p_drop >= 0.0 && p_drop <= 1.0, "context dropout: p_drop must be in [0,1]");
  if (rng.next_bernoulli(p_drop)) {
    ContextWindow empty;
    empty.n = window.n;
    empty.source = ContextSource::kEmpty;
    return empty;
  }
  return window;
}

std::vector<ContextWindow> attack_context(const Session& session,
                                          const std::vector<Session>& pool, int n,
                                          uint64_t seed) {
  std::vector<const Session*> others;
  for (const Session& s : pool)
    if (s.id != session.id) others.push_back(&s);
  check(!others.empty(), "attack_context: pool must contain a session other than the target");
  Rng rng(seed);
  std::vector<ContextWindow> out;
  for (const Utterance& u : session.utts) {
    (void)u;
    ContextWindow w;
    w.n = n;
    w.source = n == 0 ? ContextSource::kEmpty : ContextSource::kAttack;
    for (int k = 0; k < n; ++k) {
      const Session* src = others[rng.next_below(others.size())];
      const Utterance& pick = src->utts[rng.next_below(src->utts.size())];
      w.entries.push_back(pick.ref);
    }
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace ctxbias
