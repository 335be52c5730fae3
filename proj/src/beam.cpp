#include "ctxbias/beam.hpp"

#include <algorithm>

#include "ctxbias/encode.hpp"

namespace ctxbias {

namespace {

struct Cand {
  std::vector<int> tokens;
  double score;
  bool truncated;
};

// Ordering used everywhere: higher score first, then lexicographically
// smallest token sequence.
bool better(const Cand& a, const Cand& b, bool length_norm) {
  double sa = a.score, sb = b.score;
  if (length_norm) {
    sa /= std::max<size_t>(1, a.tokens.size());
    sb /= std::max<size_t>(1, b.tokens.size());
  }
  if (sa != sb) return sa > sb;
  return a.tokens < b.tokens;
}

}  // namespace

Hypothesis beam_search(const StepScorer& scorer, int vocab_size, int eos_token,
                       const DecodeConfig& config) {
  config.validate();
  std::vector<Cand> alive{{{}, 0.0, false}};
  Cand best_finished;
  bool have_finished = false;
  auto offer_finished = [&](Cand c) {
    if (!have_finished || better(c, best_finished, config.length_norm)) {
      best_finished = std::move(c);
      have_finished = true;
    }
  };

  for (int step = 0; step < config.max_len && !alive.empty(); ++step) {
    std::vector<Cand> expanded;
    expanded.reserve(alive.size() * static_cast<size_t>(vocab_size));
    for (const Cand& c : alive) {
      std::vector<double> lp = scorer(c.tokens);
      check(static_cast<int>(lp.size()) == vocab_size,
            "beam_search: scorer returned wrong vocab size");
      for (int tok = 0; tok < vocab_size; ++tok) {
        Cand nc;
        nc.tokens = c.tokens;
        nc.tokens.push_back(tok);
        nc.score = c.score + lp[static_cast<size_t>(tok)];
        nc.truncated = false;
        if (tok == eos_token) {
          offer_finished(std::move(nc));
        } else if (step + 1 == config.max_len) {
          nc.truncated = true;
          offer_finished(std::move(nc));
        } else {
          expanded.push_back(std::move(nc));
        }
      }
    }
    std::sort(expanded.begin(), expanded.end(), [&](const Cand& a, const Cand& b) {
      return better(a, b, config.length_norm);
    });
    if (static_cast<int>(expanded.size()) > config.beam_width)
      expanded.resize(static_cast<size_t>(config.beam_width));
    alive = std::move(expanded);
  }

  check(have_finished, "beam_search: no hypothesis produced");
  Hypothesis h;
  h.tokens = std::move(best_finished.tokens);
  h.score = best_finished.score;
  h.truncated = best_finished.truncated;
  return h;
}

Hypothesis beam_search(const InferModel& model, const EncodedExample& inputs,
                       const DecodeConfig& config) {
  StepScorer scorer = [&](const std::vector<int>& prefix) {
    return model.next_token_log_probs(inputs, prefix);
  };
  return beam_search(scorer, model.config().vocab_size, model.config().eos_token, config);
}

std::vector<Hypothesis> decode_session(const InferModel& model, const Session& session,
                                       int n, ContextSource source,
                                       const DecodeConfig& config, const Vocab& vocab,
                                       double sigma) {
  check(source == ContextSource::kOracle || source == ContextSource::kPredicted ||
            source == ContextSource::kTeacher,
        "decode_session: source must be oracle, predicted, or teacher");
  std::vector<Hypothesis> out;
  std::vector<std::vector<int>> history;
  for (const Utterance& u : session.utts) {
    ContextWindow w = build_context(history, n, u.t, source);
    EncodedExample ex = encode_example(vocab, u, w, sigma, /*with_target=*/false);
    Hypothesis h = beam_search(model, ex, config);
    switch (source) {
      case ContextSource::kOracle:
        history.push_back(u.ref);
        break;
      case ContextSource::kPredicted:
        history.push_back(h.transcript());
        break;
      case ContextSource::kTeacher:
        check(u.has_teacher, "decode_session: teacher hypothesis missing for session " +
                                 std::to_string(session.id) + " utterance " +
                                 std::to_string(u.t));
        history.push_back(u.teacher_hyp);
        break;
      default:
        break;
    }
    out.push_back(std::move(h));
  }
  return out;
}

std::vector<Hypothesis> decode_session_with_windows(
    const InferModel& model, const Session& session,
    const std::vector<ContextWindow>& windows, const DecodeConfig& config,
    const Vocab& vocab, double sigma) {
  check(windows.size() == session.utts.size(),
        "decode_session_with_windows: one window per utterance required");
  std::vector<Hypothesis> out;
  for (size_t i = 0; i < session.utts.size(); ++i) {
    EncodedExample ex =
        encode_example(vocab, session.utts[i], windows[i], sigma, /*with_target=*/false);
    out.push_back(beam_search(model, ex, config));
  }
  return out;
}

}  // namespace ctxbias
