#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ctxbias/rng.hpp"
#include "ctxbias/vocab.hpp"

namespace ctxbias {

struct ChannelConfig {
  double q = 0.5;             // chance a topic token emits its shared ambiguous symbol
  double sigma = 0.1;         // feature noise scale
  double topic_density = 0.35;  // per-position chance of a topic token

  void validate() const {
    check(q >= 0.0 && q <= 1.0, "channel: q must be in [0,1]");
    check(sigma >= 0.0, "channel: sigma must be >= 0");
    check(topic_density >= 0.0 && topic_density <= 1.0,
          "channel: topic_density must be in [0,1]");
  }
};

struct CorpusConfig {
  int train_sessions = 2000;
  int dev_sessions = 200;
  int test_sessions = 200;
  int ood_sessions = 200;
  int t_min = 3, t_max = 8;       // utterances per session
  int len_min = 4, len_max = 12;  // transcript length bounds
  ChannelConfig channel;
  double teacher_epsilon = 0.15;
  double ood_q_shift = 0.2;
  double ood_sigma_scale = 1.5;
  Vocab vocab;

  void validate() const {
    channel.validate();
    vocab.validate();
    check(teacher_epsilon >= 0.0 && teacher_epsilon <= 1.0,
          "corpus: teacher_epsilon must be in [0,1]");
    check(t_min >= 2 && t_max >= t_min, "corpus: bad session length bounds");
    check(len_min >= 1 && len_max >= len_min, "corpus: bad transcript length bounds");
    check(train_sessions > 0 && dev_sessions > 0 && test_sessions > 0 && ood_sessions > 0,
          "corpus: split sizes must be positive");
  }

  ChannelConfig ood_channel() const {
    ChannelConfig c = channel;
    c.q = std::min(1.0, c.q + ood_q_shift);
    c.sigma = c.sigma * ood_sigma_scale;
    return c;
  }
};

struct Utterance {
  int64_t session_id = 0;
  int t = 0;  // 1-based index within the session
  std::vector<int> obs;         // observation symbols, one per reference token
  std::vector<uint64_t> noise;  // per-symbol noise stream seeds
  std::vector<int> ref;         // reference transcript (no reserved tokens)
  std::vector<int> teacher_hyp;
  bool has_teacher = false;
};

struct Session {
  int64_t id = 0;
  uint32_t topic_bits = 0;  // chosen member per confusable pair
  std::vector<Utterance> utts;
};

struct Corpus {
  std::string split;  // train | dev | test | ood
  ChannelConfig channel;
  std::vector<Session> sessions;
};

struct CorpusSet {
  Corpus train, dev, test, ood;
};

// Deterministic given (config, seed). Session ids are disjoint across splits.
CorpusSet generate_corpus(const CorpusConfig& config, uint64_t seed);

// Simulated teacher recognizer: copies the reference, flipping each
// ambiguously observed topic token to its confusable partner with
// probability epsilon. Deterministic given seed.
std::vector<int> teacher_decode(const Utterance& utt, const Vocab& vocab,
                                double epsilon, uint64_t seed);

// Runs teacher_decode over every utterance of the corpus and stores the
// hypotheses in place.
void attach_teacher_hypotheses(Corpus& corpus, const Vocab& vocab, double epsilon,
                               uint64_t seed);

}  // namespace ctxbias
