#include <doctest.h>

#include <cmath>
#include <set>

#include "ctxbias/corpus.hpp"

using namespace ctxbias;

namespace {

CorpusConfig small_config() {
  CorpusConfig c;
  c.train_sessions = 60;
  c.dev_sessions = 20;
  c.test_sessions = 20;
  c.ood_sessions = 20;
  return c;
}

bool same_corpus(const Corpus& a, const Corpus& b) {
  if (a.sessions.size() != b.sessions.size()) return false;
  for (size_t i = 0; i < a.sessions.size(); ++i) {
    const Session& x = a.sessions[i];
    const Session& y = b.sessions[i];
    if (x.id != y.id || x.topic_bits != y.topic_bits || x.utts.size() != y.utts.size())
      return false;
    for (size_t j = 0; j < x.utts.size(); ++j) {
      const Utterance& u = x.utts[j];
      const Utterance& v = y.utts[j];
      if (u.obs != v.obs || u.noise != v.noise || u.ref != v.ref ||
          u.teacher_hyp != v.teacher_hyp)
        return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("vocab layout: reserved tokens, pairs, and shared ambiguous symbols") {
  Vocab v;
  v.validate();
  CHECK(v.vocab_size == 64);
  CHECK(Vocab::kPad == 0);
  CHECK(Vocab::kEos == 1);
  CHECK(Vocab::kSep == 2);
  CHECK(Vocab::kPrompt == 3);
  // Pair members are adjacent and partner() is an involution.
  for (int p = 0; p < v.num_pairs; ++p) {
    int a = v.pair_member(p, 0), b = v.pair_member(p, 1);
    CHECK(v.partner(a) == b);
    CHECK(v.partner(b) == a);
    CHECK(v.pair_of(a) == p);
    CHECK(v.pair_of(b) == p);
    // Both members observe the same ambiguous symbol.
    CHECK(v.ambiguous_symbol(p) >= v.vocab_size);
    CHECK(v.ambiguous_symbol(p) < v.num_obs_symbols());
  }
  CHECK(v.num_obs_symbols() == v.vocab_size + v.num_pairs);
}

TEST_CASE("corpus generation is deterministic and splits have disjoint session ids") {
  CorpusConfig cfg = small_config();
  CorpusSet a = generate_corpus(cfg, 11);
  CorpusSet b = generate_corpus(cfg, 11);
  CorpusSet c = generate_corpus(cfg, 12);
  CHECK(same_corpus(a.train, b.train));
  CHECK(same_corpus(a.dev, b.dev));
  CHECK(same_corpus(a.test, b.test));
  CHECK(same_corpus(a.ood, b.ood));
  CHECK(!same_corpus(a.train, c.train));

  std::set<int64_t> ids;
  size_t total = 0;
  for (const Corpus* corpus : {&a.train, &a.dev, &a.test, &a.ood}) {
    for (const Session& s : corpus->sessions) ids.insert(s.id);
    total += corpus->sessions.size();
  }
  CHECK(ids.size() == total);
  CHECK(a.train.sessions.size() == 60);
  CHECK(a.ood.sessions.size() == 20);
}

TEST_CASE("session and transcript sizes respect the configured bounds") {
  CorpusConfig cfg = small_config();
  CorpusSet set = generate_corpus(cfg, 3);
  for (const Session& s : set.train.sessions) {
    CHECK(static_cast<int>(s.utts.size()) >= cfg.t_min);
    CHECK(static_cast<int>(s.utts.size()) <= cfg.t_max);
    for (size_t j = 0; j < s.utts.size(); ++j) {
      const Utterance& u = s.utts[j];
      CHECK(u.t == static_cast<int>(j) + 1);
      CHECK(u.session_id == s.id);
      CHECK(static_cast<int>(u.ref.size()) >= cfg.len_min);
      CHECK(static_cast<int>(u.ref.size()) <= cfg.len_max);
      CHECK(u.obs.size() == u.ref.size());
      CHECK(u.noise.size() == u.ref.size());
      for (int tok : u.ref) {
        CHECK(tok >= 4);  // no reserved tokens in transcripts
        CHECK(tok < cfg.vocab.vocab_size);
      }
    }
  }
}

TEST_CASE("topic tokens emit the shared ambiguous symbol at rate q") {
  CorpusConfig cfg = small_config();
  cfg.train_sessions = 400;
  CorpusSet set = generate_corpus(cfg, 21);
  const Vocab& v = cfg.vocab;
  int64_t topic_tokens = 0, ambiguous = 0;
  for (const Session& s : set.train.sessions)
    for (const Utterance& u : s.utts)
      for (size_t i = 0; i < u.ref.size(); ++i) {
        if (!v.is_topic(u.ref[i])) {
          CHECK(u.obs[i] == u.ref[i]);  // common tokens observe themselves
          continue;
        }
        int pair = v.pair_of(u.ref[i]);
        ++topic_tokens;
        if (u.obs[i] == v.ambiguous_symbol(pair)) {
          ++ambiguous;
        } else {
          CHECK(u.obs[i] == u.ref[i]);
        }
      }
  REQUIRE(topic_tokens > 5000);
  double rate = static_cast<double>(ambiguous) / static_cast<double>(topic_tokens);
  CHECK(std::abs(rate - cfg.channel.q) < 0.02);  // binomial Monte Carlo bound
}

TEST_CASE("topic tokens follow the session's chosen pair members") {
  CorpusConfig cfg = small_config();
  CorpusSet set = generate_corpus(cfg, 31);
  const Vocab& v = cfg.vocab;
  for (const Session& s : set.train.sessions)
    for (const Utterance& u : s.utts)
      for (int tok : u.ref) {
        if (!v.is_topic(tok)) continue;
        int pair = v.pair_of(tok);
        int member = (s.topic_bits >> pair) & 1;
        CHECK(tok == v.pair_member(pair, member));
      }
}

TEST_CASE("teacher flips ambiguously observed topic tokens at rate epsilon") {
  CorpusConfig cfg = small_config();
  cfg.train_sessions = 400;
  CorpusSet set = generate_corpus(cfg, 41);
  const Vocab& v = cfg.vocab;
  int64_t flippable = 0, flipped = 0;
  for (const Session& s : set.train.sessions)
    for (const Utterance& u : s.utts) {
      REQUIRE(u.has_teacher);
      REQUIRE(u.teacher_hyp.size() == u.ref.size());
      for (size_t i = 0; i < u.ref.size(); ++i) {
        bool amb = v.is_topic(u.ref[i]) &&
                   u.obs[i] == v.ambiguous_symbol(v.pair_of(u.ref[i]));
        if (!amb) {
          CHECK(u.teacher_hyp[i] == u.ref[i]);  // unambiguous tokens never flip
          continue;
        }
        ++flippable;
        if (u.teacher_hyp[i] != u.ref[i]) {
          CHECK(u.teacher_hyp[i] == v.partner(u.ref[i]));
          ++flipped;
        }
      }
    }
  REQUIRE(flippable > 2000);
  double rate = static_cast<double>(flipped) / static_cast<double>(flippable);
  CHECK(std::abs(rate - cfg.teacher_epsilon) < 0.02);
}

TEST_CASE("teacher_decode is deterministic per seed") {
  CorpusConfig cfg = small_config();
  CorpusSet set = generate_corpus(cfg, 51);
  const Utterance& u = set.train.sessions[0].utts[0];
  CHECK(teacher_decode(u, cfg.vocab, 0.5, 9) == teacher_decode(u, cfg.vocab, 0.5, 9));
  CHECK(teacher_decode(u, cfg.vocab, 0.0, 9) == u.ref);
}

TEST_CASE("out-of-domain split shifts the channel") {
  CorpusConfig cfg = small_config();
  ChannelConfig ood = cfg.ood_channel();
  CHECK(ood.q == doctest::Approx(cfg.channel.q + cfg.ood_q_shift));
  CHECK(ood.sigma == doctest::Approx(cfg.channel.sigma * cfg.ood_sigma_scale));

  cfg.ood_sessions = 400;
  CorpusSet set = generate_corpus(cfg, 61);
  CHECK(set.ood.channel.q == doctest::Approx(ood.q));
  const Vocab& v = cfg.vocab;
  int64_t topic = 0, amb = 0;
  for (const Session& s : set.ood.sessions)
    for (const Utterance& u : s.utts)
      for (size_t i = 0; i < u.ref.size(); ++i) {
        if (!v.is_topic(u.ref[i])) continue;
        ++topic;
        amb += u.obs[i] == v.ambiguous_symbol(v.pair_of(u.ref[i])) ? 1 : 0;
      }
  double rate = static_cast<double>(amb) / static_cast<double>(topic);
  CHECK(std::abs(rate - ood.q) < 0.02);
}

TEST_CASE("corpus config validation rejects bad parameters") {
  CorpusConfig cfg;
  cfg.teacher_epsilon = 1.5;
  CHECK_THROWS_AS(cfg.validate(), std::runtime_error);
  cfg = CorpusConfig();
  cfg.channel.q = -0.1;
  CHECK_THROWS_AS(cfg.validate(), std::runtime_error);
  cfg = CorpusConfig();
  cfg.t_min = 1;
  CHECK_THROWS_AS(cfg.validate(), std::runtime_error);
}
