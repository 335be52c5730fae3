#include "ctxbias/corpus.hpp"

#include <algorithm>

namespace ctxbias {

namespace {

Session generate_session(const CorpusConfig& cfg, const ChannelConfig& channel,
                         int64_t session_id, Rng rng) {
  const Vocab& vb = cfg.vocab;
  Session s;
  s.id = session_id;
  s.topic_bits = 0;
  for (int p = 0; p < vb.num_pairs; ++p)
    if (rng.next_bernoulli(0.5)) s.topic_bits |= (1u << p);

  const int T = cfg.t_min + static_cast<int>(rng.next_below(
                                static_cast<uint64_t>(cfg.t_max - cfg.t_min + 1)));
  for (int t = 1; t <= T; ++t) {
    Utterance u;
    u.session_id = session_id;
    u.t = t;
    const int len = cfg.len_min + static_cast<int>(rng.next_below(static_cast<uint64_t>(
                                      cfg.len_max - cfg.len_min + 1)));
    for (int i = 0; i < len; ++i) {
      int tok;
      if (rng.next_bernoulli(channel.topic_density)) {
        int pair = static_cast<int>(rng.next_below(static_cast<uint64_t>(vb.num_pairs)));
        int member = (s.topic_bits >> pair) & 1;
        tok = vb.pair_member(pair, member);
      } else {
        tok = vb.common_begin() +
              static_cast<int>(rng.next_below(static_cast<uint64_t>(vb.num_common())));
      }
      u.ref.push_back(tok);
      int sym = vb.obs_of_token(tok);
      if (vb.is_topic(tok) && rng.next_bernoulli(channel.q))
        sym = vb.ambiguous_symbol(vb.pair_of(tok));
      u.obs.push_back(sym);
      u.noise.push_back(rng.next_u64());
    }
    s.utts.push_back(std::move(u));
  }
  return s;
}

Corpus generate_split(const CorpusConfig& cfg, const ChannelConfig& channel,
                      const std::string& name, int64_t id_base, int count,
                      const Rng& root) {
  Corpus c;
  c.split = name;
  c.channel = channel;
  c.sessions.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    int64_t sid = id_base + i;
    c.sessions.push_back(
        generate_session(cfg, channel, sid, root.split("session", static_cast<uint64_t>(sid))));
  }
  // Canonical ordering by session id.
  std::sort(c.sessions.begin(), c.sessions.end(),
            [](const Session& a, const Session& b) { return a.id < b.id; });
  return c;
}

}  // namespace

CorpusSet generate_corpus(const CorpusConfig& config, uint64_t seed) {
  config.validate();
  Rng root(seed);
  CorpusSet out;
  out.train = generate_split(config, config.channel, "train", 0, config.train_sessions,
                             root.split("train"));
  out.dev = generate_split(config, config.channel, "dev", 1'000'000, config.dev_sessions,
                           root.split("dev"));
  out.test = generate_split(config, config.channel, "test", 2'000'000, config.test_sessions,
                            root.split("test"));
  out.ood = generate_split(config, config.ood_channel(), "ood", 3'000'000,
                           config.ood_sessions, root.split("ood"));
  attach_teacher_hypotheses(out.train, config.vocab, config.teacher_epsilon,
                            root.split("teacher_train").seed());
  attach_teacher_hypotheses(out.dev, config.vocab, config.teacher_epsilon,
                            root.split("teacher_dev").seed());
  attach_teacher_hypotheses(out.test, config.vocab, config.teacher_epsilon,
                            root.split("teacher_test").seed());
  attach_teacher_hypotheses(out.ood, config.vocab, config.teacher_epsilon,
                            root.split("teacher_ood").seed());
  return out;
}

std::vector<int> teacher_decode(const Utterance& utt, const Vocab& vocab,
                                double epsilon, uint64_t seed) {
  check(epsilon >= 0.0 && epsilon <= 1.0, "teacher_decode: epsilon must be in [0,1]");
  check(utt.obs.size() == utt.ref.size(), "teacher_decode: obs/ref length mismatch");
  Rng rng(seed);
  std::vector<int> hyp = utt.ref;
  for (size_t i = 0; i < hyp.size(); ++i) {
    if (vocab.is_ambiguous_symbol(utt.obs[i]) && rng.next_bernoulli(epsilon))
      hyp[i] = vocab.partner(hyp[i]);
  }
  return hyp;
}

void attach_teacher_hypotheses(Corpus& corpus, const Vocab& vocab, double epsilon,
                               uint64_t seed) {
  Rng root(seed);
  for (Session& s : corpus.sessions) {
    for (Utterance& u : s.utts) {
      Rng r = root.split("utt", static_cast<uint64_t>(s.id) * 1000 +
                                    static_cast<uint64_t>(u.t));
      u.teacher_hyp = teacher_decode(u, vocab, epsilon, r.seed());
      u.has_teacher = true;
    }
  }
}

}  // namespace ctxbias
