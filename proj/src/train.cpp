#include "ctxbias/train.hpp"

#include <algorithm>
#include <cmath>

#include "ctxbias/tape.hpp"
#include "ctxbias/wer.hpp"

namespace ctxbias {

const char* to_string(Stage s) {
  switch (s) {
    case Stage::kStage0: return "0";
    case Stage::kStage1: return "1";
    case Stage::kStage2: return "2";
    case Stage::kStage3Dpo: return "3-dpo";
    case Stage::kStage3Sft2: return "3-sft2";
  }
  return "?";
}

Stage stage_from_string(const std::string& s) {
  if (s == "0") return Stage::kStage0;
  if (s == "1") return Stage::kStage1;
  if (s == "2") return Stage::kStage2;
  if (s == "3-dpo") return Stage::kStage3Dpo;
  if (s == "3-sft2") return Stage::kStage3Sft2;
  throw std::runtime_error("unknown stage: " + s);
}

namespace {

void extract_grads(const Tape& tape, const TapeParams<float>& P,
                   const PolicyModel& model, TrainableSet trainable,
                   std::map<std::string, Tensor>* grads) {
  for (const auto& [name, node] : P.nodes) {
    if (!is_trainable(name, trainable)) continue;
    const Tensor& g = tape.grad(node);
    if (g.numel() == 0) continue;
    auto it = grads->find(name);
    if (it == grads->end()) {
      (*grads)[name] = g;
    } else {
      for (size_t i = 0; i < g.data.size(); ++i) it->second.data[i] += g.data[i];
    }
  }
  (void)model;
}

std::vector<std::pair<std::string, Tensor*>> trainable_params(PolicyModel& model,
                                                              TrainableSet set) {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& [name, t] : model.params)
    if (is_trainable(name, set)) out.emplace_back(name, &t);
  return out;
}

}  // namespace

double sft_loss(const PolicyModel& model, const std::vector<EncodedExample>& batch,
                TrainableSet trainable, float gamma,
                std::map<std::string, Tensor>* grads) {
  check(!batch.empty(), "sft_loss: empty batch");
  Tape tape;
  TapeParams<float> P = insert_params(tape, model, trainable);
  int acc = -1;
  for (const EncodedExample& ex : batch) {
    int lp = build_sequence_log_prob(tape, P, model.cfg, ex, gamma);
    acc = acc < 0 ? lp : tape.add(acc, lp);
  }
  int loss = tape.scale(acc, -1.0f / static_cast<float>(batch.size()));
  double value = tape.val(loss).data[0];
  check(std::isfinite(value), "sft_loss: non-finite loss");
  if (grads) {
    tape.backward(loss);
    extract_grads(tape, P, model, trainable, grads);
  }
  return value;
}

double dpo_loss(const PolicyModel& policy, const EncodedExample& x_pos,
                const EncodedExample& x_neg, double delta_ref, double beta,
                std::map<std::string, Tensor>* grads, double* delta_theta_out) {
  check(beta > 0.0, "dpo_loss: beta must be > 0");
  Tape tape;
  TapeParams<float> P = insert_params(tape, policy, TrainableSet::kDpoOnly);
  // Policy composition at gamma=1: the DPO adapter at full training strength.
  int lpp = build_sequence_log_prob(tape, P, policy.cfg, x_pos, 1.0f);
  int lpn = build_sequence_log_prob(tape, P, policy.cfg, x_neg, 1.0f);
  int delta_theta = tape.add(lpp, tape.scale(lpn, -1.0f));
  int m = tape.scale(
      tape.add_const(delta_theta, Tensor::scalar(static_cast<float>(-delta_ref))),
      static_cast<float>(beta));
  int loss = tape.scale(tape.log_sigmoid(m), -1.0f);
  // Report the loss in double from the float margin so the zero-margin case
  // is exactly ln 2; gradients still come from the tape's float graph.
  const double md = (double)tape.val(m).data[0];
  double value = md >= 0 ? std::log1p(std::exp(-md)) : -md + std::log1p(std::exp(md));
  check(std::isfinite(value), "dpo_loss: non-finite loss");
  if (delta_theta_out) *delta_theta_out = tape.val(delta_theta).data[0];
  if (grads) {
    tape.backward(loss);
    extract_grads(tape, P, policy, TrainableSet::kDpoOnly, grads);
  }
  return value;
}

double reference_delta(const InferModel& reference, const EncodedExample& x_pos,
                       const EncodedExample& x_neg) {
  return reference.sequence_log_prob(x_pos) - reference.sequence_log_prob(x_neg);
}

EncodedExample encode_pair_inputs(const Vocab& vocab, const PreferencePair& pair,
                                  double sigma, bool positive) {
  ContextWindow w;
  w.n = static_cast<int>(pair.context_entries.size());
  w.entries = pair.context_entries;
  w.source = pair.context_source;
  EncodedExample ex = encode_example(vocab, pair.utt, w, sigma, /*with_target=*/false);
  ex.target = positive ? pair.y_pos : pair.y_neg;
  ex.target.push_back(Vocab::kEos);
  return ex;
}

std::vector<PreferencePair> mine_hard_negatives(const InferModel& model,
                                                const std::vector<Session>& sessions,
                                                int n, double threshold,
                                                ContextSource history_source,
                                                const DecodeConfig& decode,
                                                const Vocab& vocab, double sigma) {
  check(threshold >= 0.0, "mine_hard_negatives: threshold must be >= 0");
  std::vector<PreferencePair> out;
  for (const Session& s : sessions) {
    std::vector<Hypothesis> hyps =
        decode_session(model, s, n, history_source, decode, vocab, sigma);
    // Rebuild the context actually used for each utterance.
    std::vector<std::vector<int>> history;
    for (size_t i = 0; i < s.utts.size(); ++i) {
      const Utterance& u = s.utts[i];
      ContextWindow w = build_context(history, n, u.t, history_source);
      std::vector<int> hyp = hyps[i].transcript();
      WerResult wr = wer(u.ref, hyp);
      if (wr.wer > threshold && hyp != u.ref) {
        PreferencePair p;
        p.session_id = s.id;
        p.t = u.t;
        p.context_entries = w.entries;
        p.context_source = history_source;
        p.y_pos = u.ref;
        p.y_neg = hyp;
        p.wer = wr.wer;
        p.utt = u;
        out.push_back(std::move(p));
      }
      switch (history_source) {
        case ContextSource::kOracle: history.push_back(u.ref); break;
        case ContextSource::kPredicted: history.push_back(hyps[i].transcript()); break;
        case ContextSource::kTeacher: history.push_back(u.teacher_hyp); break;
        default: check(false, "mine_hard_negatives: bad history source");
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const PreferencePair& a, const PreferencePair& b) {
    return a.session_id != b.session_id ? a.session_id < b.session_id : a.t < b.t;
  });
  return out;
}

TrainResult train_stage(const TrainConfig& config, const Corpus& corpus,
                        const std::vector<PreferencePair>& pairs, PolicyModel init,
                        const Vocab& vocab) {
  config.validate();
  TrainResult result{std::move(init), {}};
  PolicyModel& model = result.model;
  Rng root(config.seed);

  TrainableSet trainable = TrainableSet::kProjector;
  switch (config.stage) {
    case Stage::kStage0: trainable = TrainableSet::kBackbone; break;
    case Stage::kStage1: trainable = TrainableSet::kProjector; break;
    case Stage::kStage2: trainable = TrainableSet::kProjectorAndSft; break;
    case Stage::kStage3Dpo:
    case Stage::kStage3Sft2: trainable = TrainableSet::kDpoOnly; break;
  }

  AdamConfig acfg;
  acfg.lr = config.lr;
  acfg.warmup_steps = config.warmup_steps;
  acfg.total_steps = config.max_steps;
  Adam opt(acfg);
  auto params = trainable_params(model, trainable);
  const double sigma = corpus.channel.sigma;

  if (config.stage == Stage::kStage3Dpo || config.stage == Stage::kStage3Sft2) {
    if (pairs.empty()) return result;  // flagged upstream; nothing to refine

    if (config.stage == Stage::kStage3Sft2)
      model.reset_adapter("dpo", root.split("sft2_adapter").seed());

    // Reference policy: the frozen init checkpoint (its DPO slot is zero),
    // so the SFT-only composition. Delta_r is constant during the stage.
    std::vector<double> delta_refs;
    if (config.stage == Stage::kStage3Dpo) {
      InferModel reference(model, 0.0f);
      delta_refs.reserve(pairs.size());
      for (const PreferencePair& p : pairs)
        delta_refs.push_back(reference_delta(reference,
                                             encode_pair_inputs(vocab, p, sigma, true),
                                             encode_pair_inputs(vocab, p, sigma, false)));
    }

    std::vector<size_t> order(pairs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    size_t cursor = order.size();  // forces a shuffle on first use
    uint64_t epoch = 0;
    auto next_pair = [&]() -> size_t {
      if (cursor >= order.size()) {
        Rng r = root.split("order", epoch++);
        for (size_t i = order.size(); i > 1; --i)
          std::swap(order[i - 1], order[r.next_below(i)]);
        cursor = 0;
      }
      return order[cursor++];
    };

    for (int step = 0; step < config.max_steps; ++step) {
      std::map<std::string, Tensor> grads;
      double loss_sum = 0.0;
      if (config.stage == Stage::kStage3Dpo) {
        // Sum of per-pair losses over grad_accum micro-batches.
        for (int mb = 0; mb < config.grad_accum; ++mb) {
          for (int i = 0; i < config.micro_batch; ++i) {
            size_t pi = next_pair();
            loss_sum += dpo_loss(model, encode_pair_inputs(vocab, pairs[pi], sigma, true),
                                 encode_pair_inputs(vocab, pairs[pi], sigma, false),
                                 delta_refs[pi], config.beta, &grads);
          }
        }
      } else {
        std::vector<EncodedExample> batch;
        for (int i = 0; i < config.batch_size; ++i)
          batch.push_back(encode_pair_inputs(vocab, pairs[next_pair()], sigma, true));
        loss_sum = sft_loss(model, batch, trainable, 1.0f, &grads);
      }
      opt.step(params, grads);
      result.log.push_back({step, loss_sum});
    }
    return result;
  }

  // Stages 0-2: sampled utterance batches from the training corpus.
  check(!corpus.sessions.empty(), "train_stage: empty corpus");
  for (int step = 0; step < config.max_steps; ++step) {
    Rng brng = root.split("batch", static_cast<uint64_t>(step));
    std::vector<EncodedExample> batch;
    for (int i = 0; i < config.batch_size; ++i) {
      const Session& s = corpus.sessions[brng.next_below(corpus.sessions.size())];
      const size_t ui = brng.next_below(s.utts.size());
      const Utterance& u = s.utts[ui];
      if (config.stage == Stage::kStage0) {
        batch.push_back(encode_lm_example(u.ref));
        continue;
      }
      ContextWindow w;
      if (config.stage == Stage::kStage2 && config.n > 0) {
        std::vector<std::vector<int>> history;
        for (size_t j = 0; j < ui; ++j) {
          const Utterance& prev = s.utts[j];
          if (config.history_source == ContextSource::kTeacher) {
            check(prev.has_teacher, "train_stage: teacher hypothesis missing");
            history.push_back(prev.teacher_hyp);
          } else {
            history.push_back(prev.ref);
          }
        }
        w = build_context(history, config.n, u.t, config.history_source);
        w = apply_context_dropout(w, config.p_drop, brng);
      }
      batch.push_back(encode_example(vocab, u, w, sigma, /*with_target=*/true));
    }
    std::map<std::string, Tensor> grads;
    double loss = sft_loss(model, batch, trainable, 1.0f, &grads);
    opt.step(params, grads);
    result.log.push_back({step, loss});
  }
  return result;
}

}  // namespace ctxbias
