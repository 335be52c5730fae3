#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ctxbias/adam.hpp"
#include "ctxbias/beam.hpp"
#include "ctxbias/context.hpp"
#include "ctxbias/corpus.hpp"
#include "ctxbias/encode.hpp"
#include "ctxbias/infer.hpp"
#include "ctxbias/model.hpp"

namespace ctxbias {

enum class Stage { kStage0, kStage1, kStage2, kStage3Dpo, kStage3Sft2 };

const char* to_string(Stage s);
Stage stage_from_string(const std::string& s);

struct TrainConfig {
  Stage stage = Stage::kStage2;
  ContextSource history_source = ContextSource::kTeacher;  // oracle | teacher
  double p_drop = 0.5;
  int n = 2;
  int batch_size = 16;
  int micro_batch = 2;   // DPO micro-batch size
  int grad_accum = 16;   // DPO micro-batches per optimizer step
  double lr = 1e-3;
  int warmup_steps = 100;
  double beta = 0.1;  // DPO temperature
  int max_steps = 600;
  uint64_t seed = 1;

  void validate() const {
    check(p_drop >= 0.0 && p_drop <= 1.0, "train config: p_drop must be in [0,1]");
    check(beta > 0.0, "train config: beta must be > 0");
    check(batch_size >= 1 && micro_batch >= 1 && grad_accum >= 1 && max_steps >= 0,
          "train config: bad batch/step sizes");
    check(n >= 0, "train config: N must be >= 0");
    check(history_source == ContextSource::kOracle ||
              history_source == ContextSource::kTeacher,
          "train config: training history source must be oracle or teacher");
  }
};

struct PreferencePair {
  int64_t session_id = 0;
  int t = 0;
  std::vector<std::vector<int>> context_entries;
  ContextSource context_source = ContextSource::kTeacher;
  std::vector<int> y_pos;  // reference
  std::vector<int> y_neg;  // model hypothesis
  double wer = 0.0;        // per-utterance WER of y_neg, percent
  Utterance utt;           // carries observations for input reconstruction
};

struct TrainLogEntry {
  int step = 0;
  double loss = 0.0;
};

struct TrainResult {
  PolicyModel model;
  std::vector<TrainLogEntry> log;
};

// Mean over the batch of -log pi(Y | X, C, P); contexts must already have
// dropout applied. Returns the loss value; fills `grads` for the trainable
// set when non-null. Throws on non-finite loss.
double sft_loss(const PolicyModel& model, const std::vector<EncodedExample>& batch,
                TrainableSet trainable, float gamma,
                std::map<std::string, Tensor>* grads);

// Single-pair DPO loss -log sigma(beta * (delta_theta - delta_ref)). The
// policy is the model with its DPO adapter applied at gamma=1; delta_ref is
// the frozen reference log-likelihood gap, precomputed once per pair.
// Gradients flow only into the DPO adapter.
double dpo_loss(const PolicyModel& policy, const EncodedExample& x_pos,
                const EncodedExample& x_neg, double delta_ref, double beta,
                std::map<std::string, Tensor>* grads, double* delta_theta_out = nullptr);

// Reference log-likelihood gap log pi_r(Y+|X) - log pi_r(Y-|X) under the
// frozen stage-2 checkpoint (SFT-only composition).
double reference_delta(const InferModel& reference, const EncodedExample& x_pos,
                       const EncodedExample& x_neg);

// Decodes sessions with the given history source and keeps utterances whose
// per-utterance WER strictly exceeds `threshold` (percent) and whose
// hypothesis differs from the reference. Output is sorted by (session, t).
std::vector<PreferencePair> mine_hard_negatives(const InferModel& model,
                                                const std::vector<Session>& sessions,
                                                int n, double threshold,
                                                ContextSource history_source,
                                                const DecodeConfig& decode,
                                                const Vocab& vocab, double sigma);

// Encodes a preference pair's shared inputs; `positive` picks Y+ vs Y-.
EncodedExample encode_pair_inputs(const Vocab& vocab, const PreferencePair& pair,
                                  double sigma, bool positive);

// Runs one stage of the protocol. Stage 0 pretrains the backbone (pass a
// freshly created model); stage 1 trains the projector; stage 2 the
// projector + SFT adapter; stage 3 variants train only the DPO-slot adapter
// starting from a stage-2 checkpoint. Deterministic given config.seed.
TrainResult train_stage(const TrainConfig& config, const Corpus& corpus,
                        const std::vector<PreferencePair>& pairs, PolicyModel init,
                        const Vocab& vocab);

}  // namespace ctxbias
