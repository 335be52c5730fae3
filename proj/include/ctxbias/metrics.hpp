#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "ctxbias/beam.hpp"
#include "ctxbias/train.hpp"
#include "ctxbias/wer.hpp"

namespace ctxbias {

struct EvalOptions {
  DecodeConfig decode;
  Vocab vocab;
  double sigma = 0.1;
  uint64_t seed = 1;          // drives attack-window sampling
  std::string corpus = "test";
};

// One report row. `gap` is NaN except on attack rows, where it is
// WER(attacked) - WER(clean predicted) for the matching condition.
struct EvalRow {
  std::string corpus;
  std::string condition;  // "GT" | "hyp" | "teacher" | "Attacks/o" | "Attacks/w" | "Gap"
  std::string source;
  int n = 0;
  float gamma = 0.0f;
  double wer = 0.0;
  double gap = std::numeric_limits<double>::quiet_NaN();
  uint64_t seed = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;

  const EvalRow& row(const std::string& condition) const;
  const EvalRow& row(const std::string& condition, float gamma) const;
};

// Decodes every session once per requested history source and reports corpus
// WER per condition. Labels: oracle -> "GT", predicted -> "hyp", teacher ->
// "teacher". When attack is requested, the predicted decode is also run
// (labeled "Attacks/o"), the attacked decode is "Attacks/w", and a "Gap" row
// carries the difference; a separately requested predicted source is then
// folded into "Attacks/o" rather than duplicated.
EvalReport evaluate(const PolicyModel& model, float gamma,
                    const std::vector<Session>& sessions, int n,
                    const std::vector<ContextSource>& sources, const EvalOptions& opt);

// One evaluate run per gamma with sources {predicted, attack}; rows differ
// only by gamma (identical attack seed across the grid).
EvalReport sweep_gamma(const PolicyModel& model, const std::vector<float>& grid,
                       const std::vector<Session>& sessions, int n,
                       const EvalOptions& opt);

struct ThresholdRun {
  double threshold = 0.0;
  size_t pair_count = 0;
  EvalReport report;  // gamma sweep of the DPO model trained at this threshold
};

// Appendix-style ablation: mines the training sessions once with the given
// history source, filters the pairs at each threshold, trains one DPO stage
// per threshold, and gamma-sweeps each resulting model.
std::vector<ThresholdRun> sweep_threshold(
    const PolicyModel& stage2, const std::vector<double>& thresholds,
    const std::vector<float>& grid, const std::vector<Session>& mine_sessions,
    int mine_n, ContextSource mine_source, const Corpus& train_corpus,
    const TrainConfig& dpo_config, const std::vector<Session>& eval_sessions,
    int eval_n, const EvalOptions& opt);

}  // namespace ctxbias
