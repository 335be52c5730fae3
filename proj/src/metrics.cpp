#include "ctxbias/metrics.hpp"

#include <algorithm>

namespace ctxbias {

namespace {

double corpus_wer_for(const InferModel& model, const std::vector<Session>& sessions,
                      int n, ContextSource source, const EvalOptions& opt,
                      Rng attack_root) {
  CorpusWer acc;
  for (const Session& s : sessions) {
    std::vector<Hypothesis> hyps;
    if (source == ContextSource::kAttack) {
      std::vector<ContextWindow> windows = attack_context(
          s, sessions, n, attack_root.split("attack", static_cast<uint64_t>(s.id)).seed());
      hyps = decode_session_with_windows(model, s, windows, opt.decode, opt.vocab,
                                         opt.sigma);
    } else {
      hyps = decode_session(model, s, n, source, opt.decode, opt.vocab, opt.sigma);
    }
    for (size_t i = 0; i < s.utts.size(); ++i)
      acc.add(wer(s.utts[i].ref, hyps[i].transcript()));
  }
  return acc.percent();
}

EvalRow make_row(const EvalOptions& opt, std::string condition, std::string source,
                 int n, float gamma, double w) {
  EvalRow row;
  row.corpus = opt.corpus;
  row.condition = std::move(condition);
  row.source = std::move(source);
  row.n = n;
  row.gamma = gamma;
  row.wer = w;
  row.seed = opt.seed;
  return row;
}

}  // namespace

const EvalRow& EvalReport::row(const std::string& condition) const {
  for (const EvalRow& r : rows)
    if (r.condition == condition) return r;
  throw std::runtime_error("eval report: no row with condition " + condition);
}

const EvalRow& EvalReport::row(const std::string& condition, float gamma) const {
  for (const EvalRow& r : rows)
    if (r.condition == condition && r.gamma == gamma) return r;
  throw std::runtime_error("eval report: no row with condition " + condition +
                           " at gamma " + std::to_string(gamma));
}

EvalReport evaluate(const PolicyModel& model, float gamma,
                    const std::vector<Session>& sessions, int n,
                    const std::vector<ContextSource>& sources, const EvalOptions& opt) {
  InferModel infer(model, gamma);
  Rng attack_root = Rng(opt.seed).split("attack_eval");
  const bool with_attack =
      std::find(sources.begin(), sources.end(), ContextSource::kAttack) != sources.end();

  EvalReport report;
  for (ContextSource source : sources) {
    switch (source) {
      case ContextSource::kOracle:
        report.rows.push_back(make_row(opt, "GT", "oracle", n, gamma,
                                       corpus_wer_for(infer, sessions, n, source, opt,
                                                      attack_root)));
        break;
      case ContextSource::kTeacher:
        report.rows.push_back(make_row(opt, "teacher", "teacher", n, gamma,
                                       corpus_wer_for(infer, sessions, n, source, opt,
                                                      attack_root)));
        break;
      case ContextSource::kPredicted:
        if (with_attack) break;  // folded into the Attacks/o row below
        report.rows.push_back(make_row(opt, "hyp", "predicted", n, gamma,
                                       corpus_wer_for(infer, sessions, n, source, opt,
                                                      attack_root)));
        break;
      case ContextSource::kAttack: {
        double clean = corpus_wer_for(infer, sessions, n, ContextSource::kPredicted,
                                      opt, attack_root);
        double attacked =
            corpus_wer_for(infer, sessions, n, ContextSource::kAttack, opt, attack_root);
        report.rows.push_back(make_row(opt, "Attacks/o", "predicted", n, gamma, clean));
        EvalRow w = make_row(opt, "Attacks/w", "attack", n, gamma, attacked);
        w.gap = attacked - clean;
        report.rows.push_back(w);
        EvalRow g = make_row(opt, "Gap", "attack", n, gamma, attacked - clean);
        g.gap = attacked - clean;
        report.rows.push_back(g);
        break;
      }
      case ContextSource::kEmpty:
        report.rows.push_back(make_row(opt, "no-context", "empty", 0, gamma,
                                       corpus_wer_for(infer, sessions, 0,
                                                      ContextSource::kPredicted, opt,
                                                      attack_root)));
        break;
    }
  }
  return report;
}

EvalReport sweep_gamma(const PolicyModel& model, const std::vector<float>& grid,
                       const std::vector<Session>& sessions, int n,
                       const EvalOptions& opt) {
  EvalReport out;
  for (float g : grid) {
    EvalReport r = evaluate(model, g, sessions, n,
                            {ContextSource::kPredicted, ContextSource::kAttack}, opt);
    out.rows.insert(out.rows.end(), r.rows.begin(), r.rows.end());
  }
  return out;
}

std::vector<ThresholdRun> sweep_threshold(
    const PolicyModel& stage2, const std::vector<double>& thresholds,
    const std::vector<float>& grid, const std::vector<Session>& mine_sessions,
    int mine_n, ContextSource mine_source, const Corpus& train_corpus,
    const TrainConfig& dpo_config, const std::vector<Session>& eval_sessions,
    int eval_n, const EvalOptions& opt) {
  // One decode of the mining pool; each threshold filters the same pair set.
  InferModel infer(stage2, 0.0f);
  std::vector<PreferencePair> all =
      mine_hard_negatives(infer, mine_sessions, mine_n, 0.0, mine_source, opt.decode,
                          opt.vocab, opt.sigma);
  std::vector<ThresholdRun> runs;
  for (double th : thresholds) {
    ThresholdRun run;
    run.threshold = th;
    std::vector<PreferencePair> pairs;
    for (const PreferencePair& p : all)
      if (p.wer > th) pairs.push_back(p);
    run.pair_count = pairs.size();
    TrainResult trained =
        train_stage(dpo_config, train_corpus, pairs, stage2, opt.vocab);
    run.report = sweep_gamma(trained.model, grid, eval_sessions, eval_n, opt);
    runs.push_back(std::move(run));
  }
  return runs;
}

}  // namespace ctxbias
