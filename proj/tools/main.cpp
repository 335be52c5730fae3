// Command-line driver: gen-data / train / mine / eval.
//
// Every command is a pure function of (config file, input files, seed) and
// writes its outputs atomically, so reruns are byte-identical.
//
// Exit codes: 0 success, 1 usage/config error, 2 precondition violation,
// 3 warning (empty result set).

#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ctxbias/checkpoint.hpp"
#include "ctxbias/metrics.hpp"
#include "ctxbias/records.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ctxbias;

namespace {

constexpr int kOk = 0;
constexpr int kUsageError = 1;
constexpr int kPreconditionError = 2;
constexpr int kWarningEmpty = 3;

struct PreconditionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f.good()) throw std::runtime_error("cannot open config: " + path);
  return json::parse(f);
}

void require_writable(const std::string& path, bool force) {
  if (fs::exists(path) && !force)
    throw PreconditionError("output exists (use --force to overwrite): " + path);
  fs::path dir = fs::path(path).parent_path();
  if (!dir.empty()) fs::create_directories(dir);
}

CorpusConfig corpus_config_from(const json& j) {
  CorpusConfig c;
  c.train_sessions = j.value("train_sessions", c.train_sessions);
  c.dev_sessions = j.value("dev_sessions", c.dev_sessions);
  c.test_sessions = j.value("test_sessions", c.test_sessions);
  c.ood_sessions = j.value("ood_sessions", c.ood_sessions);
  c.t_min = j.value("t_min", c.t_min);
  c.t_max = j.value("t_max", c.t_max);
  c.len_min = j.value("len_min", c.len_min);
  c.len_max = j.value("len_max", c.len_max);
  c.channel.q = j.value("q", c.channel.q);
  c.channel.sigma = j.value("sigma", c.channel.sigma);
  c.channel.topic_density = j.value("topic_density", c.channel.topic_density);
  c.teacher_epsilon = j.value("teacher_epsilon", c.teacher_epsilon);
  c.ood_q_shift = j.value("ood_q_shift", c.ood_q_shift);
  c.ood_sigma_scale = j.value("ood_sigma_scale", c.ood_sigma_scale);
  c.validate();
  return c;
}

ModelConfig model_config_from(const json& j) {
  ModelConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.model_dim = j.value("model_dim", c.model_dim);
  c.num_layers = j.value("num_layers", c.num_layers);
  c.num_heads = j.value("num_heads", c.num_heads);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  c.num_obs_symbols = j.value("num_obs_symbols", c.num_obs_symbols);
  c.lora_rank = j.value("lora_rank", c.lora_rank);
  c.lora_alpha = j.value("lora_alpha", c.lora_alpha);
  c.anchor_position = j.value("anchor_position", c.anchor_position);
  c.feature_slots = j.value("feature_slots", c.feature_slots);
  c.validate();
  return c;
}

TrainConfig train_config_from(const json& j, uint64_t seed) {
  TrainConfig c;
  c.stage = stage_from_string(j.value("stage", std::string("2")));
  c.history_source =
      context_source_from_string(j.value("history_source", std::string("teacher")));
  c.p_drop = j.value("p_drop", c.p_drop);
  c.n = j.value("n", c.n);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.micro_batch = j.value("micro_batch", c.micro_batch);
  c.grad_accum = j.value("grad_accum", c.grad_accum);
  c.lr = j.value("lr", c.lr);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.beta = j.value("beta", c.beta);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.seed = seed;
  c.validate();
  return c;
}

DecodeConfig decode_config_from(const json& j) {
  DecodeConfig c;
  c.beam_width = j.value("beam_width", c.beam_width);
  c.max_len = j.value("max_len", c.max_len);
  c.length_norm = j.value("length_norm", c.length_norm);
  c.validate();
  return c;
}

// The stage tag an init checkpoint must carry to start `stage`.
std::string required_init_stage(Stage stage) {
  switch (stage) {
    case Stage::kStage1: return "0";
    case Stage::kStage2: return "1";
    case Stage::kStage3Dpo:
    case Stage::kStage3Sft2: return "2";
    default: return "";
  }
}

int cmd_gen_data(const json& cfg, uint64_t seed, const std::string& out, bool force) {
  CorpusConfig config = corpus_config_from(cfg);
  const uint64_t config_hash = hash_json(cfg);
  fs::create_directories(out);
  for (const char* split : {"train", "dev", "test", "ood"})
    if (fs::exists(fs::path(out) / (std::string(split) + ".jsonl")) && !force)
      throw PreconditionError("output exists (use --force to overwrite): " +
                              (fs::path(out) / (std::string(split) + ".jsonl")).string());
  CorpusSet set = generate_corpus(config, seed);
  write_corpus((fs::path(out) / "train.jsonl").string(), set.train, config_hash, seed);
  write_corpus((fs::path(out) / "dev.jsonl").string(), set.dev, config_hash, seed);
  write_corpus((fs::path(out) / "test.jsonl").string(), set.test, config_hash, seed);
  write_corpus((fs::path(out) / "ood.jsonl").string(), set.ood, config_hash, seed);
  std::cout << "wrote 4 corpus files to " << out << "\n";
  return kOk;
}

int cmd_train(const json& cfg, uint64_t seed, const std::string& out, bool force) {
  require_writable(out, force);
  TrainConfig config = train_config_from(cfg, seed);
  const uint64_t config_hash = hash_json(cfg);
  Corpus corpus = read_corpus(cfg.at("corpus").get<std::string>());
  Vocab vocab;

  PolicyModel init;
  if (config.stage == Stage::kStage0) {
    init = PolicyModel::create(model_config_from(cfg.value("model", json::object())),
                               Rng(seed).split("model_init").seed());
  } else {
    if (!cfg.contains("init"))
      throw PreconditionError("stage " + std::string(to_string(config.stage)) +
                              " requires an init checkpoint");
    Checkpoint ckpt = Checkpoint::load(cfg.at("init").get<std::string>());
    const std::string want = required_init_stage(config.stage);
    if (ckpt.meta("stage") != want)
      throw PreconditionError("stage " + std::string(to_string(config.stage)) +
                              " requires a stage-" + want + " init, got stage-" +
                              ckpt.meta("stage"));
    init = model_from_checkpoint(ckpt);
  }

  std::vector<PreferencePair> pairs;
  if (config.stage == Stage::kStage3Dpo || config.stage == Stage::kStage3Sft2) {
    if (!cfg.contains("pairs"))
      throw PreconditionError("stage 3 requires a mined preference-pair file");
    pairs = read_pairs(cfg.at("pairs").get<std::string>());
    if (pairs.empty())
      std::cerr << "warning: empty preference-pair set; model is unchanged\n";
  }

  TrainResult result = train_stage(config, corpus, pairs, std::move(init), vocab);
  Checkpoint ckpt = make_checkpoint(result.model, to_string(config.stage), config_hash,
                                    seed, config.max_steps);
  ckpt.save(out);

  std::vector<json> log;
  log.push_back({{"type", "header"},
                 {"stage", to_string(config.stage)},
                 {"config_hash", config_hash},
                 {"seed", seed}});
  for (const TrainLogEntry& e : result.log)
    log.push_back({{"type", "step"}, {"step", e.step}, {"loss", e.loss}});
  write_jsonl_atomic(out + ".log.jsonl", log);
  std::cout << "wrote checkpoint " << out << " (" << result.log.size() << " steps)\n";
  return kOk;
}

int cmd_mine(const json& cfg, uint64_t seed, const std::string& out, bool force) {
  require_writable(out, force);
  const uint64_t config_hash = hash_json(cfg);
  Checkpoint ckpt = Checkpoint::load(cfg.at("checkpoint").get<std::string>());
  if (ckpt.meta("stage") != "2")
    throw PreconditionError("mining requires a stage-2 checkpoint, got stage-" +
                            ckpt.meta("stage"));
  PolicyModel model = model_from_checkpoint(ckpt);
  Corpus corpus = read_corpus(cfg.at("corpus").get<std::string>());
  const double threshold = cfg.value("threshold", 20.0);
  const int n = cfg.value("n", 2);
  ContextSource source =
      context_source_from_string(cfg.value("history_source", std::string("teacher")));
  DecodeConfig decode = decode_config_from(cfg.value("decode", json::object()));
  Vocab vocab;

  InferModel infer(model, 0.0f);
  std::vector<PreferencePair> pairs = mine_hard_negatives(
      infer, corpus.sessions, n, threshold, source, decode, vocab, corpus.channel.sigma);
  write_pairs(out, pairs, threshold, source, n, config_hash, seed);
  std::cout << "mined " << pairs.size() << " pairs at threshold " << threshold << "\n";
  if (pairs.empty()) {
    std::cerr << "warning: no utterance exceeded the mining threshold\n";
    return kWarningEmpty;
  }
  return kOk;
}

json row_to_json(const EvalRow& r) {
  json j = {{"type", "row"},     {"corpus", r.corpus}, {"condition", r.condition},
            {"source", r.source}, {"n", r.n},          {"gamma", r.gamma},
            {"wer", r.wer},       {"seed", r.seed}};
  if (!std::isnan(r.gap)) j["gap"] = r.gap;
  return j;
}

int cmd_eval(const json& cfg, uint64_t seed, const std::string& out, bool force) {
  require_writable(out, force);
  const uint64_t config_hash = hash_json(cfg);
  Checkpoint ckpt = Checkpoint::load(cfg.at("checkpoint").get<std::string>());
  PolicyModel model = model_from_checkpoint(ckpt);
  Corpus corpus = read_corpus(cfg.at("corpus").get<std::string>());

  EvalOptions opt;
  opt.decode = decode_config_from(cfg.value("decode", json::object()));
  opt.sigma = corpus.channel.sigma;
  opt.seed = seed;
  opt.corpus = corpus.split;

  const std::string stage = ckpt.meta("stage");
  const bool has_dpo = stage == "3-dpo" || stage == "3-sft2";
  const std::string mode = cfg.value("mode", std::string("evaluate"));

  std::vector<json> lines;
  lines.push_back({{"type", "header"},
                   {"mode", mode},
                   {"stage", stage},
                   {"config_hash", config_hash},
                   {"seed", seed}});
  if (mode == "evaluate") {
    std::vector<int> n_values = cfg.value("n_values", std::vector<int>{2});
    std::vector<ContextSource> sources;
    for (const std::string& s :
         cfg.value("sources", std::vector<std::string>{"oracle", "predicted"}))
      sources.push_back(context_source_from_string(s));
    const float gamma = cfg.value("gamma", 0.0f);
    if (gamma != 0.0f && !has_dpo)
      throw PreconditionError("gamma != 0 requested but checkpoint has no trained "
                              "DPO-slot adapter (stage " + stage + ")");
    for (int n : n_values) {
      EvalReport report = evaluate(model, gamma, corpus.sessions, n, sources, opt);
      for (const EvalRow& r : report.rows) lines.push_back(row_to_json(r));
    }
  } else if (mode == "sweep-gamma") {
    if (!has_dpo)
      throw PreconditionError("gamma sweep requires a stage-3 checkpoint, got stage-" +
                              stage);
    std::vector<float> grid = cfg.value(
        "gamma_grid",
        std::vector<float>{0.0f, 0.0625f, 0.125f, 0.1875f, 0.25f, 0.375f, 0.5f, 0.625f});
    const int n = cfg.value("n", 2);
    EvalReport report = sweep_gamma(model, grid, corpus.sessions, n, opt);
    for (const EvalRow& r : report.rows) lines.push_back(row_to_json(r));
  } else {
    throw std::runtime_error("unknown eval mode: " + mode);
  }
  write_jsonl_atomic(out, lines);
  std::cout << "wrote report " << out << " (" << lines.size() - 1 << " rows)\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context-conditioned recognition lab: data, training, mining, eval"};
  app.require_subcommand(1);

  std::string config_path, out_path;
  uint64_t seed = 0;
  bool force = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file")->required();
    cmd->add_option("--seed", seed, "64-bit run seed")->required();
    cmd->add_option("--out", out_path, "output path")->required();
    cmd->add_flag("--force", force, "overwrite existing outputs");
  };
  add_common(app.add_subcommand("gen-data", "generate the synthetic corpus"));
  add_common(app.add_subcommand("train", "run one training stage"));
  add_common(app.add_subcommand("mine", "mine hard-negative preference pairs"));
  add_common(app.add_subcommand("eval", "evaluate a checkpoint"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? kOk : kUsageError;  // help/version are not errors
  }

  try {
    json cfg = load_config(config_path);
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "gen-data") return cmd_gen_data(cfg, seed, out_path, force);
    if (cmd == "train") return cmd_train(cfg, seed, out_path, force);
    if (cmd == "mine") return cmd_mine(cfg, seed, out_path, force);
    if (cmd == "eval") return cmd_eval(cfg, seed, out_path, force);
    std::cerr << "unknown command\n";
    return kUsageError;
  } catch (const PreconditionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kPreconditionError;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  }
}
