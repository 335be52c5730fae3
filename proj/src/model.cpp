#include "ctxbias/model.hpp"

#include <cmath>

namespace ctxbias {

namespace {

Tensor gaussian(std::vector<int64_t> shape, Rng& rng, double std) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data) v = static_cast<float>(rng.next_gaussian() * std);
  return t;
}

Tensor xavier(int64_t fan_in, int64_t fan_out, Rng& rng) {
  double std = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  return gaussian({fan_in, fan_out}, rng, std);
}

}  // namespace

PolicyModel PolicyModel::create(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  PolicyModel m;
  m.cfg = cfg;
  Rng root(seed);
  const int64_t d = cfg.model_dim;
  const int64_t h = 4 * d;

  {
    Rng r = root.split("featurizer");
    m.params["featurizer.table"] = gaussian({cfg.num_obs_symbols, cfg.feature_dim}, r, 1.0);
  }
  {
    Rng r = root.split("embed");
    m.params["backbone.tok_embed"] = gaussian({cfg.vocab_size, d}, r, 0.02);
    m.params["backbone.pos_embed"] = gaussian({cfg.max_seq_len, d}, r, 0.02);
  }
  for (int i = 0; i < cfg.num_layers; ++i) {
    Rng r = root.split("layer", static_cast<uint64_t>(i));
    const std::string lp = "backbone.l" + std::to_string(i) + ".";
    m.params[lp + "attn.wq"] = xavier(d, d, r);
    m.params[lp + "attn.wk"] = xavier(d, d, r);
    m.params[lp + "attn.wv"] = xavier(d, d, r);
    m.params[lp + "attn.wo"] = xavier(d, d, r);
    m.params[lp + "ln1.g"] = Tensor::full({d}, 1.0f);
    m.params[lp + "ln1.b"] = Tensor::zeros({d});
    m.params[lp + "mlp.w1"] = xavier(d, h, r);
    m.params[lp + "mlp.b1"] = Tensor::zeros({h});
    m.params[lp + "mlp.w2"] = xavier(h, d, r);
    m.params[lp + "mlp.b2"] = Tensor::zeros({d});
    m.params[lp + "ln2.g"] = Tensor::full({d}, 1.0f);
    m.params[lp + "ln2.b"] = Tensor::zeros({d});
  }
  m.params["backbone.lnf.g"] = Tensor::full({d}, 1.0f);
  m.params["backbone.lnf.b"] = Tensor::zeros({d});
  {
    Rng r = root.split("head");
    m.params["backbone.head"] = xavier(d, cfg.vocab_size, r);
  }
  {
    Rng r = root.split("projector");
    m.params["projector.w1"] = xavier(cfg.feature_dim, d, r);
    m.params["projector.b1"] = Tensor::zeros({d});
    m.params["projector.w2"] = xavier(d, d, r);
    m.params["projector.b2"] = Tensor::zeros({d});
  }
  m.reset_adapter("sft", root.split("sft_adapter").seed());
  m.reset_adapter("dpo", root.split("dpo_adapter").seed());
  return m;
}

void PolicyModel::reset_adapter(const std::string& role, uint64_t seed) {
  check(role == "sft" || role == "dpo", "reset_adapter: unknown role " + role);
  Rng root(seed);
  const int64_t d = cfg.model_dim;
  const int64_t r = cfg.lora_rank;
  for (int i = 0; i < cfg.num_layers; ++i) {
    for (const char* which : {"q", "v"}) {
      Rng rr = root.split(which, static_cast<uint64_t>(i));
      const std::string p = role + ".l" + std::to_string(i) + "." + which;
      // B starts at zero so the fresh adapter is a no-op (delta W = B A = 0).
      params[p + ".a"] = gaussian({r, d}, rr, 0.02);
      params[p + ".b"] = Tensor::zeros({d, r});
    }
  }
}

Tensor effective_weight(const Tensor& w_base, const Tensor& dw_sft,
                        const Tensor& dw_dpo, float alpha, float r, float gamma) {
  check(w_base.same_shape(dw_sft) && w_base.same_shape(dw_dpo),
        "effective_weight: shape mismatch " + w_base.shape_str() + ", " +
            dw_sft.shape_str() + ", " + dw_dpo.shape_str());
  check(gamma >= 0.0f, "effective_weight: gamma must be >= 0");
  const float s = alpha / r;
  Tensor w = w_base;
  for (size_t i = 0; i < w.data.size(); ++i)
    w.data[i] = w_base.data[i] + s * dw_sft.data[i] + gamma * s * dw_dpo.data[i];
  return w;
}

Tensor featurize(const Tensor& feat_table, const std::vector<int>& obs,
                 const std::vector<uint64_t>& noise, double sigma) {
  check(obs.size() == noise.size(), "featurize: obs/noise length mismatch");
  const int64_t fd = feat_table.cols();
  Tensor out = Tensor::zeros({static_cast<int64_t>(obs.size()), fd});
  for (size_t i = 0; i < obs.size(); ++i) {
    check(obs[i] >= 0 && obs[i] < feat_table.rows(),
          "featurize: unknown observation symbol " + std::to_string(obs[i]));
    Rng nrng(noise[i]);
    for (int64_t j = 0; j < fd; ++j)
      out.at(static_cast<int64_t>(i), j) =
          feat_table.at(obs[i], j) + static_cast<float>(sigma * nrng.next_gaussian());
  }
  return out;
}

bool is_trainable(const std::string& name, TrainableSet set) {
  auto starts = [&](const char* p) { return name.rfind(p, 0) == 0; };
  if (starts("featurizer.")) return false;
  switch (set) {
    case TrainableSet::kBackbone:
      return starts("backbone.");
    case TrainableSet::kProjector:
      return starts("projector.");
    case TrainableSet::kProjectorAndSft:
      return starts("projector.") || starts("sft.");
    case TrainableSet::kDpoOnly:
      return starts("dpo.");
  }
  return false;
}

}  // namespace ctxbias
