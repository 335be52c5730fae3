#include "ctxbias/infer.hpp"

#include <cmath>

#include "ctxbias/kernels.hpp"

namespace ctxbias {

namespace {

// Mirrors the tape composition: w + s*(B A), applied adapter by adapter.
Tensor compose(const Tensor& base, const Tensor& b_sft, const Tensor& a_sft,
               const Tensor& b_dpo, const Tensor& a_dpo, float lscale, float gamma) {
  Tensor w = base;
  Tensor d1 = kernels::matmul(b_sft, a_sft);
  for (size_t i = 0; i < w.data.size(); ++i) w.data[i] = w.data[i] + lscale * d1.data[i];
  Tensor d2 = kernels::matmul(b_dpo, a_dpo);
  const float s2 = gamma * lscale;
  for (size_t i = 0; i < w.data.size(); ++i) w.data[i] = w.data[i] + s2 * d2.data[i];
  return w;
}

void add_bias(Tensor& x, const Tensor& b) {
  for (int64_t i = 0; i < x.rows(); ++i)
    for (int64_t j = 0; j < x.cols(); ++j) x.at(i, j) += b.data[static_cast<size_t>(j)];
}

void relu_inplace(Tensor& x) {
  for (auto& v : x.data) v = v > 0.f ? v : 0.f;
}

void layernorm_inplace(Tensor& x, const Tensor& g, const Tensor& b) {
  const int64_t n = x.cols();
  for (int64_t i = 0; i < x.rows(); ++i) {
    double mean = 0.0;
    for (int64_t j = 0; j < n; ++j) mean += (double)x.at(i, j);
    mean /= (double)n;
    double var = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      double dd = (double)x.at(i, j) - mean;
      var += dd * dd;
    }
    var /= (double)n;
    double rstd = var < 1e-8 ? 0.0 : 1.0 / std::sqrt(var);
    for (int64_t j = 0; j < n; ++j) {
      double xn = ((double)x.at(i, j) - mean) * rstd;
      x.at(i, j) = static_cast<float>(xn * (double)g.data[static_cast<size_t>(j)] +
                                      (double)b.data[static_cast<size_t>(j)]);
    }
  }
}

}  // namespace

InferModel::InferModel(const PolicyModel& model, float gamma)
    : cfg_(model.cfg), gamma_(gamma) {
  check(gamma >= 0.0f, "infer: gamma must be >= 0");
  featurizer_ = model.p("featurizer.table");
  tok_embed_ = model.p("backbone.tok_embed");
  pos_embed_ = model.p("backbone.pos_embed");
  lnfg_ = model.p("backbone.lnf.g");
  lnfb_ = model.p("backbone.lnf.b");
  head_ = model.p("backbone.head");
  pw1_ = model.p("projector.w1");
  pb1_ = model.p("projector.b1");
  pw2_ = model.p("projector.w2");
  pb2_ = model.p("projector.b2");
  const float lscale = cfg_.lora_scale();
  for (int i = 0; i < cfg_.num_layers; ++i) {
    const std::string lp = "backbone.l" + std::to_string(i) + ".";
    const std::string sp = "sft.l" + std::to_string(i) + ".";
    const std::string dp = "dpo.l" + std::to_string(i) + ".";
    Layer L;
    L.wq = compose(model.p(lp + "attn.wq"), model.p(sp + "q.b"), model.p(sp + "q.a"),
                   model.p(dp + "q.b"), model.p(dp + "q.a"), lscale, gamma);
    L.wk = model.p(lp + "attn.wk");
    L.wv = compose(model.p(lp + "attn.wv"), model.p(sp + "v.b"), model.p(sp + "v.a"),
                   model.p(dp + "v.b"), model.p(dp + "v.a"), lscale, gamma);
    L.wo = model.p(lp + "attn.wo");
    L.ln1g = model.p(lp + "ln1.g");
    L.ln1b = model.p(lp + "ln1.b");
    L.ln2g = model.p(lp + "ln2.g");
    L.ln2b = model.p(lp + "ln2.b");
    L.w1 = model.p(lp + "mlp.w1");
    L.b1 = model.p(lp + "mlp.b1");
    L.w2 = model.p(lp + "mlp.w2");
    L.b2 = model.p(lp + "mlp.b2");
    layers_.push_back(std::move(L));
  }
}

Tensor InferModel::forward_logits(const EncodedExample& ex, int64_t fed_targets) const {
  const int64_t rows = ex.rows(fed_targets);
  check(rows <= cfg_.max_seq_len,
        "forward: input length " + std::to_string(rows) + " exceeds max_seq_len " +
            std::to_string(cfg_.max_seq_len));
  const int64_t d = cfg_.model_dim;

  Tensor x = Tensor::zeros({rows, d});
  int64_t r = 0;
  for (int tok : ex.prefix_tokens) {
    check(tok >= 0 && tok < cfg_.vocab_size, "forward: prefix token outside vocab");
    for (int64_t j = 0; j < d; ++j) x.at(r, j) = tok_embed_.at(tok, j);
    ++r;
  }
  if (!ex.obs.empty()) {
    Tensor f = featurize(featurizer_, ex.obs, ex.noise, ex.sigma);
    Tensor h = kernels::matmul(f, pw1_);
    add_bias(h, pb1_);
    relu_inplace(h);
    Tensor h2 = kernels::matmul(h, pw2_);
    add_bias(h2, pb2_);
    for (int64_t i = 0; i < h2.rows(); ++i, ++r)
      for (int64_t j = 0; j < d; ++j) x.at(r, j) = h2.at(i, j);
  }
  {
    std::vector<int> post;
    post.push_back(cfg_.sep_token);
    for (int64_t kk = 0; kk < fed_targets; ++kk) {
      int tok = ex.target[static_cast<size_t>(kk)];
      check(tok >= 0 && tok < cfg_.vocab_size, "forward: target token outside vocab");
      post.push_back(tok);
    }
    for (int tok : post) {
      for (int64_t j = 0; j < d; ++j) x.at(r, j) = tok_embed_.at(tok, j);
      ++r;
    }
  }
  check(r == rows, "forward: row assembly mismatch");
  const std::vector<int> pos = position_ids(cfg_, ex, rows);
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < d; ++j) x.at(i, j) += pos_embed_.at(pos[static_cast<size_t>(i)], j);

  const int64_t prefix_block = ex.prefix_len() + ex.feature_len() + 1;
  const int64_t nh = cfg_.num_heads;
  const int64_t hd = d / nh;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Tensor h = Tensor::zeros({rows, d});
  Tensor q = Tensor::zeros({rows, d}), k = Tensor::zeros({rows, d}),
         v = Tensor::zeros({rows, d});
  Tensor attn = Tensor::zeros({rows, d});

  for (const Layer& L : layers_) {
    h = x;
    layernorm_inplace(h, L.ln1g, L.ln1b);
    kernels::matmul(h.data.data(), L.wq.data.data(), q.data.data(), rows, d, d);
    kernels::matmul(h.data.data(), L.wk.data.data(), k.data.data(), rows, d, d);
    kernels::matmul(h.data.data(), L.wv.data.data(), v.data.data(), rows, d, d);

    for (int64_t head = 0; head < nh; ++head) {
      const int64_t c0 = head * hd;
      for (int64_t i = 0; i < rows; ++i) {
        const int64_t jmax = i < prefix_block ? prefix_block : i + 1;
        // Scores mirror the training graph's rounding points exactly: the
        // raw dot product is rounded to float, the 1/sqrt(hd) scale and the
        // -1e9 mask are applied in float, and the softmax keeps a double
        // normalizer over float-rounded exponentials.
        std::vector<float> sc(static_cast<size_t>(rows));
        double mx = -1e300;
        for (int64_t j = 0; j < rows; ++j) {
          double s = 0.0;
          for (int64_t c = 0; c < hd; ++c)
            s += (double)q.at(i, c0 + c) * (double)k.at(j, c0 + c);
          float sf = static_cast<float>(s) * static_cast<float>(att_scale);
          if (j >= jmax) sf += -1e9f;
          sc[static_cast<size_t>(j)] = sf;
          mx = std::max(mx, (double)sf);
        }
        double sum = 0.0;
        for (int64_t j = 0; j < rows; ++j) {
          double e = std::exp((double)sc[static_cast<size_t>(j)] - mx);
          sc[static_cast<size_t>(j)] = static_cast<float>(e);
          sum += e;
        }
        for (int64_t j = 0; j < rows; ++j)
          sc[static_cast<size_t>(j)] =
              static_cast<float>((double)sc[static_cast<size_t>(j)] / sum);
        for (int64_t c = 0; c < hd; ++c) {
          double acc = 0.0;
          for (int64_t j = 0; j < rows; ++j)
            acc += (double)sc[static_cast<size_t>(j)] * (double)v.at(j, c0 + c);
          attn.at(i, c0 + c) = static_cast<float>(acc);
        }
      }
    }
    Tensor ao = kernels::matmul(attn, L.wo);
    for (size_t idx = 0; idx < x.data.size(); ++idx) x.data[idx] += ao.data[idx];

    h = x;
    layernorm_inplace(h, L.ln2g, L.ln2b);
    Tensor m1 = kernels::matmul(h, L.w1);
    add_bias(m1, L.b1);
    relu_inplace(m1);
    Tensor m2 = kernels::matmul(m1, L.w2);
    add_bias(m2, L.b2);
    for (size_t idx = 0; idx < x.data.size(); ++idx) x.data[idx] += m2.data[idx];
  }

  layernorm_inplace(x, lnfg_, lnfb_);
  return kernels::matmul(x, head_);
}

std::vector<double> InferModel::next_token_log_probs(const EncodedExample& ex,
                                                     const std::vector<int>& partial) const {
  EncodedExample e = ex;
  e.target = partial;
  Tensor logits = forward_logits(e, static_cast<int64_t>(partial.size()));
  const int64_t last = logits.rows() - 1;
  std::vector<double> lp(static_cast<size_t>(logits.cols()));
  double mx = -1e300;
  for (int64_t j = 0; j < logits.cols(); ++j) mx = std::max(mx, (double)logits.at(last, j));
  double sum = 0.0;
  for (int64_t j = 0; j < logits.cols(); ++j) sum += std::exp((double)logits.at(last, j) - mx);
  double lse = mx + std::log(sum);
  for (int64_t j = 0; j < logits.cols(); ++j)
    lp[static_cast<size_t>(j)] = (double)logits.at(last, j) - lse;
  return lp;
}

double InferModel::sequence_log_prob(const EncodedExample& ex) const {
  check(!ex.target.empty() && ex.target.back() == cfg_.eos_token,
        "sequence_log_prob: target must end with EOS");
  const int64_t n = static_cast<int64_t>(ex.target.size());
  Tensor logits = forward_logits(ex, n - 1);
  const int64_t row0 = first_pred_row(ex);
  // Mirrors the training engine exactly: per-token log-probs round to float,
  // the sum accumulates in double and rounds once at the end. This makes the
  // frozen-reference gap cancel bitwise against the policy gap whenever the
  // two compositions coincide (e.g. a zero adapter).
  double total = 0.0;
  for (int64_t t = 0; t < n; ++t) {
    const int64_t i = row0 + t;
    double mx = -1e300;
    for (int64_t j = 0; j < logits.cols(); ++j) mx = std::max(mx, (double)logits.at(i, j));
    double sum = 0.0;
    for (int64_t j = 0; j < logits.cols(); ++j) sum += std::exp((double)logits.at(i, j) - mx);
    double lse = mx + std::log(sum);
    float lp = static_cast<float>((double)logits.at(i, ex.target[static_cast<size_t>(t)]) - lse);
    total += (double)lp;
  }
  return (double)static_cast<float>(total);
}

}  // namespace ctxbias
