#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "ctxbias/tensor.hpp"

namespace ctxbias {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t warmup_steps = 0;
  // When > 0, the learning rate follows a cosine decay from `lr` down to 0
  // between the end of warmup and `total_steps`.
  int64_t total_steps = 0;
};

// Adam with bias correction, linear warmup, and optional cosine decay. The
// effective learning rate at step s (starting from 0) is
// lr * min(1, s / warmup_steps) * cosine(s), so the very first step under
// warmup leaves parameters unchanged.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void step(const std::vector<std::pair<std::string, Tensor*>>& params,
            const std::map<std::string, Tensor>& grads) {
    double eff_lr = cfg_.lr;
    if (cfg_.warmup_steps > 0)
      eff_lr *= std::min(1.0, static_cast<double>(step_) /
                                  static_cast<double>(cfg_.warmup_steps));
    if (cfg_.total_steps > cfg_.warmup_steps && step_ > cfg_.warmup_steps) {
      const double frac =
          std::min(1.0, static_cast<double>(step_ - cfg_.warmup_steps) /
                            static_cast<double>(cfg_.total_steps - cfg_.warmup_steps));
      eff_lr *= 0.5 * (1.0 + std::cos(frac * 3.14159265358979323846));
    }
    const int64_t t = step_ + 1;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));
    for (const auto& [name, p] : params) {
      auto git = grads.find(name);
      auto& mo = moments_[name];
      if (mo.m.empty()) {
        mo.m.assign(p->data.size(), 0.0);
        mo.v.assign(p->data.size(), 0.0);
      }
      check(mo.m.size() == p->data.size(),
            "adam: moment/parameter size mismatch for " + name);
      const Tensor* g = git == grads.end() ? nullptr : &git->second;
      if (g) {
        check(g->data.size() == p->data.size(),
              "adam: gradient shape mismatch for " + name);
        for (float gv : g->data)
          check(std::isfinite(gv), "adam: non-finite gradient for " + name);
      }
      for (size_t i = 0; i < p->data.size(); ++i) {
        double gv = g ? static_cast<double>(g->data[i]) : 0.0;
        mo.m[i] = cfg_.beta1 * mo.m[i] + (1.0 - cfg_.beta1) * gv;
        mo.v[i] = cfg_.beta2 * mo.v[i] + (1.0 - cfg_.beta2) * gv * gv;
        double mhat = mo.m[i] / bc1;
        double vhat = mo.v[i] / bc2;
        p->data[i] = static_cast<float>(static_cast<double>(p->data[i]) -
                                        eff_lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
    ++step_;
  }

  int64_t step_count() const { return step_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamConfig cfg_;
  int64_t step_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace ctxbias
