#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ctxbias/kernels.hpp"
#include "ctxbias/tensor.hpp"

namespace ctxbias {

// Reverse-mode autodiff over an eagerly evaluated tape. Ops compute their
// output immediately and record a closure that scatters the output gradient
// back to the inputs. Node ids are indices into the tape, so construction
// order is already a topological order.
//
// Instantiated with T=float for the production engine and T=double for the
// finite-difference reference pass in tests.
template <class T>
class TapeT {
 public:
  using Tensor = TensorT<T>;

  int input(Tensor v, bool requires_grad) {
    nodes_.push_back(Node{std::move(v), Tensor(), requires_grad, nullptr});
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Tensor& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  Tensor& mutable_val(int id) { return nodes_[static_cast<size_t>(id)].value; }
  const Tensor& grad(int id) const { return nodes_[static_cast<size_t>(id)].grad; }
  bool requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }
  size_t size() const { return nodes_.size(); }

  int matmul(int a, int b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    check(A.shape.size() == 2 && B.shape.size() == 2 && A.shape[1] == B.shape[0],
          "matmul: incompatible shapes " + A.shape_str() + " and " + B.shape_str());
    Tensor C = Tensor::zeros({A.shape[0], B.shape[1]});
    kernels::matmul(A.data.data(), B.data.data(), C.data.data(), A.shape[0], A.shape[1],
                    B.shape[1]);
    return emit(std::move(C), {a, b}, [this, a, b](int out) {
      const Tensor& g = grad(out);
      const Tensor& A = val(a);
      const Tensor& B = val(b);
      if (requires_grad(a)) {
        Tensor ga = Tensor::zeros(A.shape);   // g * B^T
        kernels::matmul_nt(g.data.data(), B.data.data(), ga.data.data(), g.shape[0],
                           g.shape[1], B.shape[0]);
        accumulate(a, ga);
      }
      if (requires_grad(b)) {
        Tensor gb = Tensor::zeros(B.shape);   // A^T * g
        kernels::matmul_tn(A.data.data(), g.data.data(), gb.data.data(), A.shape[0],
                           A.shape[1], g.shape[1]);
        accumulate(b, gb);
      }
    });
  }

  // C = A * B^T. Separate op so attention scores need no materialized
  // transpose.
  int matmul_nt(int a, int b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    check(A.shape.size() == 2 && B.shape.size() == 2 && A.shape[1] == B.shape[1],
          "matmul_nt: incompatible shapes " + A.shape_str() + " and " + B.shape_str());
    Tensor C = Tensor::zeros({A.shape[0], B.shape[0]});
    kernels::matmul_nt(A.data.data(), B.data.data(), C.data.data(), A.shape[0],
                       A.shape[1], B.shape[0]);
    return emit(std::move(C), {a, b}, [this, a, b](int out) {
      const Tensor& g = grad(out);  // m x n
      const Tensor& A = val(a);     // m x k
      const Tensor& B = val(b);     // n x k
      if (requires_grad(a)) {
        Tensor ga = Tensor::zeros(A.shape);  // g * B
        kernels::matmul(g.data.data(), B.data.data(), ga.data.data(), g.shape[0],
                        g.shape[1], B.shape[1]);
        accumulate(a, ga);
      }
      if (requires_grad(b)) {
        Tensor gb = Tensor::zeros(B.shape);  // g^T * A
        kernels::matmul_tn(g.data.data(), A.data.data(), gb.data.data(), g.shape[0],
                           g.shape[1], A.shape[1]);
        accumulate(b, gb);
      }
    });
  }

  // Elementwise add; b may also be a row vector broadcast over a's rows.
  int add(int a, int b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    bool bcast = !A.same_shape(B);
    if (bcast)
      check(B.numel() == A.cols() && A.shape.size() == 2,
            "add: incompatible shapes " + A.shape_str() + " and " + B.shape_str());
    Tensor C = A;
    if (bcast) {
      for (int64_t i = 0; i < A.rows(); ++i)
        for (int64_t j = 0; j < A.cols(); ++j) C.at(i, j) += B.data[static_cast<size_t>(j)];
    } else {
      for (size_t i = 0; i < C.data.size(); ++i) C.data[i] += B.data[i];
    }
    return emit(std::move(C), {a, b}, [this, a, b, bcast](int out) {
      const Tensor& g = grad(out);
      if (requires_grad(a)) accumulate(a, g);
      if (requires_grad(b)) {
        if (!bcast) {
          accumulate(b, g);
        } else {
          Tensor gb = Tensor::zeros(val(b).shape);
          for (int64_t i = 0; i < g.rows(); ++i) {
            for (int64_t j = 0; j < g.cols(); ++j)
              gb.data[static_cast<size_t>(j)] += g.at(i, j);
          }
          accumulate(b, gb);
        }
      }
    });
  }

  int mul(int a, int b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    check(A.same_shape(B),
          "mul: shape mismatch " + A.shape_str() + " and " + B.shape_str());
    Tensor C = A;
    for (size_t i = 0; i < C.data.size(); ++i) C.data[i] *= B.data[i];
    return emit(std::move(C), {a, b}, [this, a, b](int out) {
      const Tensor& g = grad(out);
      if (requires_grad(a)) {
        Tensor ga = g;
        const Tensor& B = val(b);
        for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] *= B.data[i];
        accumulate(a, ga);
      }
      if (requires_grad(b)) {
        Tensor gb = g;
        const Tensor& A = val(a);
        for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] *= A.data[i];
        accumulate(b, gb);
      }
    });
  }

  int scale(int a, T c) {
    Tensor C = val(a);
    for (auto& x : C.data) x *= c;
    return emit(std::move(C), {a}, [this, a, c](int out) {
      if (!requires_grad(a)) return;
      Tensor g = grad(out);
      for (auto& x : g.data) x *= c;
      accumulate(a, g);
    });
  }

  // Adds a constant tensor (no gradient through the constant). Used for
  // attention masks and positional offsets baked per example.
  int add_const(int a, const Tensor& c) {
    const Tensor& A = val(a);
    check(A.same_shape(c),
          "add_const: shape mismatch " + A.shape_str() + " and " + c.shape_str());
    Tensor C = A;
    for (size_t i = 0; i < C.data.size(); ++i) C.data[i] += c.data[i];
    return emit(std::move(C), {a}, [this, a](int out) {
      if (requires_grad(a)) accumulate(a, grad(out));
    });
  }

  int relu(int a) {
    Tensor C = val(a);
    for (auto& x : C.data) x = x > T(0) ? x : T(0);
    return emit(std::move(C), {a}, [this, a](int out) {
      if (!requires_grad(a)) return;
      Tensor g = grad(out);
      const Tensor& A = val(a);
      for (size_t i = 0; i < g.data.size(); ++i)
        if (A.data[i] <= T(0)) g.data[i] = T(0);
      accumulate(a, g);
    });
  }

  int softmax_rows(int a) {
    const Tensor& A = val(a);
    check(A.shape.size() == 2, "softmax: expected rank-2, got " + A.shape_str());
    Tensor C = A;
    for (int64_t i = 0; i < A.rows(); ++i) {
      double mx = -1e300;
      for (int64_t j = 0; j < A.cols(); ++j) mx = std::max(mx, (double)A.at(i, j));
      double sum = 0.0;
      for (int64_t j = 0; j < A.cols(); ++j) {
        double e = std::exp((double)A.at(i, j) - mx);
        C.at(i, j) = static_cast<T>(e);
        sum += e;
      }
      for (int64_t j = 0; j < A.cols(); ++j)
        C.at(i, j) = static_cast<T>((double)C.at(i, j) / sum);
    }
    return emit(std::move(C), {a}, [this, a](int out) {
      if (!requires_grad(a)) return;
      const Tensor& y = val(out);
      const Tensor& g = grad(out);
      Tensor ga = Tensor::zeros(y.shape);
      for (int64_t i = 0; i < y.rows(); ++i) {
        double dot = 0.0;
        for (int64_t j = 0; j < y.cols(); ++j)
          dot += (double)g.at(i, j) * (double)y.at(i, j);
        for (int64_t j = 0; j < y.cols(); ++j)
          ga.at(i, j) = static_cast<T>((double)y.at(i, j) * ((double)g.at(i, j) - dot));
      }
      accumulate(a, ga);
    });
  }

  int log_softmax_rows(int a) {
    const Tensor& A = val(a);
    check(A.shape.size() == 2, "log_softmax: expected rank-2, got " + A.shape_str());
    Tensor C = A;
    for (int64_t i = 0; i < A.rows(); ++i) {
      double mx = -1e300;
      for (int64_t j = 0; j < A.cols(); ++j) mx = std::max(mx, (double)A.at(i, j));
      double sum = 0.0;
      for (int64_t j = 0; j < A.cols(); ++j) sum += std::exp((double)A.at(i, j) - mx);
      double lse = mx + std::log(sum);
      for (int64_t j = 0; j < A.cols(); ++j)
        C.at(i, j) = static_cast<T>((double)A.at(i, j) - lse);
    }
    return emit(std::move(C), {a}, [this, a](int out) {
      if (!requires_grad(a)) return;
      const Tensor& y = val(out);
      const Tensor& g = grad(out);
      Tensor ga = Tensor::zeros(y.shape);
      for (int64_t i = 0; i < y.rows(); ++i) {
        double gsum = 0.0;
        for (int64_t j = 0; j < y.cols(); ++j) gsum += (double)g.at(i, j);
        for (int64_t j = 0; j < y.cols(); ++j)
          ga.at(i, j) = static_cast<T>((double)g.at(i, j) -
                                       std::exp((double)y.at(i, j)) * gsum);
      }
      accumulate(a, ga);
    });
  }

  // Row layernorm with affine terms. Zero-variance rows normalize to zero
  // before the affine terms (variance < 1e-8 guard).
  int layernorm_rows(int x, int gain, int bias) {
    const Tensor& X = val(x);
    const Tensor& G = val(gain);
    const Tensor& Bb = val(bias);
    check(X.shape.size() == 2 && G.numel() == X.cols() && Bb.numel() == X.cols(),
          "layernorm: shape mismatch " + X.shape_str() + ", gain " + G.shape_str() +
              ", bias " + Bb.shape_str());
    const int64_t n = X.cols();
    Tensor C = X;
    std::vector<double> means(static_cast<size_t>(X.rows()));
    std::vector<double> rstds(static_cast<size_t>(X.rows()));
    for (int64_t i = 0; i < X.rows(); ++i) {
      double mean = 0.0;
      for (int64_t j = 0; j < n; ++j) mean += (double)X.at(i, j);
      mean /= (double)n;
      double var = 0.0;
      for (int64_t j = 0; j < n; ++j) {
        double d = (double)X.at(i, j) - mean;
        var += d * d;
      }
      var /= (double)n;
      double rstd = var < 1e-8 ? 0.0 : 1.0 / std::sqrt(var);
      means[static_cast<size_t>(i)] = mean;
      rstds[static_cast<size_t>(i)] = rstd;
      for (int64_t j = 0; j < n; ++j) {
        double xn = ((double)X.at(i, j) - mean) * rstd;
        C.at(i, j) = static_cast<T>(xn * (double)G.data[static_cast<size_t>(j)] +
                                    (double)Bb.data[static_cast<size_t>(j)]);
      }
    }
    return emit(std::move(C), {x, gain, bias},
                [this, x, gain, bias, means, rstds](int out) {
      const Tensor& X = val(x);
      const Tensor& G = val(gain);
      const Tensor& g = grad(out);
      const int64_t n = X.cols();
      Tensor gx = Tensor::zeros(X.shape);
      Tensor gg = Tensor::zeros(val(gain).shape);
      Tensor gb = Tensor::zeros(val(bias).shape);
      for (int64_t i = 0; i < X.rows(); ++i) {
        const double mean = means[static_cast<size_t>(i)];
        const double rstd = rstds[static_cast<size_t>(i)];
        double sum_gy = 0.0, sum_gyxn = 0.0;
        for (int64_t j = 0; j < n; ++j) {
          double xn = ((double)X.at(i, j) - mean) * rstd;
          double gy = (double)g.at(i, j) * (double)G.data[static_cast<size_t>(j)];
          sum_gy += gy;
          sum_gyxn += gy * xn;
          gg.data[static_cast<size_t>(j)] += static_cast<T>((double)g.at(i, j) * xn);
          gb.data[static_cast<size_t>(j)] += static_cast<T>((double)g.at(i, j));
        }
        for (int64_t j = 0; j < n; ++j) {
          double xn = ((double)X.at(i, j) - mean) * rstd;
          double gy = (double)g.at(i, j) * (double)G.data[static_cast<size_t>(j)];
          gx.at(i, j) = static_cast<T>(
              rstd * (gy - sum_gy / (double)n - xn * sum_gyxn / (double)n));
        }
      }
      if (requires_grad(x)) accumulate(x, gx);
      if (requires_grad(gain)) accumulate(gain, gg);
      if (requires_grad(bias)) accumulate(bias, gb);
    });
  }

  // Gathers rows of the table; gradient scatter-adds into the table.
  int embedding(int table, std::vector<int> ids) {
    const Tensor& Tb = val(table);
    check(Tb.shape.size() == 2, "embedding: table must be rank-2, got " + Tb.shape_str());
    for (int id : ids)
      check(id >= 0 && id < Tb.rows(),
            "embedding: id " + std::to_string(id) + " outside table " + Tb.shape_str());
    Tensor C = Tensor::zeros({static_cast<int64_t>(ids.size()), Tb.cols()});
    for (size_t i = 0; i < ids.size(); ++i)
      for (int64_t j = 0; j < Tb.cols(); ++j)
        C.at(static_cast<int64_t>(i), j) = Tb.at(ids[i], j);
    return emit(std::move(C), {table}, [this, table, ids = std::move(ids)](int out) {
      if (!requires_grad(table)) return;
      const Tensor& g = grad(out);
      Tensor gt = Tensor::zeros(val(table).shape);
      for (size_t i = 0; i < ids.size(); ++i)
        for (int64_t j = 0; j < gt.cols(); ++j)
          gt.at(ids[i], j) += g.at(static_cast<int64_t>(i), j);
      accumulate(table, gt);
    });
  }

  int slice_rows(int a, int64_t r0, int64_t r1) {
    const Tensor& A = val(a);
    check(A.shape.size() == 2 && r0 >= 0 && r1 <= A.rows() && r0 <= r1,
          "slice_rows: bad range on " + A.shape_str());
    Tensor C = Tensor::zeros({r1 - r0, A.cols()});
    for (int64_t i = r0; i < r1; ++i)
      for (int64_t j = 0; j < A.cols(); ++j) C.at(i - r0, j) = A.at(i, j);
    return emit(std::move(C), {a}, [this, a, r0](int out) {
      if (!requires_grad(a)) return;
      const Tensor& g = grad(out);
      Tensor ga = Tensor::zeros(val(a).shape);
      for (int64_t i = 0; i < g.rows(); ++i)
        for (int64_t j = 0; j < g.cols(); ++j) ga.at(i + r0, j) = g.at(i, j);
      accumulate(a, ga);
    });
  }

  int slice_cols(int a, int64_t c0, int64_t c1) {
    const Tensor& A = val(a);
    check(A.shape.size() == 2 && c0 >= 0 && c1 <= A.cols() && c0 <= c1,
          "slice_cols: bad range on " + A.shape_str());
    Tensor C = Tensor::zeros({A.rows(), c1 - c0});
    for (int64_t i = 0; i < A.rows(); ++i)
      for (int64_t j = c0; j < c1; ++j) C.at(i, j - c0) = A.at(i, j);
    return emit(std::move(C), {a}, [this, a, c0](int out) {
      if (!requires_grad(a)) return;
      const Tensor& g = grad(out);
      Tensor ga = Tensor::zeros(val(a).shape);
      for (int64_t i = 0; i < g.rows(); ++i)
        for (int64_t j = 0; j < g.cols(); ++j) ga.at(i, j + c0) = g.at(i, j);
      accumulate(a, ga);
    });
  }

  int concat_rows(const std::vector<int>& parts) {
    check(!parts.empty(), "concat_rows: empty input list");
    int64_t cols = val(parts[0]).cols();
    int64_t rows = 0;
    for (int p : parts) {
      check(val(p).cols() == cols, "concat_rows: column mismatch");
      rows += val(p).rows();
    }
    Tensor C = Tensor::zeros({rows, cols});
    int64_t r = 0;
    for (int p : parts) {
      const Tensor& P = val(p);
      for (int64_t i = 0; i < P.rows(); ++i)
        for (int64_t j = 0; j < cols; ++j) C.at(r + i, j) = P.at(i, j);
      r += P.rows();
    }
    return emit(std::move(C), parts, [this, parts](int out) {
      const Tensor& g = grad(out);
      int64_t r = 0;
      for (int p : parts) {
        const Tensor& P = val(p);
        if (requires_grad(p)) {
          Tensor gp = Tensor::zeros(P.shape);
          for (int64_t i = 0; i < P.rows(); ++i)
            for (int64_t j = 0; j < P.cols(); ++j) gp.at(i, j) = g.at(r + i, j);
          accumulate(p, gp);
        }
        r += P.rows();
      }
    });
  }

  int concat_cols(const std::vector<int>& parts) {
    check(!parts.empty(), "concat_cols: empty input list");
    int64_t rows = val(parts[0]).rows();
    int64_t cols = 0;
    for (int p : parts) {
      check(val(p).rows() == rows, "concat_cols: row mismatch");
      cols += val(p).cols();
    }
    Tensor C = Tensor::zeros({rows, cols});
    int64_t c = 0;
    for (int p : parts) {
      const Tensor& P = val(p);
      for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < P.cols(); ++j) C.at(i, c + j) = P.at(i, j);
      c += P.cols();
    }
    return emit(std::move(C), parts, [this, parts](int out) {
      const Tensor& g = grad(out);
      int64_t c = 0;
      for (int p : parts) {
        const Tensor& P = val(p);
        if (requires_grad(p)) {
          Tensor gp = Tensor::zeros(P.shape);
          for (int64_t i = 0; i < P.rows(); ++i)
            for (int64_t j = 0; j < P.cols(); ++j) gp.at(i, j) = g.at(i, c + j);
          accumulate(p, gp);
        }
        c += P.cols();
      }
    });
  }

  // From per-row log-probabilities (L x V), picks the realized token's value
  // per row, yielding (L x 1).
  int gather_rows(int logp, std::vector<int> targets) {
    const Tensor& L = val(logp);
    check(L.shape.size() == 2 &&
              static_cast<int64_t>(targets.size()) == L.rows(),
          "gather_rows: need one target per row of " + L.shape_str());
    for (int t : targets)
      check(t >= 0 && t < L.cols(), "gather_rows: token " + std::to_string(t) +
                                        " outside vocab " + L.shape_str());
    Tensor C = Tensor::zeros({L.rows(), 1});
    for (int64_t i = 0; i < L.rows(); ++i) C.at(i, 0) = L.at(i, targets[static_cast<size_t>(i)]);
    return emit(std::move(C), {logp}, [this, logp, targets = std::move(targets)](int out) {
      if (!requires_grad(logp)) return;
      const Tensor& g = grad(out);
      Tensor gl = Tensor::zeros(val(logp).shape);
      for (int64_t i = 0; i < g.rows(); ++i)
        gl.at(i, targets[static_cast<size_t>(i)]) = g.at(i, 0);
      accumulate(logp, gl);
    });
  }

  int sum(int a) {
    const Tensor& A = val(a);
    double s = 0.0;
    for (T v : A.data) s += (double)v;
    Tensor C = Tensor::scalar(static_cast<T>(s));
    return emit(std::move(C), {a}, [this, a](int out) {
      if (!requires_grad(a)) return;
      T g0 = grad(out).data[0];
      Tensor ga = Tensor::full(val(a).shape, g0);
      accumulate(a, ga);
    });
  }

  int log_sigmoid(int a) {
    const Tensor& A = val(a);
    Tensor C = A;
    for (auto& x : C.data) {
      double v = (double)x;
      // log sigma(v) = -log(1 + e^{-v}), stable on both tails
      x = static_cast<T>(v >= 0 ? -std::log1p(std::exp(-v)) : v - std::log1p(std::exp(v)));
    }
    return emit(std::move(C), {a}, [this, a](int out) {
      if (!requires_grad(a)) return;
      Tensor g = grad(out);
      const Tensor& A = val(a);
      for (size_t i = 0; i < g.data.size(); ++i) {
        double v = (double)A.data[i];
        double sig = 1.0 / (1.0 + std::exp(-v));
        g.data[i] = static_cast<T>((double)g.data[i] * (1.0 - sig));
      }
      accumulate(a, g);
    });
  }

  // Sum of log-softmax probabilities of the realized tokens; scalar output.
  // This is sequence log-probability when `targets` is the target sequence.
  int sequence_log_prob(int logits, const std::vector<int>& targets) {
    int lp = log_softmax_rows(logits);
    int picked = gather_rows(lp, targets);
    return sum(picked);
  }

  // Negative mean-over-rows cross-entropy of softmax logits vs target ids.
  int cross_entropy_mean(int logits, const std::vector<int>& targets) {
    int s = sequence_log_prob(logits, targets);
    return scale(s, static_cast<T>(-1.0 / static_cast<double>(targets.size())));
  }

  // Runs the backward sweep from a scalar loss node.
  void backward(int loss) {
    check(val(loss).numel() == 1,
          "backward: loss must be scalar, got " + val(loss).shape_str());
    for (auto& n : nodes_) n.grad = Tensor();
    nodes_[static_cast<size_t>(loss)].grad = Tensor::full(val(loss).shape, T(1));
    for (int id = loss; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (n.back && n.grad.numel() > 0) n.back(id);
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad;
    std::function<void(int)> back;
  };

  int emit(Tensor out, const std::vector<int>& parents, std::function<void(int)> back) {
    bool rg = false;
    for (int p : parents) rg = rg || nodes_[static_cast<size_t>(p)].requires_grad;
    nodes_.push_back(Node{std::move(out), Tensor(), rg, rg ? std::move(back) : nullptr});
    return static_cast<int>(nodes_.size()) - 1;
  }

  void accumulate(int id, const Tensor& g) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.numel() == 0) n.grad = Tensor::zeros(n.value.shape);
    check(n.grad.same_shape(g), "grad accumulate: shape mismatch, node " +
                                    std::to_string(id) + " value " + n.value.shape_str() +
                                    " grad " + n.grad.shape_str() + " vs incoming " +
                                    g.shape_str());
    for (size_t i = 0; i < g.data.size(); ++i) n.grad.data[i] += g.data[i];
  }

  std::vector<Node> nodes_;
};

using Tape = TapeT<float>;

}  // namespace ctxbias
