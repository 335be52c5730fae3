#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctxbias {

// Dense row-major tensor. Rank 1 or 2 is all the model needs; storage is
// float in the production engine and double in the test reference engine.
template <class T>
struct TensorT {
  std::vector<int64_t> shape;
  std::vector<T> data;

  TensorT() = default;
  TensorT(std::vector<int64_t> s, std::vector<T> d)
      : shape(std::move(s)), data(std::move(d)) {}

  static TensorT zeros(std::vector<int64_t> s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return TensorT(std::move(s), std::vector<T>(static_cast<size_t>(n), T(0)));
  }

  static TensorT full(std::vector<int64_t> s, T v) {
    TensorT t = zeros(std::move(s));
    for (auto& x : t.data) x = v;
    return t;
  }

  static TensorT scalar(T v) { return TensorT({1}, {v}); }

  // A default-constructed tensor (empty shape) has no elements; there is no
  // rank-0 scalar convention here (scalar() yields shape [1]).
  int64_t numel() const {
    if (shape.empty()) return 0;
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
  }
  int64_t rows() const { return shape.empty() ? 0 : shape[0]; }
  int64_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  T& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * cols() + j)]; }
  const T& at(int64_t i, int64_t j) const {
    return data[static_cast<size_t>(i * cols() + j)];
  }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) os << "x";
      os << shape[i];
    }
    os << "]";
    return os.str();
  }

  template <class U>
  TensorT<U> cast() const {
    TensorT<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using Tensor = TensorT<float>;

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

}  // namespace ctxbias
