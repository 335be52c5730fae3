#pragma once

#include <algorithm>
#include <vector>

#include "ctxbias/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ctxbias {
namespace kernels {

// Matrix kernels with 64-bit accumulation. The parallel variants split work
// by output row, so the accumulation order per element is fixed and results
// are bit-identical to the serial reference at any thread count.

// C(m x n) = A(m x k) * B(k x n)
template <class T>
void matmul_serial(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  std::vector<double> acc(static_cast<size_t>(n));
  for (int64_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const T* arow = a + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const double av = static_cast<double>(arow[p]);
      const T* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) acc[static_cast<size_t>(j)] += av * static_cast<double>(brow[j]);
    }
    T* crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) crow[j] = static_cast<T>(acc[static_cast<size_t>(j)]);
  }
}

template <class T>
void matmul_omp(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel
  {
    std::vector<double> acc(static_cast<size_t>(n));
#pragma omp for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      const T* arow = a + i * k;
      for (int64_t p = 0; p < k; ++p) {
        const double av = static_cast<double>(arow[p]);
        const T* brow = b + p * n;
        for (int64_t j = 0; j < n; ++j) acc[static_cast<size_t>(j)] += av * static_cast<double>(brow[j]);
      }
      T* crow = c + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] = static_cast<T>(acc[static_cast<size_t>(j)]);
    }
  }
}

// C(m x n) = A(m x k) * B(n x k)^T
template <class T>
void matmul_nt_serial(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (int64_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p)
        acc += static_cast<double>(arow[p]) * static_cast<double>(brow[p]);
      c[i * n + j] = static_cast<T>(acc);
    }
  }
}

template <class T>
void matmul_nt_omp(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (int64_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p)
        acc += static_cast<double>(arow[p]) * static_cast<double>(brow[p]);
      c[i * n + j] = static_cast<T>(acc);
    }
  }
}

// C(k x n) = A(m x k)^T * B(m x n)
template <class T>
void matmul_tn_serial(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  std::vector<double> acc(static_cast<size_t>(k * n), 0.0);
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* brow = b + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const double av = static_cast<double>(arow[p]);
      double* crow = acc.data() + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * static_cast<double>(brow[j]);
    }
  }
  for (int64_t x = 0; x < k * n; ++x) c[x] = static_cast<T>(acc[static_cast<size_t>(x)]);
}

template <class T>
void matmul_tn_omp(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < k; ++p) {
    std::vector<double> acc(static_cast<size_t>(n), 0.0);
    for (int64_t i = 0; i < m; ++i) {
      const double av = static_cast<double>(a[i * k + p]);
      const T* brow = b + i * n;
      for (int64_t j = 0; j < n; ++j) acc[static_cast<size_t>(j)] += av * static_cast<double>(brow[j]);
    }
    T* crow = c + p * n;
    for (int64_t j = 0; j < n; ++j) crow[j] = static_cast<T>(acc[static_cast<size_t>(j)]);
  }
}

// Default entry points. OpenMP variants when compiled with OpenMP.
template <class T>
void matmul(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
#ifdef _OPENMP
  matmul_omp(a, b, c, m, k, n);
#else
  matmul_serial(a, b, c, m, k, n);
#endif
}

template <class T>
void matmul_nt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
#ifdef _OPENMP
  matmul_nt_omp(a, b, c, m, k, n);
#else
  matmul_nt_serial(a, b, c, m, k, n);
#endif
}

template <class T>
void matmul_tn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
#ifdef _OPENMP
  matmul_tn_omp(a, b, c, m, k, n);
#else
  matmul_tn_serial(a, b, c, m, k, n);
#endif
}

template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  check(a.shape.size() == 2 && b.shape.size() == 2 && a.shape[1] == b.shape[0],
        "matmul: incompatible shapes " + a.shape_str() + " and " + b.shape_str());
  TensorT<T> c = TensorT<T>::zeros({a.shape[0], b.shape[1]});
  matmul(a.data.data(), b.data.data(), c.data.data(), a.shape[0], a.shape[1], b.shape[1]);
  return c;
}

}  // namespace kernels
}  // namespace ctxbias
