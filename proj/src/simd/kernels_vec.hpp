#pragma once

// ISA-agnostic vector kernels. Each ISA translation unit supplies a traits type
// (lane width plus load/store/fma/...) and instantiates `make_vec_table`.

#include <cmath>
#include <cstddef>
#include <vector>

#include "flood/simd/kernels.hpp"

namespace flood::simd::detail {

template <class V>
struct VecKernels {
  using T = typename V::T;
  using R = typename V::Reg;
  static constexpr std::size_t W = V::width;
  // Masked loads/stores for the last partial register, when the ISA has them.
  static constexpr bool kPartial = requires(const T* p, T* q, R v) {
    V::load_n(p, std::size_t{1});
    V::store_n(q, v, std::size_t{1});
  };

  // C rows [i, i+Rows) += A(i.., p) · B(p, ..) where A(i, p) = a[i*ars + p*acs].
  template <std::size_t Rows>
  static void row_block(std::size_t n, std::size_t k, const T* a, std::size_t ars,
                        std::size_t acs, const T* b, std::size_t ldb, T* c, std::size_t ldc) {
    std::size_t j = 0;
    for (; j + 2 * W <= n; j += 2 * W) {
      R acc[Rows][2];
      for (std::size_t r = 0; r < Rows; ++r) {
        acc[r][0] = V::load(c + r * ldc + j);
        acc[r][1] = V::load(c + r * ldc + j + W);
      }
      for (std::size_t p = 0; p < k; ++p) {
        const T* brow = b + p * ldb + j;
        const R b0 = V::load(brow);
        const R b1 = V::load(brow + W);
        for (std::size_t r = 0; r < Rows; ++r) {
          const R av = V::set1(a[r * ars + p * acs]);
          acc[r][0] = V::fma(av, b0, acc[r][0]);
          acc[r][1] = V::fma(av, b1, acc[r][1]);
        }
      }
      for (std::size_t r = 0; r < Rows; ++r) {
        V::store(c + r * ldc + j, acc[r][0]);
        V::store(c + r * ldc + j + W, acc[r][1]);
      }
    }
    for (; j + W <= n; j += W) {
      R acc[Rows];
      for (std::size_t r = 0; r < Rows; ++r) acc[r] = V::load(c + r * ldc + j);
      for (std::size_t p = 0; p < k; ++p) {
        const R b0 = V::load(b + p * ldb + j);
        for (std::size_t r = 0; r < Rows; ++r)
          acc[r] = V::fma(V::set1(a[r * ars + p * acs]), b0, acc[r]);
      }
      for (std::size_t r = 0; r < Rows; ++r) V::store(c + r * ldc + j, acc[r]);
    }
    if constexpr (kPartial) {
      if (j < n) {
        const std::size_t rest = n - j;
        R acc[Rows];
        for (std::size_t r = 0; r < Rows; ++r) acc[r] = V::load_n(c + r * ldc + j, rest);
        for (std::size_t p = 0; p < k; ++p) {
          const R b0 = V::load_n(b + p * ldb + j, rest);
          for (std::size_t r = 0; r < Rows; ++r)
            acc[r] = V::fma(V::set1(a[r * ars + p * acs]), b0, acc[r]);
        }
        for (std::size_t r = 0; r < Rows; ++r) V::store_n(c + r * ldc + j, acc[r], rest);
        return;
      }
    }
    for (; j < n; ++j)
      for (std::size_t r = 0; r < Rows; ++r) {
        T s = c[r * ldc + j];
        for (std::size_t p = 0; p < k; ++p) s = std::fma(a[r * ars + p * acs], b[p * ldb + j], s);
        c[r * ldc + j] = s;
      }
  }

  static void gemm_strided(std::size_t m, std::size_t n, std::size_t k, const T* a,
                           std::size_t ars, std::size_t acs, const T* b, std::size_t ldb, T* c,
                           std::size_t ldc) {
    std::size_t i = 0;
    for (; i + V::block_rows <= m; i += V::block_rows)
      row_block<V::block_rows>(n, k, a + i * ars, ars, acs, b, ldb, c + i * ldc, ldc);
    for (; i + 4 <= m; i += 4)
      row_block<4>(n, k, a + i * ars, ars, acs, b, ldb, c + i * ldc, ldc);
    for (; i < m; ++i) row_block<1>(n, k, a + i * ars, ars, acs, b, ldb, c + i * ldc, ldc);
  }

  static void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
                      const T* b, std::size_t ldb, T* c, std::size_t ldc) {
    gemm_strided(m, n, k, a, lda, 1, b, ldb, c, ldc);
  }

  static void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
                      const T* b, std::size_t ldb, T* c, std::size_t ldc) {
    gemm_strided(m, n, k, a, 1, lda, b, ldb, c, ldc);
  }

  static R dot_reg(std::size_t k, const T* x, const T* y, std::size_t& tail_start) {
    R acc0 = V::zero(), acc1 = V::zero();
    std::size_t p = 0;
    for (; p + 2 * W <= k; p += 2 * W) {
      acc0 = V::fma(V::load(x + p), V::load(y + p), acc0);
      acc1 = V::fma(V::load(x + p + W), V::load(y + p + W), acc1);
    }
    for (; p + W <= k; p += W) acc0 = V::fma(V::load(x + p), V::load(y + p), acc0);
    tail_start = p;
    return V::add(acc0, acc1);
  }

  // B is transposed into scratch so every element accumulates over k in the
  // same order as gemm_nn, independent of lane width.
  static void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
                      const T* b, std::size_t ldb, T* c, std::size_t ldc) {
    thread_local std::vector<T> bt;
    bt.resize(k * n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * ldb + p];
    gemm_strided(m, n, k, a, lda, 1, bt.data(), n, c, ldc);
  }

  static void axpy(std::size_t n, T alpha, const T* x, T* y) {
    const R av = V::set1(alpha);
    std::size_t i = 0;
    for (; i + W <= n; i += W) V::store(y + i, V::fma(av, V::load(x + i), V::load(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
  }

  static double dot(std::size_t n, const T* x, const T* y) {
    std::size_t p = 0;
    const R acc = dot_reg(n, x, y, p);
    double s = V::hsum(acc);
    for (; p < n; ++p) s += static_cast<double>(x[p]) * static_cast<double>(y[p]);
    return s;
  }

  static void relu(std::size_t n, const T* x, T* y) {
    std::size_t i = 0;
    for (; i + W <= n; i += W) V::store(y + i, V::max0(V::load(x + i)));
    for (; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  }

  static void relu_backward(std::size_t n, const T* x, const T* dy, T* dx) {
    std::size_t i = 0;
    for (; i + W <= n; i += W)
      V::store(dx + i, V::add(V::load(dx + i), V::keep_where_positive(V::load(x + i), V::load(dy + i))));
    for (; i < n; ++i)
      if (x[i] > T(0)) dx[i] += dy[i];
  }

  static void mul_acc(std::size_t n, const T* a, const T* b, T* y) {
    std::size_t i = 0;
    for (; i + W <= n; i += W) V::store(y + i, V::fma(V::load(a + i), V::load(b + i), V::load(y + i)));
    for (; i < n; ++i) y[i] += a[i] * b[i];
  }
};

template <class V>
constexpr KernelTable<typename V::T> make_vec_table() {
  using K = VecKernels<V>;
  return {&K::gemm_nn, &K::gemm_nt, &K::gemm_tn, &K::axpy,
          &K::dot,     &K::relu,    &K::relu_backward, &K::mul_acc};
}

}  // namespace flood::simd::detail
