// AVX2 + FMA variants. This translation unit is compiled with -mavx2 -mfma and
// must only be entered after the dispatcher has confirmed CPU support.

#include <immintrin.h>

#include "kernels_internal.hpp"
#include "kernels_vec.hpp"

namespace flood::simd::detail {

namespace {

struct Avx2F32 {
  using T = float;
  using Reg = __m256;
  static constexpr std::size_t width = 8;
  static constexpr std::size_t block_rows = 6;
  static Reg load(const T* p) { return _mm256_loadu_ps(p); }
  static void store(T* p, Reg v) { _mm256_storeu_ps(p, v); }
  static Reg set1(T v) { return _mm256_set1_ps(v); }
  static Reg zero() { return _mm256_setzero_ps(); }
  static Reg fma(Reg a, Reg b, Reg c) { return _mm256_fmadd_ps(a, b, c); }
  static Reg add(Reg a, Reg b) { return _mm256_add_ps(a, b); }
  static Reg max0(Reg a) { return _mm256_max_ps(a, _mm256_setzero_ps()); }
  static Reg keep_where_positive(Reg x, Reg v) {
    return _mm256_and_ps(_mm256_cmp_ps(x, _mm256_setzero_ps(), _CMP_GT_OQ), v);
  }
  static double hsum(Reg v) {
    alignas(32) float lanes[8];
    _mm256_store_ps(lanes, v);
    double s = 0.0;
    for (float x : lanes) s += x;
    return s;
  }
};

struct Avx2F64 {
  using T = double;
  using Reg = __m256d;
  static constexpr std::size_t width = 4;
  static constexpr std::size_t block_rows = 6;
  static Reg load(const T* p) { return _mm256_loadu_pd(p); }
  static void store(T* p, Reg v) { _mm256_storeu_pd(p, v); }
  static Reg set1(T v) { return _mm256_set1_pd(v); }
  static Reg zero() { return _mm256_setzero_pd(); }
  static Reg fma(Reg a, Reg b, Reg c) { return _mm256_fmadd_pd(a, b, c); }
  static Reg add(Reg a, Reg b) { return _mm256_add_pd(a, b); }
  static Reg max0(Reg a) { return _mm256_max_pd(a, _mm256_setzero_pd()); }
  static Reg keep_where_positive(Reg x, Reg v) {
    return _mm256_and_pd(_mm256_cmp_pd(x, _mm256_setzero_pd(), _CMP_GT_OQ), v);
  }
  static double hsum(Reg v) {
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, v);
    return (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  }
};

constexpr KernelTable<float> kAvx2F32 = make_vec_table<Avx2F32>();
constexpr KernelTable<double> kAvx2F64 = make_vec_table<Avx2F64>();

}  // namespace

const KernelTable<float>* avx2_f32() { return &kAvx2F32; }
const KernelTable<double>* avx2_f64() { return &kAvx2F64; }

}  // namespace flood::simd::detail
