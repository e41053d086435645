// AVX-512F variants. Compiled with -mavx512f and entered only after the
// dispatcher has confirmed CPU support.

#include <immintrin.h>

#include "kernels_internal.hpp"
#include "kernels_vec.hpp"

namespace flood::simd::detail {

namespace {

struct Avx512F32 {
  using T = float;
  using Reg = __m512;
  static constexpr std::size_t width = 16;
  static constexpr std::size_t block_rows = 14;
  static Reg load(const T* p) { return _mm512_loadu_ps(p); }
  static void store(T* p, Reg v) { _mm512_storeu_ps(p, v); }
  static __mmask16 mask(std::size_t n) { return static_cast<__mmask16>((1u << n) - 1u); }
  static Reg load_n(const T* p, std::size_t n) { return _mm512_maskz_loadu_ps(mask(n), p); }
  static void store_n(T* p, Reg v, std::size_t n) { _mm512_mask_storeu_ps(p, mask(n), v); }
  static Reg set1(T v) { return _mm512_set1_ps(v); }
  static Reg zero() { return _mm512_setzero_ps(); }
  static Reg fma(Reg a, Reg b, Reg c) { return _mm512_fmadd_ps(a, b, c); }
  static Reg add(Reg a, Reg b) { return _mm512_add_ps(a, b); }
  static Reg max0(Reg a) { return _mm512_max_ps(a, _mm512_setzero_ps()); }
  static Reg keep_where_positive(Reg x, Reg v) {
    return _mm512_maskz_mov_ps(_mm512_cmp_ps_mask(x, _mm512_setzero_ps(), _CMP_GT_OQ), v);
  }
  static double hsum(Reg v) {
    alignas(64) float lanes[16];
    _mm512_store_ps(lanes, v);
    double s = 0.0;
    for (float x : lanes) s += x;
    return s;
  }
};

struct Avx512F64 {
  using T = double;
  using Reg = __m512d;
  static constexpr std::size_t width = 8;
  static constexpr std::size_t block_rows = 14;
  static Reg load(const T* p) { return _mm512_loadu_pd(p); }
  static void store(T* p, Reg v) { _mm512_storeu_pd(p, v); }
  static __mmask8 mask(std::size_t n) { return static_cast<__mmask8>((1u << n) - 1u); }
  static Reg load_n(const T* p, std::size_t n) { return _mm512_maskz_loadu_pd(mask(n), p); }
  static void store_n(T* p, Reg v, std::size_t n) { _mm512_mask_storeu_pd(p, mask(n), v); }
  static Reg set1(T v) { return _mm512_set1_pd(v); }
  static Reg zero() { return _mm512_setzero_pd(); }
  static Reg fma(Reg a, Reg b, Reg c) { return _mm512_fmadd_pd(a, b, c); }
  static Reg add(Reg a, Reg b) { return _mm512_add_pd(a, b); }
  static Reg max0(Reg a) { return _mm512_max_pd(a, _mm512_setzero_pd()); }
  static Reg keep_where_positive(Reg x, Reg v) {
    return _mm512_maskz_mov_pd(_mm512_cmp_pd_mask(x, _mm512_setzero_pd(), _CMP_GT_OQ), v);
  }
  static double hsum(Reg v) {
    alignas(64) double lanes[8];
    _mm512_store_pd(lanes, v);
    return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
  }
};

constexpr KernelTable<float> kAvx512F32 = make_vec_table<Avx512F32>();
constexpr KernelTable<double> kAvx512F64 = make_vec_table<Avx512F64>();

}  // namespace

const KernelTable<float>* avx512_f32() { return &kAvx512F32; }
const KernelTable<double>* avx512_f64() { return &kAvx512F64; }

}  // namespace flood::simd::detail
