// NEON variants for AArch64 (Advanced SIMD is mandatory there, so no runtime
// probe is needed beyond the architecture check at build time).

#include <arm_neon.h>

#include "kernels_internal.hpp"
#include "kernels_vec.hpp"

namespace flood::simd::detail {

namespace {

struct NeonF32 {
  using T = float;
  using Reg = float32x4_t;
  static constexpr std::size_t width = 4;
  static constexpr std::size_t block_rows = 6;
  static Reg load(const T* p) { return vld1q_f32(p); }
  static void store(T* p, Reg v) { vst1q_f32(p, v); }
  static Reg set1(T v) { return vdupq_n_f32(v); }
  static Reg zero() { return vdupq_n_f32(0.0f); }
  static Reg fma(Reg a, Reg b, Reg c) { return vfmaq_f32(c, a, b); }
  static Reg add(Reg a, Reg b) { return vaddq_f32(a, b); }
  static Reg max0(Reg a) { return vmaxq_f32(a, vdupq_n_f32(0.0f)); }
  static Reg keep_where_positive(Reg x, Reg v) {
    const uint32x4_t mask = vcgtq_f32(x, vdupq_n_f32(0.0f));
    return vreinterpretq_f32_u32(vandq_u32(mask, vreinterpretq_u32_f32(v)));
  }
  static double hsum(Reg v) {
    float lanes[4];
    vst1q_f32(lanes, v);
    return (double(lanes[0]) + lanes[1]) + (double(lanes[2]) + lanes[3]);
  }
};

struct NeonF64 {
  using T = double;
  using Reg = float64x2_t;
  static constexpr std::size_t width = 2;
  static constexpr std::size_t block_rows = 6;
  static Reg load(const T* p) { return vld1q_f64(p); }
  static void store(T* p, Reg v) { vst1q_f64(p, v); }
  static Reg set1(T v) { return vdupq_n_f64(v); }
  static Reg zero() { return vdupq_n_f64(0.0); }
  static Reg fma(Reg a, Reg b, Reg c) { return vfmaq_f64(c, a, b); }
  static Reg add(Reg a, Reg b) { return vaddq_f64(a, b); }
  static Reg max0(Reg a) { return vmaxq_f64(a, vdupq_n_f64(0.0)); }
  static Reg keep_where_positive(Reg x, Reg v) {
    const uint64x2_t mask = vcgtq_f64(x, vdupq_n_f64(0.0));
    return vreinterpretq_f64_u64(vandq_u64(mask, vreinterpretq_u64_f64(v)));
  }
  static double hsum(Reg v) { return vgetq_lane_f64(v, 0) + vgetq_lane_f64(v, 1); }
};

constexpr KernelTable<float> kNeonF32 = make_vec_table<NeonF32>();
constexpr KernelTable<double> kNeonF64 = make_vec_table<NeonF64>();

}  // namespace

const KernelTable<float>* neon_f32() { return &kNeonF32; }
const KernelTable<double>* neon_f64() { return &kNeonF64; }

}  // namespace flood::simd::detail
