#pragma once

#include "flood/simd/kernels.hpp"

namespace flood::simd::detail {

const KernelTable<float>* scalar_f32();
const KernelTable<double>* scalar_f64();

// Null when the variant was not compiled into this build.
const KernelTable<float>* avx2_f32();
const KernelTable<double>* avx2_f64();
const KernelTable<float>* avx512_f32();
const KernelTable<double>* avx512_f64();
const KernelTable<float>* neon_f32();
const KernelTable<double>* neon_f64();

}  // namespace flood::simd::detail
