#pragma once

// Dense arithmetic kernels behind the autodiff tape. Every kernel exists as a
// plain scalar reference and as vectorized variants (AVX2+FMA and AVX-512F on
// x86-64, NEON on AArch64). The variant is picked once at startup from CPUID,
// and can be forced with FLOOD_SIMD=scalar|avx2|avx512|neon.

#include <cstddef>
#include <string_view>

namespace flood::simd {

enum class Isa { Scalar, Avx2, Avx512, Neon };

std::string_view isa_name(Isa isa);

/// All matrices are row-major with explicit leading dimensions. Every gemm
/// accumulates into C.
template <typename T>
struct KernelTable {
  /// C[m×n] += A[m×k] · B[k×n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
                  const T* b, std::size_t ldb, T* c, std::size_t ldc);
  /// C[m×n] += A[m×k] · B[n×k]ᵀ
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
                  const T* b, std::size_t ldb, T* c, std::size_t ldc);
  /// C[m×n] += A[k×m]ᵀ · B[k×n]
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
                  const T* b, std::size_t ldb, T* c, std::size_t ldc);
  /// y += alpha·x
  void (*axpy)(std::size_t n, T alpha, const T* x, T* y);
  /// Σ x·y, accumulated in double after the lane reduction.
  double (*dot)(std::size_t n, const T* x, const T* y);
  /// y = max(x, 0)
  void (*relu)(std::size_t n, const T* x, T* y);
  /// dx += (x > 0) ? dy : 0
  void (*relu_backward)(std::size_t n, const T* x, const T* dy, T* dx);
  /// y += a ⊙ b
  void (*mul_acc)(std::size_t n, const T* a, const T* b, T* y);
};

/// Best ISA the running CPU supports (ignores FLOOD_SIMD).
Isa detected_isa();
bool isa_supported(Isa isa);

/// ISA in use for `active<T>()`. Initialized from FLOOD_SIMD or detection.
Isa active_isa();
/// Throws std::invalid_argument when the CPU cannot run `isa`.
void set_active_isa(Isa isa);

template <typename T>
const KernelTable<T>& table(Isa isa);

template <typename T>
const KernelTable<T>& active() {
  return table<T>(active_isa());
}

}  // namespace flood::simd
