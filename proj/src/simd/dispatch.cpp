#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "kernels_internal.hpp"

namespace flood::simd {

namespace detail {
#if !FLOOD_HAVE_AVX2
const KernelTable<float>* avx2_f32() { return nullptr; }
const KernelTable<double>* avx2_f64() { return nullptr; }
#endif
#if !FLOOD_HAVE_AVX512
const KernelTable<float>* avx512_f32() { return nullptr; }
const KernelTable<double>* avx512_f64() { return nullptr; }
#endif
#if !FLOOD_HAVE_NEON
const KernelTable<float>* neon_f32() { return nullptr; }
const KernelTable<double>* neon_f64() { return nullptr; }
#endif
}  // namespace detail

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar: return "scalar";
    case Isa::Avx2: return "avx2";
    case Isa::Avx512: return "avx512";
    case Isa::Neon: return "neon";
  }
  return "unknown";
}

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return true;
    case Isa::Avx2:
#if FLOOD_HAVE_AVX2 && (defined(__x86_64__) || defined(__i386__))
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::Avx512:
#if FLOOD_HAVE_AVX512 && (defined(__x86_64__) || defined(__i386__))
      return __builtin_cpu_supports("avx512f");
#else
      return false;
#endif
    case Isa::Neon:
      return detail::neon_f32() != nullptr;
  }
  return false;
}

Isa detected_isa() {
  if (isa_supported(Isa::Avx512)) return Isa::Avx512;
  if (isa_supported(Isa::Avx2)) return Isa::Avx2;
  if (isa_supported(Isa::Neon)) return Isa::Neon;
  return Isa::Scalar;
}

namespace {

Isa initial_isa() {
  if (const char* env = std::getenv("FLOOD_SIMD")) {
    const std::string want(env);
    for (Isa isa : {Isa::Scalar, Isa::Avx2, Isa::Avx512, Isa::Neon})
      if (want == isa_name(isa) && isa_supported(isa)) return isa;
  }
  return detected_isa();
}

std::atomic<Isa>& active_slot() {
  static std::atomic<Isa> slot{initial_isa()};
  return slot;
}

}  // namespace

Isa active_isa() { return active_slot().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (!isa_supported(isa))
    throw std::invalid_argument("SIMD variant not available: " + std::string(isa_name(isa)));
  active_slot().store(isa);
}

template <>
const KernelTable<float>& table<float>(Isa isa) {
  const KernelTable<float>* t = nullptr;
  if (isa == Isa::Avx2 && isa_supported(isa)) t = detail::avx2_f32();
  if (isa == Isa::Avx512 && isa_supported(isa)) t = detail::avx512_f32();
  if (isa == Isa::Neon && isa_supported(isa)) t = detail::neon_f32();
  return t ? *t : *detail::scalar_f32();
}

template <>
const KernelTable<double>& table<double>(Isa isa) {
  const KernelTable<double>* t = nullptr;
  if (isa == Isa::Avx2 && isa_supported(isa)) t = detail::avx2_f64();
  if (isa == Isa::Avx512 && isa_supported(isa)) t = detail::avx512_f64();
  if (isa == Isa::Neon && isa_supported(isa)) t = detail::neon_f64();
  return t ? *t : *detail::scalar_f64();
}

}  // namespace flood::simd
