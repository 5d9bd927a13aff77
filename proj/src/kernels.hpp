#ifndef FCT_SRC_KERNELS_HPP
#define FCT_SRC_KERNELS_HPP

// Inner loops shared by the op implementations. Written so that GCC can
// vectorize them without -ffast-math: reductions use fixed-width partial
// sums, so results are deterministic for a given build.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <type_traits>

namespace fct::kernels {

/// exp for floats with ~1 ulp polynomial accuracy on [-87, 88]; inputs are
/// clamped to that range.
inline float exp_approx(float x) {
  x = std::min(std::max(x, -87.0f), 88.0f);
  const float n = std::floor(x * 1.44269504088896341f + 0.5f);
  const float r = x - n * 0.693359375f + n * 2.12194440e-4f;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  const float y = p * r * r + r + 1.0f;
  const auto bits = static_cast<std::int32_t>(static_cast<std::int32_t>(n) + 127) << 23;
  return y * std::bit_cast<float>(bits);
}

template <typename T>
inline T exp_fast(T x) {
  if constexpr (std::is_same_v<T, float>)
    return exp_approx(x);
  else
    return std::exp(x);
}

template <typename T>
inline T dot(const T* a, const T* b, std::int64_t n) {
  constexpr int W = 16;
  T acc[W] = {};
  std::int64_t j = 0;
  for (; j + W <= n; j += W)
    for (int u = 0; u < W; ++u) acc[u] += a[j + u] * b[j + u];
  T s = 0;
  for (; j < n; ++j) s += a[j] * b[j];
  for (int u = 0; u < W; ++u) s += acc[u];
  return s;
}

template <typename T>
inline T sum(const T* a, std::int64_t n) {
  constexpr int W = 16;
  T acc[W] = {};
  std::int64_t j = 0;
  for (; j + W <= n; j += W)
    for (int u = 0; u < W; ++u) acc[u] += a[j + u];
  T s = 0;
  for (; j < n; ++j) s += a[j];
  for (int u = 0; u < W; ++u) s += acc[u];
  return s;
}

template <typename T>
inline T max(const T* a, std::int64_t n) {
  constexpr int W = 16;
  if (n < W) {
    T m = a[0];
    for (std::int64_t j = 1; j < n; ++j) m = m > a[j] ? m : a[j];
    return m;
  }
  T acc[W];
  for (int u = 0; u < W; ++u) acc[u] = a[u];
  std::int64_t j = W;
  for (; j + W <= n; j += W)
    for (int u = 0; u < W; ++u) acc[u] = acc[u] > a[j + u] ? acc[u] : a[j + u];
  T m = acc[0];
  for (int u = 1; u < W; ++u) m = m > acc[u] ? m : acc[u];
  for (; j < n; ++j) m = m > a[j] ? m : a[j];
  return m;
}

/// y += alpha * x
template <typename T>
inline void axpy(T* __restrict y, T alpha, const T* __restrict x, std::int64_t n) {
  for (std::int64_t j = 0; j < n; ++j) y[j] += alpha * x[j];
}

}  // namespace fct::kernels

#endif  // FCT_SRC_KERNELS_HPP
