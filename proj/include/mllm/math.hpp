#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>

namespace mllm {

// exp/tanh/sigmoid kernels accurate to a few ulp. The polynomial pass is
// branch-free so the compiler can vectorize it; the power-of-two scaling
// runs as a cheap scalar pass. Pure functions of their argument, hence
// bitwise reproducible.

namespace fastmath {

inline constexpr double kLog2e = 1.4426950408889634074;
inline constexpr double kLn2Hi = 6.93147180369123816490e-01;
inline constexpr double kLn2Lo = 1.90821492927058770002e-10;
// 2^52 + 2^51: adding and subtracting rounds to the nearest integer for
// |x| < 2^51 under the default rounding mode.
inline constexpr double kRoundMagic = 6755399441055744.0;

inline double two_pow(int64_t k) {
  // k must lie in the normal exponent range [-1022, 1023].
  const uint64_t bits = static_cast<uint64_t>(k + 1023) << 52;
  double out;
  std::memcpy(&out, &bits, 8);
  return out;
}

// Degree-12 Taylor polynomial of exp on |r| <= 0.3466.
inline double exp_poly(double r) {
  double p = 1.0 / 479001600.0;
  p = p * r + 1.0 / 39916800.0;
  p = p * r + 1.0 / 3628800.0;
  p = p * r + 1.0 / 362880.0;
  p = p * r + 1.0 / 40320.0;
  p = p * r + 1.0 / 5040.0;
  p = p * r + 1.0 / 720.0;
  p = p * r + 1.0 / 120.0;
  p = p * r + 1.0 / 24.0;
  p = p * r + 1.0 / 6.0;
  p = p * r + 0.5;
  p = p * r + 1.0;
  p = p * r + 1.0;
  return p;
}

// Vectorizable pass: mantissa polynomial and the exponent as a double.
inline void exp_core(const double* x, double* poly, double* kd, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    double xi = x[i];
    xi = xi < -745.0 ? -745.0 : xi;
    xi = xi > 709.0 ? 709.0 : xi;
    const double t = xi * kLog2e + kRoundMagic;
    const double k = t - kRoundMagic;
    const double r = (xi - k * kLn2Hi) - k * kLn2Lo;
    poly[i] = exp_poly(r);
    kd[i] = k;
  }
}

// Scalar pass: two-step scaling reaches subnormal results through in-range
// powers of two.
inline double scale_by_pow2(double p, double kd) {
  const int64_t k = static_cast<int64_t>(kd);
  const int64_t k1 = k / 2;
  return (p * two_pow(k1)) * two_pow(k - k1);
}

inline constexpr size_t kChunk = 256;

}  // namespace fastmath

inline double fast_exp(double x) {
  double p, kd;
  fastmath::exp_core(&x, &p, &kd, 1);
  return fastmath::scale_by_pow2(p, kd);
}

inline double fast_sigmoid(double x) { return 1.0 / (1.0 + fast_exp(-x)); }

inline double fast_tanh(double x) {
  const double ax = std::fabs(x);
  const double t = fast_exp(-2.0 * ax);
  const double r = (1.0 - t) / (1.0 + t);
  return std::copysign(r, x);
}

inline void sigmoid_buf(const double* x, double* y, size_t n) {
  using namespace fastmath;
  double neg[kChunk], poly[kChunk], kd[kChunk];
  size_t at = 0;
  while (at < n) {
    const size_t len = std::min(kChunk, n - at);
    for (size_t i = 0; i < len; ++i) neg[i] = -x[at + i];
    exp_core(neg, poly, kd, len);
    for (size_t i = 0; i < len; ++i)
      y[at + i] = 1.0 / (1.0 + scale_by_pow2(poly[i], kd[i]));
    at += len;
  }
}

inline void tanh_buf(const double* x, double* y, size_t n) {
  using namespace fastmath;
  double arg[kChunk], poly[kChunk], kd[kChunk];
  size_t at = 0;
  while (at < n) {
    const size_t len = std::min(kChunk, n - at);
    for (size_t i = 0; i < len; ++i) arg[i] = -2.0 * std::fabs(x[at + i]);
    exp_core(arg, poly, kd, len);
    for (size_t i = 0; i < len; ++i) {
      const double e = scale_by_pow2(poly[i], kd[i]);
      y[at + i] = std::copysign((1.0 - e) / (1.0 + e), x[at + i]);
    }
    at += len;
  }
}

// exp of (x - shift) for one row; used by the softmax.
inline void exp_shifted_buf(const double* x, double shift, double* y,
                            size_t n) {
  using namespace fastmath;
  double arg[kChunk], poly[kChunk], kd[kChunk];
  size_t at = 0;
  while (at < n) {
    const size_t len = std::min(kChunk, n - at);
    for (size_t i = 0; i < len; ++i) arg[i] = x[at + i] - shift;
    exp_core(arg, poly, kd, len);
    for (size_t i = 0; i < len; ++i)
      y[at + i] = scale_by_pow2(poly[i], kd[i]);
    at += len;
  }
}

}  // namespace mllm
