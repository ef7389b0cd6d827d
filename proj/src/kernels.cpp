#include "precgd/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <array>

namespace precgd::kernels {

namespace {

inline double dot(const double* a, const double* b, std::size_t len) {
  double s = 0.0;
  for (std::size_t j = 0; j < len; ++j) s += a[j] * b[j];
  return s;
}

constexpr std::size_t kAdjointBlock = 64;

}  // namespace

void forward_serial(std::span<const double> ops, std::size_t m, std::size_t len,
                    std::span<const double> x, std::span<double> out) {
  for (std::size_t i = 0; i < m; ++i) out[i] = dot(ops.data() + i * len, x.data(), len);
}

void forward_parallel(std::span<const double> ops, std::size_t m, std::size_t len,
                      std::span<const double> x, std::span<double> out) {
  const double* a = ops.data();
  const double* xv = x.data();
  double* o = out.data();
  const auto count = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (m * len > 32768)
  for (long long i = 0; i < count; ++i) {
    o[i] = dot(a + static_cast<std::size_t>(i) * len, xv, len);
  }
}

void adjoint_serial(std::span<const double> ops, std::size_t m, std::size_t len,
                    std::span<const double> v, std::span<double> out) {
  for (std::size_t j = 0; j < len; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += v[i] * ops[i * len + j];
    out[j] = s;
  }
}

void adjoint_parallel(std::span<const double> ops, std::size_t m, std::size_t len,
                      std::span<const double> v, std::span<double> out) {
  const double* a = ops.data();
  const double* vv = v.data();
  double* o = out.data();
  const auto blocks = static_cast<long long>((len + kAdjointBlock - 1) / kAdjointBlock);
  // Blocks of output entries; each entry still sums i = 0..m-1 in order.
#pragma omp parallel for schedule(static) if (m * len > 32768)
  for (long long b = 0; b < blocks; ++b) {
    const std::size_t j0 = static_cast<std::size_t>(b) * kAdjointBlock;
    const std::size_t width = std::min(kAdjointBlock, len - j0);
    std::array<double, kAdjointBlock> acc{};
    for (std::size_t i = 0; i < m; ++i) {
      const double w = vv[i];
      const double* row = a + i * len + j0;
      for (std::size_t j = 0; j < width; ++j) acc[j] += w * row[j];
    }
    std::copy_n(acc.begin(), width, o + j0);
  }
}

}  // namespace precgd::kernels
