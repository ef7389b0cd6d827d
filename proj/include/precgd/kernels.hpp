#pragma once

#include <cstddef>
#include <span>

// Dense measurement kernels. The operator is stored as m contiguous blocks of
// `len` doubles (one flattened A_i per block).
//
// Each kernel has a serial reference and an OpenMP version. The parallel
// versions keep the per-output summation order of the reference, so their
// results do not depend on the thread count.
namespace precgd::kernels {

/// out[i] = <A_i, x> for i in [0, m).
void forward_serial(std::span<const double> ops, std::size_t m, std::size_t len,
                    std::span<const double> x, std::span<double> out);
void forward_parallel(std::span<const double> ops, std::size_t m, std::size_t len,
                      std::span<const double> x, std::span<double> out);

/// out[j] = sum_i v[i] * A_i[j] for j in [0, len).
void adjoint_serial(std::span<const double> ops, std::size_t m, std::size_t len,
                    std::span<const double> v, std::span<double> out);
void adjoint_parallel(std::span<const double> ops, std::size_t m, std::size_t len,
                      std::span<const double> v, std::span<double> out);

}  // namespace precgd::kernels
