#pragma once

#include <cstdint>
#include <optional>

#include "precgd/core.hpp"

namespace precgd {

/// The n x r iterate X of the factored model X X^T.
class Factor {
 public:
  /// Throws DomainError on an empty shape or a non-finite entry.
  explicit Factor(Matrix data);

  const Matrix& matrix() const noexcept { return data_; }
  Index rows() const noexcept { return data_.rows(); }
  Index cols() const noexcept { return data_.cols(); }

  /// X X^T.
  Matrix outer() const { return data_ * data_.transpose(); }
  /// X^T X.
  Matrix gram() const { return data_.transpose() * data_; }

 private:
  Matrix data_;
};

/// Rank-r* PSD ground truth M* = Z Z^T.
class GroundTruth {
 public:
  /// Builds M*, its spectrum and condition number from a factor Z (n x r*).
  static GroundTruth from_factor(Matrix z);

  const Matrix& z() const noexcept { return z_; }
  const Matrix& m_star() const noexcept { return m_star_; }
  /// Eigenvalues of M*, descending, length n. Entries past r* are exact zeros.
  const Vector& spectrum() const noexcept { return spectrum_; }
  double kappa() const noexcept { return kappa_; }
  Index n() const noexcept { return z_.rows(); }
  Index r_star() const noexcept { return z_.cols(); }
  /// lambda_{r*}(M*).
  double lambda_r_star() const { return spectrum_(r_star() - 1); }

 private:
  GroundTruth() = default;
  Matrix z_;
  Matrix m_star_;
  Vector spectrum_;
  double kappa_ = 1.0;
};

enum class TruthScale {
  Raw,       ///< keep the Gaussian magnitude (lambda_1 grows like n)
  UnitTop,   ///< divide Z so that lambda_1(M*) = 1
};

/// Samples Z with i.i.d. standard Gaussian columns and rescales the last
/// column until lambda_1(M*) / lambda_{r*}(M*) equals `kappa`. The rescale
/// factor is located on the branch where the last column shrinks: a
/// geometric scan brackets it and bisection refines it.
///
/// Draws whose columns are too correlated to reach `kappa` are discarded and
/// Z is resampled from the same seeded stream (at most 64 draws).
///
/// With no `kappa` the raw Gaussian factor is kept. Throws DimensionError
/// when r_star is outside [1, n] and DomainError when kappa < 1 or the
/// requested condition number cannot be reached by rescaling one column.
GroundTruth make_ground_truth(Index n, Index r_star, std::optional<double> kappa,
                              std::uint64_t seed,
                              TruthScale scale = TruthScale::UnitTop);

/// ||X X^T - M*||_F.
double factor_error(const Factor& x, const GroundTruth& truth);
double factor_error(const Matrix& x, const Matrix& m_star);

}  // namespace precgd
