#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace precgd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Operand shapes do not agree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A scalar argument lies outside the domain of the operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Malformed or inconsistent configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when the r x r preconditioner X^T X + eta I is numerically singular.
class SingularityError : public std::runtime_error {
 public:
  SingularityError(const std::string& what, double min_eigenvalue)
      : std::runtime_error(what), min_eigenvalue_(min_eigenvalue) {}
  double min_eigenvalue() const noexcept { return min_eigenvalue_; }

 private:
  double min_eigenvalue_;
};

/// Seeded random source used everywhere in the library.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. Uniforms take the top 53 bits of one engine draw. Normals use
/// the Marsaglia polar method (only sqrt and log), so the same seed yields
/// the same stream on every conforming platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal();

  Matrix normal_matrix(Index rows, Index cols);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Independent sub-stream seed from a base seed (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// Named sub-streams so that truth, operator and noise never share draws.
namespace stream {
inline constexpr std::uint64_t kTruth = 1;
inline constexpr std::uint64_t kEnsemble = 2;
inline constexpr std::uint64_t kNoise = 3;
}  // namespace stream

inline Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

bool all_finite(const Matrix& a);

}  // namespace precgd
