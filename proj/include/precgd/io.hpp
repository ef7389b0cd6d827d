#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "precgd/instance.hpp"
#include "precgd/solver.hpp"

namespace precgd::io {

// All readers and writers throw IoError on open/read/write failures and on
// malformed content. Layouts are described in docs/formats.md.

/// Binary problem instance (operator, observations, search rank, optional truth).
void save_instance(const std::filesystem::path& path, const ProblemInstance& inst);
ProblemInstance load_instance(const std::filesystem::path& path);

/// Custom operator file: uint64 n, uint64 m, then m row-major n x n float64 matrices.
void save_ensemble(const std::filesystem::path& path, const MeasurementEnsemble& ens);
MeasurementEnsemble load_ensemble(const std::filesystem::path& path);

/// Factor as CSV: one row per matrix row, comma separated, 17 significant digits.
void save_factor(const std::filesystem::path& path, const Matrix& x);
Matrix load_factor(const std::filesystem::path& path);

/// Trace CSV header, in column order.
inline constexpr const char* kTraceHeader =
    "k,f,eta,alpha,grad_fro,grad_dual_p,lambda_min_gram,err_fro,sin_theta_rstar,pl_ratio,wall_ns,"
    "flag";

void write_trace(std::ostream& os, const Trace& trace);
void save_trace(const std::filesystem::path& path, const Trace& trace);
/// Parses a trace CSV back into records (stop reason and message are not stored).
std::vector<IterationRecord> read_trace(std::istream& is);
std::vector<IterationRecord> load_trace(const std::filesystem::path& path);

/// Reads a whole text file.
std::string read_text(const std::filesystem::path& path);
/// Writes a whole text file, creating parent directories.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace precgd::io
