#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "precgd/analysis.hpp"
#include "precgd/instance.hpp"
#include "precgd/solver.hpp"

namespace precgd::exp {

struct SolverEntry {
  std::string label;
  SolverConfig config;
  /// Variance-proxy damping without an explicit sigma2_hat follows the problem's sigma^2.
  bool sigma2_from_problem = false;
  /// lp_root damping without an explicit p follows the loss exponent.
  bool lp_root_from_loss = false;
};

struct ProblemBlock {
  ProblemSpec spec;
  std::optional<std::filesystem::path> ensemble_file;  ///< custom operator
  std::optional<std::filesystem::path> instance_file;  ///< load instead of generating
  std::optional<std::filesystem::path> x0_file;        ///< shared initial factor
};

struct OutputBlock {
  std::filesystem::path dir = "out";
  bool plot = true;
  int plot_cols = 3;
};

struct SweepAxis {
  std::string name;  ///< n, r_star, r, kappa, m, sigma or p
  std::vector<double> values;
};

struct SweepBlock {
  std::vector<SweepAxis> axes;
  std::vector<std::uint64_t> seeds;  ///< empty: problem seed only
};

struct ExperimentConfig {
  ProblemBlock problem;
  std::vector<SolverEntry> solvers;
  OutputBlock output;
  SweepBlock sweep;
  std::uint64_t hash = 0;  ///< FNV-1a of the source text
};

/// FNV-1a 64-bit.
std::uint64_t fnv1a(const std::string& text);

/// Parses the JSON config. Unknown keys, wrong types, duplicate labels and an
/// empty solver list raise ConfigError naming the offending key.
ExperimentConfig parse_config(const std::string& text);
/// Reads and parses; a missing file raises IoError.
ExperimentConfig load_config(const std::filesystem::path& path);

/// Command-line overrides applied on top of a parsed config.
struct Overrides {
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
};
void apply_overrides(ExperimentConfig& cfg, const Overrides& ov);

/// Generates or loads the problem instance described by the block.
ProblemInstance build_instance(const ProblemBlock& block);

/// Solver config with per-problem defaults resolved (sigma2_hat, lp_root p).
SolverConfig resolve_solver(const SolverEntry& entry, double sigma);

// ---- generate ----
struct GenerateResult {
  std::filesystem::path instance_path;
};
GenerateResult cmd_generate(const ExperimentConfig& cfg);

// ---- run ----
struct LabelSummary {
  std::string label;
  double final_err = 0.0;  ///< error of the returned (best) iterate; NaN without truth
  double last_f = 0.0;
  int iterations = 0;
  int best_k = 0;
  std::optional<int> iters_to_1e3;
  std::optional<int> iters_to_1e6;
  std::optional<int> iters_to_1e9;
  bool diverged = false;
  std::string stop;
  std::string message;
};

struct RunOutput {
  std::vector<LabelSummary> summaries;
  std::vector<std::pair<std::string, Trace>> traces;
  std::vector<Matrix> best;  ///< per solver, config order
  Matrix x0;
};

/// Runs every solver from one shared X0; writes trace_<label>.csv,
/// best_<label>.csv, summary.json and (optionally) plot.svg into the out dir.
RunOutput cmd_run(const ExperimentConfig& cfg);
/// Same computation without touching the filesystem (except input files).
RunOutput run_experiment(const ExperimentConfig& cfg);

// ---- sweep ----
struct SweepCell {
  std::vector<std::pair<std::string, double>> key;  ///< axis values, config order
  std::string label;
  std::vector<double> err2;  ///< per seed, seed order
  double median_err2 = 0.0;
  int diverged = 0;
  double e_stat_ref = 0.0;  ///< sigma^2 n r log(n) / m
};

struct SlopeFit {
  std::string axis;
  std::string label;
  std::string group;  ///< other-axis values, "-" when only one axis varies
  double slope = 0.0;
  int points = 0;
};

struct CellTrace {
  std::string cell;  ///< e.g. "sigma=0.1_m=2000"
  std::string label;
  Trace trace;
};

struct SweepResult {
  std::vector<SweepCell> cells;  ///< sorted by key, then solver order
  std::vector<SlopeFit> fits;
  std::vector<CellTrace> first_seed_traces;  ///< same order as cells
};

/// Runs the cross product of sweep axes and seeds concurrently.
SweepResult run_sweep(const ExperimentConfig& cfg);
/// run_sweep plus sweep.csv, sweep_fits.csv, representative traces and plot.
SweepResult cmd_sweep(const ExperimentConfig& cfg);

/// Least-squares slope of log(y) against log(x). Needs >= 2 distinct x.
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

// ---- diagnose ----
DiagnosticsReport cmd_diagnose(const ExperimentConfig& cfg, const std::filesystem::path& factor,
                               bool write_file = true);

// ---- plot ----
struct PlotSeries {
  std::string panel;
  std::string label;
  std::vector<IterationRecord> records;
};

struct PlotFiles {
  std::filesystem::path svg;
  std::filesystem::path csv;
};

/// SVG with one panel per distinct panel name (grid with `cols` columns) and
/// one curve per label; plus the resampled data as CSV. Empty input or an
/// empty trace raises IoError.
PlotFiles cmd_plot(const std::vector<PlotSeries>& series, const std::filesystem::path& out_dir,
                   const std::string& stem, int cols, std::uint64_t config_hash);

/// Renders the SVG text only.
std::string render_svg(const std::vector<PlotSeries>& series, int cols, std::uint64_t config_hash);

}  // namespace precgd::exp
