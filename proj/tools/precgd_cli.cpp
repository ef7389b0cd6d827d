// precgd command-line experiment runner.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <omp.h>

#include "precgd/experiment.hpp"
#include "precgd/io.hpp"

namespace {

using namespace precgd;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitIo = 2;

struct Globals {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

exp::ExperimentConfig load(const Globals& g) {
  if (g.config.empty()) throw ConfigError("--config PATH is required for this command");
  exp::ExperimentConfig cfg = exp::load_config(g.config);
  exp::Overrides ov;
  if (!g.out.empty()) ov.out = g.out;
  ov.seed = g.seed;
  exp::apply_overrides(cfg, ov);
  return cfg;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6e", v);
  return buf;
}

int do_generate(const Globals& g) {
  const auto cfg = load(g);
  const auto res = exp::cmd_generate(cfg);
  std::cout << "wrote " << res.instance_path.string() << '\n';
  return kExitOk;
}

int do_run(const Globals& g) {
  const auto cfg = load(g);
  const auto out = exp::cmd_run(cfg);
  for (const auto& s : out.summaries) {
    std::cout << s.label << ": final_err=" << fmt(s.final_err) << " iterations=" << s.iterations
              << " stop=" << s.stop << (s.diverged ? " DIVERGED" : "") << '\n';
  }
  std::cout << "outputs in " << cfg.output.dir.string() << '\n';
  return kExitOk;
}

int do_sweep(const Globals& g) {
  const auto cfg = load(g);
  const auto res = exp::cmd_sweep(cfg);
  for (const auto& c : res.cells) {
    for (const auto& [k, v] : c.key) std::cout << k << '=' << v << ' ';
    std::cout << c.label << " median_err2=" << fmt(c.median_err2) << " diverged=" << c.diverged
              << '/' << c.err2.size() << '\n';
  }
  for (const auto& f : res.fits)
    std::cout << "slope[" << f.axis << "] " << f.label << " (" << f.group << "): " << f.slope << '\n';
  std::cout << "outputs in " << cfg.output.dir.string() << '\n';
  return kExitOk;
}

int do_diagnose(const Globals& g, const std::string& factor) {
  const auto cfg = load(g);
  const auto rep = exp::cmd_diagnose(cfg, factor);
  std::cout << rep.to_key_value();
  return kExitOk;
}

int do_plot(const Globals& g, const std::vector<std::string>& traces, int cols,
            const std::string& stem) {
  std::vector<exp::PlotSeries> series;
  std::uint64_t hash = 0;
  std::string trace_text;  // hashed when no config is given
  fs::path out = g.out.empty() ? fs::path("out") : fs::path(g.out);
  if (!g.config.empty()) {
    const std::string text = io::read_text(g.config);
    hash = exp::fnv1a(text);
    if (g.out.empty()) out = exp::parse_config(text).output.dir;
  }
  for (const auto& spec : traces) {
    // [panel:]label=path
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw ConfigError("--trace expects [panel:]label=PATH, got '" + spec + "'");
    std::string head = spec.substr(0, eq);
    const std::string path = spec.substr(eq + 1);
    std::string panel = "traces";
    if (const auto colon = head.find(':'); colon != std::string::npos) {
      panel = head.substr(0, colon);
      head = head.substr(colon + 1);
    }
    if (g.config.empty()) trace_text += io::read_text(path);
    series.push_back({panel, head, io::load_trace(path)});
  }
  if (g.config.empty()) hash = exp::fnv1a(trace_text);
  const auto files = exp::cmd_plot(series, out, stem, cols, hash);
  std::cout << "wrote " << files.svg.string() << " and " << files.csv.string() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"precgd: preconditioned gradient descent for low-rank matrix sensing"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config, "Experiment config (JSON)");
  app.add_option("--out", g.out, "Output directory (overrides output.dir)");
  app.add_option("--seed", g.seed, "Problem seed override");
  app.add_option("--threads", g.threads, "OpenMP thread count")->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("generate", "Write a synthetic instance to disk");
  auto* run = app.add_subcommand("run", "Run every configured solver from one shared X0");
  auto* sweep = app.add_subcommand("sweep", "Run the sweep cross product and fit scaling slopes");
  auto* diag = app.add_subcommand("diagnose", "Print theory diagnostics for a factor");
  std::string factor;
  diag->add_option("--factor", factor, "Factor CSV (n rows, r columns)")->required();
  auto* plot = app.add_subcommand("plot", "Render traces to SVG plus resampled CSV");
  std::vector<std::string> traces;
  int cols = 3;
  std::string stem = "plot";
  plot->add_option("--trace", traces, "[panel:]label=PATH, repeatable")->required();
  plot->add_option("--cols", cols, "Panels per row")->check(CLI::PositiveNumber);
  plot->add_option("--name", stem, "Output file stem");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (g.threads) omp_set_num_threads(*g.threads);

  try {
    if (*gen) return do_generate(g);
    if (*run) return do_run(g);
    if (*sweep) return do_sweep(g);
    if (*diag) return do_diagnose(g, factor);
    if (*plot) return do_plot(g, traces, cols, stem);
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    // Domain and dimension errors here come from config values.
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitConfig;
}
