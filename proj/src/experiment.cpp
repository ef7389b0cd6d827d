#include "precgd/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "precgd/io.hpp"

namespace precgd::exp {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

// ---------------------------------------------------------------- parsing

class Block {
 public:
  Block(const json& j, std::string path, std::set<std::string> allowed)
      : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
    for (const auto& item : j_.items())
      if (!allowed.count(item.key()))
        throw ConfigError("unknown key '" + key_path(item.key()) + "'");
  }

  bool has(const std::string& k) const { return j_.contains(k) && !j_.at(k).is_null(); }
  const json& at(const std::string& k) const { return j_.at(k); }
  std::string key_path(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

  double num(const std::string& k, double def) const { return has(k) ? num(k) : def; }
  double num(const std::string& k) const {
    require(k);
    const auto& v = j_.at(k);
    if (!v.is_number()) throw ConfigError("key '" + key_path(k) + "' must be a number");
    return v.get<double>();
  }
  std::int64_t integer(const std::string& k, std::int64_t def) const {
    return has(k) ? integer(k) : def;
  }
  std::int64_t integer(const std::string& k) const {
    require(k);
    const auto& v = j_.at(k);
    if (!v.is_number_integer()) throw ConfigError("key '" + key_path(k) + "' must be an integer");
    return v.get<std::int64_t>();
  }
  bool boolean(const std::string& k, bool def) const {
    if (!has(k)) return def;
    const auto& v = j_.at(k);
    if (!v.is_boolean()) throw ConfigError("key '" + key_path(k) + "' must be true or false");
    return v.get<bool>();
  }
  std::string str(const std::string& k, const std::string& def) const {
    return has(k) ? str(k) : def;
  }
  std::string str(const std::string& k) const {
    require(k);
    const auto& v = j_.at(k);
    if (!v.is_string()) throw ConfigError("key '" + key_path(k) + "' must be a string");
    return v.get<std::string>();
  }
  void require(const std::string& k) const {
    if (!has(k)) throw ConfigError("missing key '" + key_path(k) + "'");
  }
  std::string where() const { return path_.empty() ? "config" : "'" + path_ + "'"; }

 private:
  const json& j_;
  std::string path_;
};

void check(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError("key '" + key + "' " + what);
}

ProblemBlock parse_problem(const json& j) {
  Block b(j, "problem",
          {"n", "r_star", "r", "kappa", "m", "sigma", "ensemble", "ensemble_file", "normalization",
           "truth_scale", "seed", "instance_file", "x0_file"});
  ProblemBlock pb;
  ProblemSpec& s = pb.spec;
  s.n = b.integer("n", 4);
  s.r_star = b.integer("r_star", 2);
  s.r = b.integer("r", s.r_star);
  if (b.has("kappa")) s.kappa = b.num("kappa");
  s.sigma = b.num("sigma", 0.0);
  s.seed = static_cast<std::uint64_t>(b.integer("seed", 0));
  const std::string kind = b.str("ensemble", "gaussian");
  if (kind == "gaussian")
    s.ensemble = EnsembleKind::GaussianSym;
  else if (kind == "identity")
    s.ensemble = EnsembleKind::Identity;
  else if (kind == "custom")
    s.ensemble = EnsembleKind::Custom;
  else
    throw ConfigError("key 'problem.ensemble' must be gaussian, identity or custom, got '" + kind +
                      "'");
  s.m = b.integer("m", s.ensemble == EnsembleKind::Identity ? s.n * s.n : 8 * s.n * s.r);
  const std::string norm = b.str("normalization", "m");
  check(norm == "m" || norm == "unit", "problem.normalization", "must be m or unit");
  s.unit_normalization = norm == "unit";
  const std::string scale = b.str("truth_scale", "unit_top");
  check(scale == "unit_top" || scale == "raw", "problem.truth_scale", "must be unit_top or raw");
  s.truth_scale = scale == "raw" ? TruthScale::Raw : TruthScale::UnitTop;
  if (b.has("ensemble_file")) pb.ensemble_file = b.str("ensemble_file");
  if (b.has("instance_file")) pb.instance_file = b.str("instance_file");
  if (b.has("x0_file")) pb.x0_file = b.str("x0_file");

  check(s.n >= 1, "problem.n", "must be >= 1");
  check(s.r_star >= 1 && s.r_star <= s.n, "problem.r_star", "must lie in [1, n]");
  check(s.r >= 1 && s.r <= s.n, "problem.r", "must lie in [1, n]");
  check(s.m >= 1, "problem.m", "must be >= 1");
  check(s.sigma >= 0.0, "problem.sigma", "must be >= 0");
  check(!s.kappa || *s.kappa >= 1.0, "problem.kappa", "must be >= 1");
  if (s.ensemble == EnsembleKind::Custom && !pb.ensemble_file && !pb.instance_file)
    throw ConfigError("key 'problem.ensemble_file' is required for the custom ensemble");
  return pb;
}

Method parse_method(const std::string& s, const std::string& key) {
  if (s == "gd") return Method::GD;
  if (s == "scaledgd") return Method::ScaledGD;
  if (s == "precgd") return Method::PrecGD;
  throw ConfigError("key '" + key + "' must be gd, scaledgd or precgd, got '" + s + "'");
}

StepPolicy parse_step(const json& j, const std::string& path) {
  Block b(j, path, {"kind", "alpha", "alpha0", "decay", "exponent"});
  const std::string kind = b.str("kind", "fixed");
  try {
    if (kind == "fixed") return StepPolicy::fixed(b.num("alpha", 0.02));
    if (kind == "polyak") return StepPolicy::polyak(b.num("exponent", 1.0));
    if (kind == "polyak_squared") return StepPolicy::polyak_squared();
    if (kind == "decaying") return StepPolicy::decaying(b.num("alpha0"), b.num("decay", 0.999));
  } catch (const DomainError& e) {
    throw ConfigError("'" + path + "': " + e.what());
  }
  throw ConfigError("key '" + path + ".kind' must be fixed, polyak, polyak_squared or decaying");
}

LossSpec parse_loss(const json& j, const std::string& path) {
  Block b(j, path, {"kind", "p"});
  const std::string kind = b.str("kind", "l2");
  if (kind == "l2") return LossSpec::l2();
  if (kind == "lp") {
    const double p = b.num("p");
    check(p >= 1.0 && p < 2.0, path + ".p", "must lie in [1, 2)");
    return LossSpec::lp(p);
  }
  throw ConfigError("key '" + path + ".kind' must be l2 or lp");
}

SolverEntry parse_solver(const json& j, const std::string& path) {
  Block b(j, path,
          {"label", "method", "step", "damping", "loss", "max_iters", "tol_f", "tol_error",
           "record_diagnostics"});
  SolverEntry e;
  e.label = b.str("label");
  check(!e.label.empty(), path + ".label", "must not be empty");
  SolverConfig& c = e.config;
  c.method = parse_method(b.str("method"), path + ".method");
  if (b.has("step")) c.step = parse_step(b.at("step"), path + ".step");
  if (b.has("loss")) c.loss = parse_loss(b.at("loss"), path + ".loss");
  c.max_iters = static_cast<int>(b.integer("max_iters", 5000));
  c.tol_f = b.num("tol_f", 1e-20);
  if (b.has("tol_error")) c.tol_error = b.num("tol_error");
  c.record_diagnostics = b.boolean("record_diagnostics", true);
  if (b.has("damping")) {
    const std::string dpath = path + ".damping";
    Block d(b.at("damping"), dpath, {"kind", "eta", "sigma2_hat", "p"});
    const std::string kind = d.str("kind", "sqrt_f");
    try {
      if (kind == "fixed") {
        c.damping = DampingSchedule::fixed(d.num("eta"));
      } else if (kind == "sqrt_f") {
        c.damping = DampingSchedule::sqrt_f();
      } else if (kind == "oracle_residual") {
        c.damping = DampingSchedule::oracle_residual();
      } else if (kind == "variance_proxy") {
        if (d.has("sigma2_hat")) {
          c.damping = DampingSchedule::variance_proxy(d.num("sigma2_hat"));
        } else {
          c.damping = DampingSchedule::variance_proxy(0.0);
          e.sigma2_from_problem = true;
        }
      } else if (kind == "lp_root") {
        if (d.has("p")) {
          c.damping = DampingSchedule::lp_root(d.num("p"));
        } else {
          c.damping = DampingSchedule::lp_root(c.loss.kind == LossSpec::Kind::Lp ? c.loss.p : 2.0);
          e.lp_root_from_loss = true;
        }
      } else {
        throw ConfigError("key '" + dpath +
                          ".kind' must be fixed, sqrt_f, oracle_residual, variance_proxy or "
                          "lp_root");
      }
    } catch (const DomainError& err) {
      throw ConfigError("'" + dpath + "': " + err.what());
    }
  }
  try {
    c.validate();
  } catch (const ConfigError& err) {
    throw ConfigError("'" + path + "': " + err.what());
  }
  return e;
}

OutputBlock parse_output(const json& j) {
  Block b(j, "output", {"dir", "plot", "plot_cols"});
  OutputBlock o;
  o.dir = b.str("dir", "out");
  o.plot = b.boolean("plot", true);
  o.plot_cols = static_cast<int>(b.integer("plot_cols", 3));
  check(o.plot_cols >= 1, "output.plot_cols", "must be >= 1");
  return o;
}

const std::vector<std::string> kAxisNames = {"n", "r_star", "r", "kappa", "m", "sigma", "p"};

SweepBlock parse_sweep(const json& j) {
  std::set<std::string> allowed(kAxisNames.begin(), kAxisNames.end());
  allowed.insert("seeds");
  Block b(j, "sweep", allowed);
  SweepBlock s;
  for (const auto& name : kAxisNames) {
    if (!b.has(name)) continue;
    const auto& arr = b.at(name);
    const std::string key = "sweep." + name;
    if (!arr.is_array() || arr.empty()) throw ConfigError("key '" + key + "' must be a non-empty list");
    SweepAxis ax{name, {}};
    for (const auto& v : arr) {
      if (!v.is_number()) throw ConfigError("key '" + key + "' must contain numbers");
      ax.values.push_back(v.get<double>());
    }
    s.axes.push_back(std::move(ax));
  }
  if (b.has("seeds")) {
    const auto& arr = b.at("seeds");
    if (!arr.is_array() || arr.empty()) throw ConfigError("key 'sweep.seeds' must be a non-empty list");
    for (const auto& v : arr) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
        throw ConfigError("key 'sweep.seeds' must contain non-negative integers");
      s.seeds.push_back(v.get<std::uint64_t>());
    }
  }
  return s;
}

// ---------------------------------------------------------------- helpers

std::string safe_name(const std::string& s) {
  std::string out;
  for (char c : s) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.' || c == '=';
    out.push_back(ok ? c : '_');
  }
  return out;
}

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string hex64(std::uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::optional<int> first_below(const Trace& t, double thr) {
  for (const auto& r : t.records)
    if (r.err_fro && *r.err_fro <= thr) return r.k;
  return std::nullopt;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

Index as_index(double v, const std::string& axis) {
  if (v != std::floor(v) || v < 1) throw ConfigError("sweep axis '" + axis + "' needs positive integers");
  return static_cast<Index>(v);
}

json opt_json(const std::optional<int>& v) { return v ? json(*v) : json(nullptr); }

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

// ---------------------------------------------------------------- config

ExperimentConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  Block b(root, "", {"problem", "solvers", "output", "sweep"});
  ExperimentConfig cfg;
  cfg.problem = parse_problem(b.has("problem") ? b.at("problem") : json::object());
  if (!b.has("solvers")) throw ConfigError("missing key 'solvers'");
  const auto& arr = b.at("solvers");
  if (!arr.is_array()) throw ConfigError("key 'solvers' must be a list");
  if (arr.empty()) throw ConfigError("key 'solvers' must list at least one solver");
  std::set<std::string> labels;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    auto e = parse_solver(arr[i], "solvers[" + std::to_string(i) + "]");
    if (!labels.insert(e.label).second)
      throw ConfigError("duplicate solver label '" + e.label + "' in key 'solvers'");
    cfg.solvers.push_back(std::move(e));
  }
  if (b.has("output")) cfg.output = parse_output(b.at("output"));
  if (b.has("sweep")) cfg.sweep = parse_sweep(b.at("sweep"));
  cfg.hash = fnv1a(text);
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  return parse_config(io::read_text(path));
}

void apply_overrides(ExperimentConfig& cfg, const Overrides& ov) {
  if (ov.out) cfg.output.dir = *ov.out;
  if (ov.seed) cfg.problem.spec.seed = *ov.seed;
}

ProblemInstance build_instance(const ProblemBlock& block) {
  if (block.instance_file) return io::load_instance(*block.instance_file);
  const ProblemSpec& s = block.spec;
  if (s.ensemble != EnsembleKind::Custom) return make_instance(s);

  MeasurementEnsemble ens = io::load_ensemble(*block.ensemble_file);
  if (ens.n() != s.n)
    throw ConfigError("custom ensemble has n=" + std::to_string(ens.n()) +
                      " but problem.n=" + std::to_string(s.n));
  if (s.unit_normalization) ens = ens.with_normalization(1.0);
  GroundTruth truth = make_ground_truth(s.n, s.r_star, s.kappa, s.seed, s.truth_scale);
  Observations obs = observe(ens, truth, s.sigma, derive_seed(s.seed, stream::kNoise));
  ProblemInstance inst{std::move(ens), std::move(obs), std::move(truth), s.r};
  inst.validate();
  return inst;
}

SolverConfig resolve_solver(const SolverEntry& entry, double sigma) {
  SolverConfig c = entry.config;
  if (entry.sigma2_from_problem) c.damping = DampingSchedule::variance_proxy(sigma * sigma);
  if (entry.lp_root_from_loss && c.loss.kind == LossSpec::Kind::Lp)
    c.damping = DampingSchedule::lp_root(c.loss.p);
  return c;
}

// ---------------------------------------------------------------- generate

GenerateResult cmd_generate(const ExperimentConfig& cfg) {
  ProblemBlock block = cfg.problem;
  block.instance_file.reset();
  const ProblemInstance inst = build_instance(block);
  GenerateResult res{cfg.output.dir / "instance.bin"};
  io::save_instance(res.instance_path, inst);
  json meta = {{"n", inst.ensemble.n()},
               {"m", inst.ensemble.m()},
               {"r", inst.search_rank},
               {"ensemble", std::string(to_string(inst.ensemble.kind()))},
               {"normalization", inst.ensemble.normalization()},
               {"sigma2", inst.observations.sigma2},
               {"seed", block.spec.seed},
               {"config_hash", hex64(cfg.hash)}};
  if (inst.truth) {
    meta["r_star"] = inst.truth->r_star();
    meta["kappa"] = inst.truth->kappa();
  }
  io::write_text(cfg.output.dir / "instance.json", meta.dump(2) + "\n");
  return res;
}

// ---------------------------------------------------------------- run

namespace {

LabelSummary summarize(const std::string& label, const RunResult& res,
                       const std::optional<GroundTruth>& truth) {
  LabelSummary s;
  s.label = label;
  const auto& recs = res.trace.records;
  s.iterations = recs.empty() ? 0 : recs.back().k;
  s.last_f = recs.empty() ? std::numeric_limits<double>::quiet_NaN() : recs.back().f;
  s.best_k = res.best_k;
  s.final_err = truth ? factor_error(res.best, *truth) : std::numeric_limits<double>::quiet_NaN();
  s.iters_to_1e3 = first_below(res.trace, 1e-3);
  s.iters_to_1e6 = first_below(res.trace, 1e-6);
  s.iters_to_1e9 = first_below(res.trace, 1e-9);
  s.diverged = res.trace.diverged;
  s.stop = to_string(res.trace.stop);
  s.message = res.trace.message;
  return s;
}

}  // namespace

RunOutput run_experiment(const ExperimentConfig& cfg) {
  const ProblemInstance inst = build_instance(cfg.problem);
  Factor x0 = cfg.problem.x0_file
                  ? Factor(io::load_factor(*cfg.problem.x0_file))
                  : spectral_init(inst.ensemble, inst.observations.y, inst.search_rank);
  if (x0.rows() != inst.ensemble.n() || x0.cols() != inst.search_rank)
    throw ConfigError("initial factor must be n x r");
  const double sigma = std::sqrt(inst.observations.sigma2);
  RunOutput out;
  out.x0 = x0.matrix();
  for (const auto& entry : cfg.solvers) {
    RunResult res = run(inst, resolve_solver(entry, sigma), x0);
    out.summaries.push_back(summarize(entry.label, res, inst.truth));
    out.best.push_back(res.best.matrix());
    out.traces.emplace_back(entry.label, std::move(res.trace));
  }
  return out;
}

RunOutput cmd_run(const ExperimentConfig& cfg) {
  RunOutput out = run_experiment(cfg);
  const fs::path& dir = cfg.output.dir;
  json summary = json::object();
  summary["config_hash"] = hex64(cfg.hash);
  summary["solvers"] = json::array();
  io::save_factor(dir / "x0.csv", out.x0);
  for (std::size_t i = 0; i < out.summaries.size(); ++i) {
    const LabelSummary& s = out.summaries[i];
    const std::string name = safe_name(s.label);
    io::save_trace(dir / ("trace_" + name + ".csv"), out.traces[i].second);
    io::save_factor(dir / ("best_" + name + ".csv"), out.best[i]);
    summary["solvers"].push_back({{"label", s.label},
                                  {"final_err", finite_or_null(s.final_err)},
                                  {"last_f", finite_or_null(s.last_f)},
                                  {"iterations", s.iterations},
                                  {"best_k", s.best_k},
                                  {"iters_to_1e-3", opt_json(s.iters_to_1e3)},
                                  {"iters_to_1e-6", opt_json(s.iters_to_1e6)},
                                  {"iters_to_1e-9", opt_json(s.iters_to_1e9)},
                                  {"diverged", s.diverged},
                                  {"stop", s.stop},
                                  {"message", s.message}});
  }
  io::write_text(dir / "summary.json", summary.dump(2) + "\n");
  if (cfg.output.plot) {
    std::vector<PlotSeries> series;
    for (const auto& [label, trace] : out.traces)
      if (!trace.records.empty()) series.push_back({"run", label, trace.records});
    if (!series.empty()) cmd_plot(series, dir, "plot", cfg.output.plot_cols, cfg.hash);
  }
  return out;
}

// ---------------------------------------------------------------- sweep

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw DomainError("loglog_slope: need >= 2 points");
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw DomainError("loglog_slope: values must be positive");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  if (!(sxx > 0.0)) throw DomainError("loglog_slope: x values must not all be equal");
  return sxy / sxx;
}

namespace {

struct CellSpec {
  std::vector<std::pair<std::string, double>> key;
  ProblemSpec spec;
  std::optional<double> p;
  std::string name;
};

std::vector<CellSpec> expand_cells(const ExperimentConfig& cfg) {
  std::vector<CellSpec> cells;
  const auto& axes = cfg.sweep.axes;
  std::vector<std::size_t> idx(axes.size(), 0);
  while (true) {
    CellSpec c;
    c.spec = cfg.problem.spec;
    for (std::size_t a = 0; a < axes.size(); ++a) {
      const double v = axes[a].values[idx[a]];
      const std::string& nm = axes[a].name;
      c.key.emplace_back(nm, v);
      if (nm == "n") c.spec.n = as_index(v, nm);
      else if (nm == "r_star") c.spec.r_star = as_index(v, nm);
      else if (nm == "r") c.spec.r = as_index(v, nm);
      else if (nm == "m") c.spec.m = as_index(v, nm);
      else if (nm == "kappa") c.spec.kappa = v;
      else if (nm == "sigma") c.spec.sigma = v;
      else if (nm == "p") c.p = v;
    }
    if (c.spec.ensemble == EnsembleKind::Identity) c.spec.m = c.spec.n * c.spec.n;
    if (c.spec.r_star > c.spec.n || c.spec.r > c.spec.n)
      throw ConfigError("sweep produces a cell with rank above n");
    if (c.spec.sigma < 0.0) throw ConfigError("sweep axis 'sigma' must be >= 0");
    if (c.p && !(*c.p >= 1.0 && *c.p < 2.0)) throw ConfigError("sweep axis 'p' must lie in [1, 2)");
    for (const auto& [nm, v] : c.key) c.name += (c.name.empty() ? "" : "_") + nm + "=" + fmt_g(v);
    if (c.name.empty()) c.name = "cell";
    cells.push_back(std::move(c));

    std::size_t a = axes.size();
    while (a > 0) {
      --a;
      if (++idx[a] < axes[a].values.size()) break;
      idx[a] = 0;
      if (a == 0) return cells;
    }
    if (axes.empty()) return cells;
  }
}

SolverConfig cell_solver(const SolverEntry& e, const CellSpec& cell) {
  SolverEntry copy = e;
  if (cell.p && copy.config.loss.kind == LossSpec::Kind::Lp) {
    copy.config.loss.p = *cell.p;
    if (copy.config.damping.kind == DampingSchedule::Kind::LpRoot) copy.lp_root_from_loss = true;
  }
  return resolve_solver(copy, cell.spec.sigma);
}

struct TaskOut {
  std::vector<double> err2;  // per solver
  std::vector<bool> diverged;
  std::vector<Trace> traces;  // kept for the first seed only
};

}  // namespace

SweepResult run_sweep(const ExperimentConfig& cfg) {
  if (cfg.problem.instance_file) throw ConfigError("sweeps generate instances; drop problem.instance_file");
  const std::vector<CellSpec> cells = expand_cells(cfg);
  std::vector<std::uint64_t> seeds = cfg.sweep.seeds;
  if (seeds.empty()) seeds.push_back(cfg.problem.spec.seed);
  const std::size_t ns = seeds.size();
  const std::size_t nsolv = cfg.solvers.size();
  const std::size_t ntasks = cells.size() * ns;

  std::vector<TaskOut> outs(ntasks);
  std::vector<std::exception_ptr> errors(ntasks);
  std::optional<Matrix> x0_override;
  if (cfg.problem.x0_file) x0_override = io::load_factor(*cfg.problem.x0_file);

#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(ntasks); ++t) {
    try {
      const auto ti = static_cast<std::size_t>(t);
      const CellSpec& cell = cells[ti / ns];
      const std::size_t si = ti % ns;
      ProblemBlock block = cfg.problem;
      block.spec = cell.spec;
      block.spec.seed = seeds[si];
      const ProblemInstance inst = build_instance(block);
      const Factor x0 = x0_override ? Factor(*x0_override)
                                    : spectral_init(inst.ensemble, inst.observations.y,
                                                    inst.search_rank);
      TaskOut& o = outs[ti];
      for (const auto& e : cfg.solvers) {
        RunResult res = run(inst, cell_solver(e, cell), x0);
        const double err = inst.truth ? factor_error(res.best, *inst.truth)
                                      : std::numeric_limits<double>::quiet_NaN();
        o.err2.push_back(err * err);
        o.diverged.push_back(res.trace.diverged);
        if (si == 0) o.traces.push_back(std::move(res.trace));
      }
    } catch (...) {
      errors[static_cast<std::size_t>(t)] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  // Deterministic join: order by key values, then by solver position.
  std::vector<std::size_t> order(cells.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    for (std::size_t k = 0; k < cells[a].key.size(); ++k)
      if (cells[a].key[k].second != cells[b].key[k].second)
        return cells[a].key[k].second < cells[b].key[k].second;
    return false;
  });

  SweepResult result;
  for (std::size_t ci : order) {
    const CellSpec& cell = cells[ci];
    for (std::size_t s = 0; s < nsolv; ++s) {
      SweepCell sc;
      sc.key = cell.key;
      sc.label = cfg.solvers[s].label;
      for (std::size_t si = 0; si < ns; ++si) {
        const TaskOut& o = outs[ci * ns + si];
        sc.err2.push_back(o.err2[s]);
        sc.diverged += o.diverged[s] ? 1 : 0;
      }
      sc.median_err2 = median(sc.err2);
      const auto& sp = cell.spec;
      const double nn = static_cast<double>(sp.n);
      sc.e_stat_ref = sp.sigma * sp.sigma * nn * static_cast<double>(sp.r) * std::log(nn) /
                      static_cast<double>(sp.m);
      result.cells.push_back(std::move(sc));
    }
  }

  for (const std::string axis : {"sigma", "m"}) {
    const auto it = std::find_if(cfg.sweep.axes.begin(), cfg.sweep.axes.end(),
                                 [&](const SweepAxis& a) { return a.name == axis; });
    if (it == cfg.sweep.axes.end() || it->values.size() < 2) continue;
    // group -> label -> points
    std::map<std::string, std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>> groups;
    for (const auto& c : result.cells) {
      std::string group;
      double xv = 0.0;
      for (const auto& [nm, v] : c.key) {
        if (nm == axis) {
          xv = v;
        } else {
          group += (group.empty() ? "" : "_") + nm + "=" + fmt_g(v);
        }
      }
      if (group.empty()) group = "-";
      auto& pts = groups[group][c.label];
      pts.first.push_back(xv);
      pts.second.push_back(c.median_err2);
    }
    for (const auto& [group, by_label] : groups) {
      for (const auto& e : cfg.solvers) {
        const auto f = by_label.find(e.label);
        if (f == by_label.end()) continue;
        SlopeFit fit{axis, e.label, group, std::numeric_limits<double>::quiet_NaN(),
                     static_cast<int>(f->second.first.size())};
        try {
          fit.slope = loglog_slope(f->second.first, f->second.second);
        } catch (const DomainError&) {
        }
        result.fits.push_back(fit);
      }
    }
  }

  for (std::size_t ci : order)
    for (std::size_t sidx = 0; sidx < nsolv; ++sidx)
      result.first_seed_traces.push_back(
          {cells[ci].name, cfg.solvers[sidx].label, std::move(outs[ci * ns].traces[sidx])});
  return result;
}

SweepResult cmd_sweep(const ExperimentConfig& cfg) {
  SweepResult res = run_sweep(cfg);
  const fs::path& dir = cfg.output.dir;

  std::ostringstream table;
  table.precision(10);
  for (const auto& ax : cfg.sweep.axes) table << ax.name << ',';
  table << "label,median_err2,seeds,diverged,e_stat_ref,ratio_to_e_stat\n";
  for (const auto& c : res.cells) {
    for (const auto& kv : c.key) table << kv.second << ',';
    table << c.label << ',' << c.median_err2 << ',' << c.err2.size() << ',' << c.diverged << ','
          << c.e_stat_ref << ',';
    if (c.e_stat_ref > 0.0) table << c.median_err2 / c.e_stat_ref;
    table << '\n';
  }
  io::write_text(dir / "sweep.csv", table.str());

  std::ostringstream fits;
  fits.precision(10);
  fits << "axis,label,group,slope,points\n";
  for (const auto& f : res.fits) {
    fits << f.axis << ',' << f.label << ',' << f.group << ',';
    if (std::isfinite(f.slope)) fits << f.slope;
    fits << ',' << f.points << '\n';
  }
  io::write_text(dir / "sweep_fits.csv", fits.str());

  std::vector<PlotSeries> series;
  for (const auto& ct : res.first_seed_traces) {
    io::save_trace(dir / "traces" / safe_name(ct.cell) / ("trace_" + safe_name(ct.label) + ".csv"),
                   ct.trace);
    if (!ct.trace.records.empty()) series.push_back({ct.cell, ct.label, ct.trace.records});
  }
  if (cfg.output.plot && !series.empty())
    cmd_plot(series, dir, "sweep_plot", cfg.output.plot_cols, cfg.hash);
  return res;
}

// ---------------------------------------------------------------- diagnose

DiagnosticsReport cmd_diagnose(const ExperimentConfig& cfg, const fs::path& factor, bool write_file) {
  const ProblemInstance inst = build_instance(cfg.problem);
  const Matrix x = io::load_factor(factor);
  if (x.rows() != inst.ensemble.n())
    throw ConfigError("factor has " + std::to_string(x.rows()) + " rows but n=" +
                      std::to_string(inst.ensemble.n()));
  DiagnosticsOptions opts;
  opts.seed = cfg.problem.spec.seed;
  DiagnosticsReport rep = diagnose(inst, x, opts);
  if (write_file) io::write_text(cfg.output.dir / "diagnostics.txt", rep.to_key_value());
  return rep;
}

// ---------------------------------------------------------------- plot

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                          "#8c564b", "#e377c2", "#17becf", "#7f7f7f", "#bcbd22"};

struct Curve {
  std::string panel;
  std::string label;
  std::vector<std::pair<int, double>> pts;  // k, log10 value
  bool diverged = false;
  bool uses_error = true;
};

constexpr std::size_t kMaxPoints = 400;
constexpr double kLogFloor = -20.0;

Curve resample(const PlotSeries& s) {
  if (s.records.empty()) throw IoError("trace for '" + s.label + "' has no records");
  Curve c;
  c.panel = s.panel;
  c.label = s.label;
  c.uses_error = std::all_of(s.records.begin(), s.records.end(),
                             [](const IterationRecord& r) { return r.err_fro.has_value(); });
  const std::size_t n = s.records.size();
  std::vector<std::size_t> picks;
  if (n <= kMaxPoints) {
    for (std::size_t i = 0; i < n; ++i) picks.push_back(i);
  } else {
    for (std::size_t i = 0; i < kMaxPoints; ++i) {
      const std::size_t j = static_cast<std::size_t>(
          std::llround(static_cast<double>(i) * static_cast<double>(n - 1) / (kMaxPoints - 1)));
      if (picks.empty() || picks.back() != j) picks.push_back(j);
    }
  }
  for (std::size_t i : picks) {
    const auto& r = s.records[i];
    const double v = c.uses_error ? *r.err_fro : r.f;
    if (!std::isfinite(v)) continue;
    c.pts.emplace_back(r.k, v > 0.0 ? std::max(std::log10(v), kLogFloor) : kLogFloor);
  }
  const RecordFlag last = s.records.back().flag;
  c.diverged = last == RecordFlag::Diverged || last == RecordFlag::Singular;
  return c;
}

std::string xml_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '&': o += "&amp;"; break;
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '"': o += "&quot;"; break;
      default: o.push_back(c);
    }
  }
  return o;
}

}  // namespace

std::string render_svg(const std::vector<PlotSeries>& series, int cols, std::uint64_t config_hash) {
  if (series.empty()) throw IoError("plot: no traces given");
  if (cols < 1) cols = 1;
  std::vector<Curve> curves;
  for (const auto& s : series) curves.push_back(resample(s));

  std::vector<std::string> panels;
  std::vector<std::string> labels;
  for (const auto& c : curves) {
    if (std::find(panels.begin(), panels.end(), c.panel) == panels.end()) panels.push_back(c.panel);
    if (std::find(labels.begin(), labels.end(), c.label) == labels.end()) labels.push_back(c.label);
  }
  const int np = static_cast<int>(panels.size());
  const int ncol = std::min(cols, np);
  const int nrow = (np + ncol - 1) / ncol;
  const double pw = 420, ph = 300, ml = 60, mr = 20, mt = 34, mb = 44;
  const double W = pw * ncol, H = ph * nrow;

  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" viewBox=\"0 0 " << W << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<metadata>precgd config_hash=" << hex64(config_hash) << "</metadata>\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  for (int p = 0; p < np; ++p) {
    const double ox = pw * (p % ncol), oy = ph * (p / ncol);
    const double x0 = ox + ml, x1 = ox + pw - mr, y0 = oy + mt, y1 = oy + ph - mb;
    double kmax = 1, vmin = 1e300, vmax = -1e300;
    bool any_err = false, any_f = false;
    for (const auto& c : curves) {
      if (c.panel != panels[p]) continue;
      (c.uses_error ? any_err : any_f) = true;
      for (const auto& [k, v] : c.pts) {
        kmax = std::max(kmax, static_cast<double>(k));
        vmin = std::min(vmin, v);
        vmax = std::max(vmax, v);
      }
    }
    if (vmin > vmax) vmin = -1, vmax = 0;
    vmin = std::floor(vmin);
    vmax = std::ceil(vmax);
    if (vmax - vmin < 1) vmax = vmin + 1;
    auto sx = [&](double k) { return x0 + (x1 - x0) * k / kmax; };
    auto sy = [&](double v) { return y1 - (y1 - y0) * (v - vmin) / (vmax - vmin); };

    os << "<g>\n";
    os << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << oy + 18
       << "\" text-anchor=\"middle\" font-size=\"13\">" << xml_escape(panels[p]) << "</text>\n";
    os << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << x1 - x0 << "\" height=\""
       << y1 - y0 << "\" fill=\"none\" stroke=\"black\"/>\n";
    const int ystep = std::max(1, static_cast<int>(std::ceil((vmax - vmin) / 8)));
    for (int t = static_cast<int>(vmin); t <= static_cast<int>(vmax); t += ystep) {
      os << "<line x1=\"" << x0 << "\" x2=\"" << x1 << "\" y1=\"" << sy(t) << "\" y2=\"" << sy(t)
         << "\" stroke=\"#dddddd\"/>\n";
      os << "<text x=\"" << x0 - 6 << "\" y=\"" << sy(t) + 4 << "\" text-anchor=\"end\">1e" << t
         << "</text>\n";
    }
    for (int t = 0; t <= 4; ++t) {
      const double k = kmax * t / 4;
      os << "<text x=\"" << sx(k) << "\" y=\"" << y1 + 14 << "\" text-anchor=\"middle\">"
         << static_cast<long long>(std::llround(k)) << "</text>\n";
    }
    os << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << y1 + 32
       << "\" text-anchor=\"middle\">iteration</text>\n";
    const std::string ylab = any_err && !any_f ? "error" : (any_f && !any_err ? "loss" : "error / loss");
    os << "<text transform=\"translate(" << ox + 14 << ',' << (y0 + y1) / 2
       << ") rotate(-90)\" text-anchor=\"middle\">" << ylab << "</text>\n";

    int li = 0;
    for (const auto& c : curves) {
      if (c.panel != panels[p]) continue;
      const auto col_idx = static_cast<std::size_t>(
          std::find(labels.begin(), labels.end(), c.label) - labels.begin());
      const char* color = kPalette[col_idx % (sizeof kPalette / sizeof *kPalette)];
      if (!c.pts.empty()) {
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& [k, v] : c.pts) os << sx(k) << ',' << sy(v) << ' ';
        os << "\"/>\n";
        if (c.diverged) {
          const double cx = sx(c.pts.back().first), cy = sy(c.pts.back().second);
          os << "<path d=\"M" << cx - 5 << ',' << cy - 5 << " L" << cx + 5 << ',' << cy + 5 << " M"
             << cx - 5 << ',' << cy + 5 << " L" << cx + 5 << ',' << cy - 5 << "\" stroke=\""
             << color << "\" stroke-width=\"2\"/>\n";
        }
      }
      const double lx = x1 - 165, ly = y0 + 14 + 14 * li;
      os << "<line x1=\"" << lx << "\" x2=\"" << lx + 18 << "\" y1=\"" << ly - 4 << "\" y2=\""
         << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
      os << "<text x=\"" << lx + 22 << "\" y=\"" << ly << "\">" << xml_escape(c.label)
         << (c.diverged ? " (diverged)" : "") << "</text>\n";
      ++li;
    }
    os << "</g>\n";
  }
  os << "</svg>\n";
  return os.str();
}

PlotFiles cmd_plot(const std::vector<PlotSeries>& series, const fs::path& out_dir,
                   const std::string& stem, int cols, std::uint64_t config_hash) {
  const std::string svg = render_svg(series, cols, config_hash);
  std::ostringstream csv;
  csv.precision(17);
  csv << "panel,label,k,log10_value,metric,diverged\n";
  for (const auto& s : series) {
    const Curve c = resample(s);
    for (const auto& [k, v] : c.pts)
      csv << c.panel << ',' << c.label << ',' << k << ',' << v << ','
          << (c.uses_error ? "err_fro" : "f") << ',' << (c.diverged ? 1 : 0) << '\n';
  }
  PlotFiles files{out_dir / (stem + ".svg"), out_dir / (stem + ".csv")};
  io::write_text(files.svg, svg);
  io::write_text(files.csv, csv.str());
  return files;
}

}  // namespace precgd::exp
