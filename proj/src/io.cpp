#include "precgd/io.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace precgd::io {

namespace fs = std::filesystem;

namespace {

constexpr std::array<char, 8> kMagic = {'P', 'R', 'E', 'C', 'G', 'D', 'I', '\0'};
constexpr std::uint32_t kVersion = 1;

std::ofstream open_out(const fs::path& path, std::ios::openmode mode) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream os(path, mode);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  return os;
}

std::ifstream open_in(const fs::path& path, std::ios::openmode mode) {
  std::ifstream is(path, mode);
  if (!is) throw IoError("cannot open " + path.string() + " for reading");
  return is;
}

class BinWriter {
 public:
  explicit BinWriter(std::ostream& os) : os_(os) {}
  template <class T>
  void put(const T& v) {
    os_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void put_doubles(const double* p, std::size_t count) {
    os_.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(count * sizeof(double)));
  }

 private:
  std::ostream& os_;
};

class BinReader {
 public:
  BinReader(std::istream& is, std::string what) : is_(is), what_(std::move(what)) {}
  template <class T>
  T get() {
    T v{};
    is_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is_) throw IoError(what_ + ": truncated file");
    return v;
  }
  std::vector<double> get_doubles(std::size_t count) {
    std::vector<double> v(count);
    is_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (!is_) throw IoError(what_ + ": truncated file");
    return v;
  }

 private:
  std::istream& is_;
  std::string what_;
};

// Upper bound on element counts read from headers, to reject garbage before allocating.
constexpr std::uint64_t kMaxElems = std::uint64_t{1} << 31;

void check_count(std::uint64_t count, const std::string& what) {
  if (count > kMaxElems) throw IoError(what + ": implausible size in header");
}

void write_opt(std::ostream& os, const std::optional<double>& v) {
  if (v) os << *v;
}

std::optional<double> parse_opt(const std::string& cell, const std::string& where) {
  if (cell.empty()) return std::nullopt;
  double v = 0.0;
  const char* b = cell.data();
  const char* e = b + cell.size();
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e) {
    // from_chars rejects "inf"/"nan" spellings produced by iostreams on some platforms.
    if (cell == "inf") return std::numeric_limits<double>::infinity();
    if (cell == "-inf") return -std::numeric_limits<double>::infinity();
    if (cell == "nan" || cell == "-nan") return std::numeric_limits<double>::quiet_NaN();
    throw IoError(where + ": cannot parse number '" + cell + "'");
  }
  return v;
}

double parse_req(const std::string& cell, const std::string& where) {
  auto v = parse_opt(cell, where);
  if (!v) throw IoError(where + ": missing required value");
  return *v;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

RecordFlag parse_flag(const std::string& s, const std::string& where) {
  for (RecordFlag f :
       {RecordFlag::Ok, RecordFlag::Diverged, RecordFlag::Singular, RecordFlag::Converged})
    if (to_string(f) == s) return f;
  throw IoError(where + ": unknown flag '" + s + "'");
}

}  // namespace

void save_instance(const fs::path& path, const ProblemInstance& inst) {
  auto os = open_out(path, std::ios::binary | std::ios::trunc);
  BinWriter w(os);
  const auto& ens = inst.ensemble;
  for (char c : kMagic) w.put(c);
  w.put(kVersion);
  w.put(static_cast<std::uint32_t>(ens.kind()));
  w.put(static_cast<std::uint64_t>(ens.n()));
  w.put(static_cast<std::uint64_t>(ens.m()));
  w.put(ens.normalization());
  w.put(static_cast<std::uint64_t>(inst.search_rank));
  w.put(inst.observations.sigma2);
  w.put(inst.observations.noise_seed);
  w.put(static_cast<std::uint8_t>(inst.truth ? 1 : 0));
  const auto ops = ens.data();
  w.put(static_cast<std::uint64_t>(ops.size()));
  w.put_doubles(ops.data(), ops.size());
  w.put_doubles(inst.observations.y.data(), static_cast<std::size_t>(inst.observations.y.size()));
  if (inst.truth) {
    const Matrix& z = inst.truth->z();
    w.put(static_cast<std::uint64_t>(z.cols()));
    w.put_doubles(z.data(), static_cast<std::size_t>(z.size()));
  }
  if (!os) throw IoError("write failed for " + path.string());
}

ProblemInstance load_instance(const fs::path& path) {
  auto is = open_in(path, std::ios::binary);
  const std::string what = path.string();
  BinReader r(is, what);
  for (char c : kMagic)
    if (r.get<char>() != c) throw IoError(what + ": not a precgd instance file");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw IoError(what + ": unsupported version " + std::to_string(version));
  const auto kind_raw = r.get<std::uint32_t>();
  if (kind_raw > static_cast<std::uint32_t>(EnsembleKind::Custom))
    throw IoError(what + ": unknown ensemble kind");
  const auto kind = static_cast<EnsembleKind>(kind_raw);
  const auto n = r.get<std::uint64_t>();
  const auto m = r.get<std::uint64_t>();
  check_count(n * n, what);
  check_count(m, what);
  const double norm = r.get<double>();
  const auto rank = r.get<std::uint64_t>();
  Observations obs;
  obs.sigma2 = r.get<double>();
  obs.noise_seed = r.get<std::uint64_t>();
  const auto has_truth = r.get<std::uint8_t>();
  const auto ops_count = r.get<std::uint64_t>();
  check_count(ops_count, what);
  std::vector<double> ops = r.get_doubles(ops_count);
  const std::vector<double> y = r.get_doubles(m);
  obs.y = Eigen::Map<const Vector>(y.data(), static_cast<Index>(m));

  std::optional<GroundTruth> truth;
  if (has_truth) {
    const auto rs = r.get<std::uint64_t>();
    check_count(n * rs, what);
    const std::vector<double> zd = r.get_doubles(n * rs);
    truth = GroundTruth::from_factor(
        Eigen::Map<const Matrix>(zd.data(), static_cast<Index>(n), static_cast<Index>(rs)));
  }
  try {
    auto ens = MeasurementEnsemble::restore(kind, static_cast<Index>(n), static_cast<Index>(m), norm,
                                            std::move(ops));
    ProblemInstance inst{std::move(ens), std::move(obs), std::move(truth),
                         static_cast<Index>(rank)};
    inst.validate();
    return inst;
  } catch (const IoError&) {
    throw;
  } catch (const std::exception& e) {
    throw IoError(what + ": inconsistent content: " + e.what());
  }
}

void save_ensemble(const fs::path& path, const MeasurementEnsemble& ens) {
  if (ens.kind() == EnsembleKind::Identity)
    throw IoError("identity ensembles have no stored matrices");
  auto os = open_out(path, std::ios::binary | std::ios::trunc);
  BinWriter w(os);
  w.put(static_cast<std::uint64_t>(ens.n()));
  w.put(static_cast<std::uint64_t>(ens.m()));
  const Index n = ens.n();
  std::vector<double> row_major(static_cast<std::size_t>(n * n));
  for (Index i = 0; i < ens.m(); ++i) {
    const auto a = ens.matrix(i);
    for (Index r = 0; r < n; ++r)
      for (Index c = 0; c < n; ++c) row_major[static_cast<std::size_t>(r * n + c)] = a(r, c);
    w.put_doubles(row_major.data(), row_major.size());
  }
  if (!os) throw IoError("write failed for " + path.string());
}

MeasurementEnsemble load_ensemble(const fs::path& path) {
  auto is = open_in(path, std::ios::binary);
  const std::string what = path.string();
  BinReader r(is, what);
  const auto n = r.get<std::uint64_t>();
  const auto m = r.get<std::uint64_t>();
  if (n == 0 || m == 0) throw IoError(what + ": n and m must be positive");
  check_count(n * n, what);
  check_count(m * n * n, what);
  std::vector<double> flat = r.get_doubles(m * n * n);
  try {
    return MeasurementEnsemble::custom(static_cast<Index>(n), static_cast<Index>(m), std::move(flat));
  } catch (const std::exception& e) {
    throw IoError(what + ": " + e.what());
  }
}

void save_factor(const fs::path& path, const Matrix& x) {
  auto os = open_out(path, std::ios::trunc);
  os.precision(17);
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.cols(); ++j) {
      if (j) os << ',';
      os << x(i, j);
    }
    os << '\n';
  }
  if (!os) throw IoError("write failed for " + path.string());
}

Matrix load_factor(const fs::path& path) {
  auto is = open_in(path, {});
  const std::string what = path.string();
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    std::vector<double> row;
    for (const auto& cell : split_csv(line)) row.push_back(parse_req(cell, what));
    if (!rows.empty() && row.size() != rows.front().size())
      throw IoError(what + ": ragged factor rows");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw IoError(what + ": empty factor file");
  Matrix x(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = 0; j < x.cols(); ++j) x(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return x;
}

void write_trace(std::ostream& os, const Trace& trace) {
  const auto old_prec = os.precision(17);
  os << kTraceHeader << '\n';
  for (const auto& rec : trace.records) {
    os << rec.k << ',' << rec.f << ',';
    write_opt(os, rec.eta);
    os << ',';
    write_opt(os, rec.alpha);
    os << ',' << rec.grad_fro << ',';
    write_opt(os, rec.grad_dual_p);
    os << ',' << rec.lambda_min_gram << ',';
    write_opt(os, rec.err_fro);
    os << ',';
    write_opt(os, rec.sin_theta_rstar);
    os << ',';
    write_opt(os, rec.pl_ratio);
    os << ',' << rec.wall_ns << ',' << to_string(rec.flag) << '\n';
  }
  os.precision(old_prec);
}

void save_trace(const fs::path& path, const Trace& trace) {
  auto os = open_out(path, std::ios::trunc);
  write_trace(os, trace);
  if (!os) throw IoError("write failed for " + path.string());
}

std::vector<IterationRecord> read_trace(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw IoError("trace: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kTraceHeader) throw IoError("trace: unexpected header '" + line + "'");
  std::vector<IterationRecord> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const std::string where = "trace line " + std::to_string(lineno);
    const auto c = split_csv(line);
    if (c.size() != 12) throw IoError(where + ": expected 12 columns, got " + std::to_string(c.size()));
    IterationRecord rec;
    rec.k = static_cast<int>(parse_req(c[0], where));
    rec.f = parse_req(c[1], where);
    rec.eta = parse_opt(c[2], where);
    rec.alpha = parse_opt(c[3], where);
    rec.grad_fro = parse_req(c[4], where);
    rec.grad_dual_p = parse_opt(c[5], where);
    rec.lambda_min_gram = parse_req(c[6], where);
    rec.err_fro = parse_opt(c[7], where);
    rec.sin_theta_rstar = parse_opt(c[8], where);
    rec.pl_ratio = parse_opt(c[9], where);
    rec.wall_ns = static_cast<std::int64_t>(parse_req(c[10], where));
    rec.flag = parse_flag(c[11], where);
    out.push_back(rec);
  }
  return out;
}

std::vector<IterationRecord> load_trace(const fs::path& path) {
  auto is = open_in(path, {});
  return read_trace(is);
}

std::string read_text(const fs::path& path) {
  auto is = open_in(path, {});
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  auto os = open_out(path, std::ios::trunc);
  os << text;
  if (!os) throw IoError("write failed for " + path.string());
}

}  // namespace precgd::io
