#pragma once

// Operating-point / frequency grids, admittance sample generation and the
// CSV interchange format
//
//   ibr,V,P,Q,f_hz,g_dd,b_dd,g_dq,b_dq,g_qd,b_qd,g_qq,b_qq
//
// with every number printed to 17 significant digits.

#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ibrkit/error.hpp"
#include "ibrkit/ibr_models.hpp"

namespace ibrkit {

enum class GridRole { Train, Test };

struct GridSpec {
  std::vector<double> v_values{0.9, 1.0, 1.1};
  double p_min = -1.0, p_max = 1.0, p_step = 0.5;
  double q_min = -1.0, q_max = 1.0, q_step = 0.5;
  double f_min = 1.0, f_max = 200.0;
  std::size_t n_freq = 100;
  GridRole role = GridRole::Train;

  static GridSpec training() { return {}; }

  static GridSpec testing() {
    GridSpec s;
    s.p_step = 0.2;
    s.q_step = 0.2;
    s.n_freq = 200;
    s.role = GridRole::Test;
    return s;
  }

  void validate() const {
    if (v_values.empty()) throw Error("grid: no voltage values");
    if (!(p_step > 0.0) || !(q_step > 0.0)) throw Error("grid: steps must be positive");
    if (p_max < p_min || q_max < q_min) throw Error("grid: empty P or Q range");
    if (!(f_min > 0.0) || !(f_max >= f_min)) throw Error("grid: need 0 < f_min <= f_max");
    if (n_freq < 1 || (n_freq < 2 && f_max != f_min))
      throw Error("grid: need at least two frequencies for a range");
  }
};

namespace detail {

// min + k*step for k = 0..n-1 where n covers [min, max] inclusive; values are
// snapped to 1e-9, e.g. -1 + 3*0.2 becomes exactly -0.4.
inline std::vector<double> step_values(double min, double max, double step) {
  const auto n = static_cast<long>(std::floor((max - min) / step + 1e-9)) + 1;
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(n));
  for (long k = 0; k < n; ++k) v.push_back(std::round((min + k * step) * 1e9) / 1e9);
  return v;
}

}  // namespace detail

/// Feasible (V, P, Q) points ordered V outer, P middle, Q inner, all ascending.
inline std::vector<OperatingPoint> operating_points(const GridSpec& spec) {
  spec.validate();
  const auto ps = detail::step_values(spec.p_min, spec.p_max, spec.p_step);
  const auto qs = detail::step_values(spec.q_min, spec.q_max, spec.q_step);
  std::vector<OperatingPoint> ops;
  for (double v : spec.v_values)
    for (double p : ps)
      for (double q : qs) {
        OperatingPoint op{v, p, q};
        if (op.feasible()) ops.push_back(op);
      }
  return ops;
}

/// n_freq points evenly spaced in log10 between f_min and f_max, endpoints exact.
inline std::vector<double> frequency_grid(double f_min, double f_max, std::size_t n) {
  if (!(f_min > 0.0) || n < 1) throw Error("frequency_grid: need f_min > 0 and n >= 1");
  if (n == 1) return {f_min};
  std::vector<double> f(n);
  const double a = std::log10(f_min), b = std::log10(f_max);
  for (std::size_t k = 0; k < n; ++k)
    f[k] = std::pow(10.0, a + static_cast<double>(k) * (b - a) / static_cast<double>(n - 1));
  f.front() = f_min;
  f.back() = f_max;
  return f;
}

inline std::vector<double> frequency_grid(const GridSpec& spec) {
  spec.validate();
  return frequency_grid(spec.f_min, spec.f_max, spec.n_freq);
}

/// One dataset row: inputs (V, P, Q, f) and the eight real outputs.
struct AdmittanceSample {
  std::string ibr;
  double V = 0, P = 0, Q = 0, f = 0;
  double g_dd = 0, b_dd = 0, g_dq = 0, b_dq = 0, g_qd = 0, b_qd = 0, g_qq = 0, b_qq = 0;

  static constexpr std::size_t kOutputs = 8;
  static constexpr std::array<const char*, kOutputs> kOutputNames{
      "g_dd", "b_dd", "g_dq", "b_dq", "g_qd", "b_qd", "g_qq", "b_qq"};

  std::array<double, kOutputs> outputs() const {
    return {g_dd, b_dd, g_dq, b_dq, g_qd, b_qd, g_qq, b_qq};
  }

  void set_outputs(const std::array<double, kOutputs>& y) {
    g_dd = y[0], b_dd = y[1], g_dq = y[2], b_dq = y[3];
    g_qd = y[4], b_qd = y[5], g_qq = y[6], b_qq = y[7];
  }

  OperatingPoint op() const { return {V, P, Q}; }

  static AdmittanceSample from(const std::string& ibr, const OperatingPoint& op,
                               const AdmittanceMatrix& y) {
    AdmittanceSample s;
    s.ibr = ibr;
    s.V = op.V, s.P = op.P, s.Q = op.Q, s.f = y.f;
    s.set_outputs({y.Ydd.real(), y.Ydd.imag(), y.Ydq.real(), y.Ydq.imag(), y.Yqd.real(),
                   y.Yqd.imag(), y.Yqq.real(), y.Yqq.imag()});
    return s;
  }

  friend bool operator==(const AdmittanceSample&, const AdmittanceSample&) = default;
};

/// One sample per (IBR, operating point, frequency), in that nesting order.
inline std::vector<AdmittanceSample> generate(const std::vector<InverterParams>& ibrs,
                                              const GridSpec& spec) {
  const auto ops = operating_points(spec);
  const auto freqs = frequency_grid(spec);
  std::vector<AdmittanceSample> out;
  out.reserve(ibrs.size() * ops.size() * freqs.size());
  for (const auto& ibr : ibrs) {
    for (const auto& op : ops) {
      double f_now = freqs.front();
      try {
        const auto sys = linearize(ibr, op);
        for (double f : freqs) {
          f_now = f;
          const auto y = admittance_at(sys, f);
          if (!y.finite()) throw Error("non-finite admittance");
          out.push_back(AdmittanceSample::from(ibr.name, op, y));
        }
      } catch (const Error& e) {
        std::ostringstream os;
        os << "generate: " << ibr.name << " at (V=" << op.V << ", P=" << op.P << ", Q=" << op.Q
           << ", f=" << f_now << " Hz): " << e.what();
        throw Error(os.str());
      }
    }
  }
  return out;
}

inline constexpr std::string_view kCsvHeader =
    "ibr,V,P,Q,f_hz,g_dd,b_dd,g_dq,b_dq,g_qd,b_qd,g_qq,b_qq";

inline std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

/// Writes one row (without newline); `extra` is appended as-is when non-empty.
inline void write_csv_row(std::ostream& out, const AdmittanceSample& s,
                          std::string_view extra = {}) {
  out << s.ibr;
  for (double x : {s.V, s.P, s.Q, s.f}) out << ',' << format_double(x);
  for (double x : s.outputs()) out << ',' << format_double(x);
  if (!extra.empty()) out << ',' << extra;
}

inline void write_csv(std::ostream& out, const std::vector<AdmittanceSample>& samples) {
  out << kCsvHeader << '\n';
  for (const auto& s : samples) {
    write_csv_row(out, s);
    out << '\n';
  }
}

inline void write_csv(const std::filesystem::path& path,
                      const std::vector<AdmittanceSample>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_csv(out, samples);
}

namespace detail {

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    parts.push_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

inline double parse_double(std::string_view s, std::size_t line) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || ptr != end || s.empty())
    throw ParseError("line " + std::to_string(line) + ": bad number '" + std::string(s) + "'",
                     line);
  return v;
}

inline std::string_view trim_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

}  // namespace detail

/**
 * Reads a dataset CSV. Lines starting with '#' are comments. A trailing
 * `source` column (prediction files) is accepted and ignored.
 */
inline std::vector<AdmittanceSample> read_csv(std::istream& in) {
  std::vector<AdmittanceSample> out;
  std::string raw;
  std::size_t lineno = 0;
  bool header_seen = false;
  std::size_t n_fields = 13;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto line = detail::trim_cr(raw);
    if (line.empty() || line.front() == '#') continue;
    if (!header_seen) {
      if (line == kCsvHeader) {
        n_fields = 13;
      } else if (line == std::string(kCsvHeader) + ",source") {
        n_fields = 14;
      } else {
        throw ParseError("line " + std::to_string(lineno) + ": unexpected header", lineno);
      }
      header_seen = true;
      continue;
    }
    const auto parts = detail::split(line);
    if (parts.size() != n_fields)
      throw ParseError("line " + std::to_string(lineno) + ": expected " +
                           std::to_string(n_fields) + " fields, got " +
                           std::to_string(parts.size()),
                       lineno);
    AdmittanceSample s;
    s.ibr = std::string(parts[0]);
    s.V = detail::parse_double(parts[1], lineno);
    s.P = detail::parse_double(parts[2], lineno);
    s.Q = detail::parse_double(parts[3], lineno);
    s.f = detail::parse_double(parts[4], lineno);
    std::array<double, 8> y{};
    for (std::size_t k = 0; k < 8; ++k) y[k] = detail::parse_double(parts[5 + k], lineno);
    s.set_outputs(y);
    out.push_back(std::move(s));
  }
  if (!header_seen) throw ParseError("missing header", lineno);
  return out;
}

inline std::vector<AdmittanceSample> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_csv(in);
}

}  // namespace ibrkit
