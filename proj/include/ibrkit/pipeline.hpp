#pragma once

// The stages behind the command-line verbs: clustering with K selection,
// per-cluster training, assignment of an unseen device from a few measured
// points, grid prediction and banded evaluation. Functions here do no file
// locking; the CLI wraps them with a ModelStore.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

#include "ibrkit/clustering.hpp"
#include "ibrkit/dataset.hpp"
#include "ibrkit/fnn.hpp"

namespace ibrkit {

struct Band {
  const char* name;
  double lo, hi;  ///< [lo, hi), the last band also includes hi
};

inline constexpr std::array<Band, 3> kBands{{{"low", 1.0, 10.0}, {"mid", 10.0, 60.0}, {"high", 60.0, 200.0}}};

inline bool in_band(const Band& b, double f) {
  return f >= b.lo && (f < b.hi || (&b == &kBands.back() && f <= b.hi));
}

inline void write_seed_line(std::ostream& out, std::uint64_t seed) { out << "# seed=" << seed << '\n'; }

// -- clustering ---------------------------------------------------------------

struct ClusterRun {
  KSelection selection;
  ClusterModel model;
};

/// select_k over [k_min, k_max], then the final fit at k* (or at `k_fixed`).
inline ClusterRun run_clustering(const std::vector<AdmittanceSample>& samples, const GridSpec& spec,
                                 std::uint64_t seed, int k_min = 2, int k_max = 6,
                                 std::optional<int> k_fixed = std::nullopt) {
  const auto fm = build_features(samples, spec);
  ClusterRun run;
  run.selection = select_k(fm.X, k_min, k_max, seed);
  run.model = fit_clusters(fm, k_fixed.value_or(run.selection.best_k), seed);
  return run;
}

inline void write_k_report(std::ostream& out, const KSelection& sel, std::uint64_t seed) {
  write_seed_line(out, seed);
  out << "k,inertia,silhouette,inertia_drop,rank_silhouette,rank_drop,average_rank,selected\n";
  for (const auto& s : sel.scores)
    out << s.k << ',' << format_double(s.inertia) << ',' << format_double(s.silhouette) << ','
        << format_double(s.inertia_drop) << ',' << s.rank_silhouette << ',' << s.rank_drop << ','
        << format_double(s.average_rank) << ',' << (s.k == sel.best_k ? 1 : 0) << '\n';
}

// -- training -----------------------------------------------------------------

/// Rows carrying cluster label `c` in the model (per operating point, not per device).
inline std::vector<AdmittanceSample> cluster_samples(const std::vector<AdmittanceSample>& samples,
                                                     const ClusterModel& model, int c) {
  std::map<std::tuple<std::string, long, long, long>, int> label;
  for (const auto& r : model.rows) {
    const auto [v, p, q] = detail::op_key(r.op.V, r.op.P, r.op.Q);
    label[{r.ibr, v, p, q}] = r.cluster;
  }
  std::vector<AdmittanceSample> out;
  for (const auto& s : samples) {
    const auto [v, p, q] = detail::op_key(s.V, s.P, s.Q);
    const auto it = label.find({s.ibr, v, p, q});
    if (it == label.end())
      throw Error("training row " + s.ibr + " at (V=" + format_double(s.V) + ", P=" +
                  format_double(s.P) + ", Q=" + format_double(s.Q) +
                  ") is not part of the cluster model; rerun `ibrkit cluster` on this dataset");
    if (it->second == c) out.push_back(s);
  }
  return out;
}

inline std::uint64_t cluster_seed(std::uint64_t seed, int cluster) {
  return seed + static_cast<std::uint64_t>(cluster);
}

inline nn::FnnModel train_cluster(const std::vector<AdmittanceSample>& samples,
                                  const ClusterModel& model, int c, nn::TrainConfig cfg) {
  if (c < 0 || c >= model.k)
    throw Error("cluster " + std::to_string(c) + " out of range (k=" + std::to_string(model.k) + ")");
  const auto rows = cluster_samples(samples, model, c);
  if (rows.empty()) throw Error("cluster " + std::to_string(c) + " has no training rows");
  cfg.seed = cluster_seed(cfg.seed, c);
  return nn::train(nn::init(nn::preset_for_cluster(c), cfg.seed), rows, cfg);
}

inline void write_loss_history(std::ostream& out, const nn::FnnModel& m, std::uint64_t seed) {
  write_seed_line(out, seed);
  out << "epoch,loss\n";
  for (std::size_t e = 0; e < m.loss_history.size(); ++e)
    out << e + 1 << ',' << format_double(m.loss_history[e]) << '\n';
}

// -- measurements and assignment ------------------------------------------------

struct MeasuredYdd {
  double f = 0.0;
  double g_dd = 0.0, b_dd = 0.0;
};

inline constexpr std::string_view kMeasurementHeader = "f_hz,g_dd,b_dd";

inline std::vector<MeasuredYdd> read_measurements(std::istream& in) {
  std::vector<MeasuredYdd> out;
  std::string raw;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto line = detail::trim_cr(raw);
    if (line.empty() || line.front() == '#') continue;
    if (!header) {
      if (line != kMeasurementHeader)
        throw ParseError("line " + std::to_string(lineno) + ": expected header " +
                             std::string(kMeasurementHeader),
                         lineno);
      header = true;
      continue;
    }
    const auto parts = detail::split(line);
    if (parts.size() != 3)
      throw ParseError("line " + std::to_string(lineno) + ": expected 3 fields", lineno);
    out.push_back({detail::parse_double(parts[0], lineno), detail::parse_double(parts[1], lineno),
                   detail::parse_double(parts[2], lineno)});
  }
  if (!header) throw ParseError("missing header", lineno);
  return out;
}

inline void write_measurements(std::ostream& out, const std::vector<MeasuredYdd>& rows) {
  out << kMeasurementHeader << '\n';
  for (const auto& r : rows)
    out << format_double(r.f) << ',' << format_double(r.g_dd) << ',' << format_double(r.b_dd) << '\n';
}

/// Y_dd of the analytical model at one operating point, as a measurement would report it.
inline std::vector<MeasuredYdd> measure(const InverterParams& p, const OperatingPoint& op,
                                        const std::vector<double>& freqs) {
  const auto sys = linearize(p, op);
  std::vector<MeasuredYdd> out;
  for (double f : freqs) {
    const auto y = admittance_at(sys, f);
    out.push_back({f, y.Ydd.real(), y.Ydd.imag()});
  }
  return out;
}

inline Assignment assign_measured(const std::vector<MeasuredYdd>& rows, const ClusterModel& model) {
  std::vector<MagnitudePoint> pts;
  for (const auto& r : rows) pts.push_back({r.f, std::hypot(r.g_dd, r.b_dd)});
  return assign(pts, model);
}

// -- prediction ---------------------------------------------------------------

inline std::vector<AdmittanceSample> predict_grid(const nn::FnnModel& m, const std::string& label,
                                                  const std::vector<OperatingPoint>& ops,
                                                  const std::vector<double>& freqs) {
  std::vector<AdmittanceSample> out;
  out.reserve(ops.size() * freqs.size());
  for (const auto& op : ops)
    for (double f : freqs) {
      AdmittanceSample s;
      s.ibr = label;
      s.V = op.V, s.P = op.P, s.Q = op.Q, s.f = f;
      s.set_outputs(nn::forward(m, nn::features_of(s), true));
      out.push_back(std::move(s));
    }
  return out;
}

inline void write_tagged_csv(std::ostream& out, const std::vector<AdmittanceSample>& rows,
                             std::string_view source, std::uint64_t seed) {
  write_seed_line(out, seed);
  out << kCsvHeader << ",source\n";
  for (const auto& s : rows) {
    write_csv_row(out, s, source);
    out << '\n';
  }
}

/// predicted - reference, row by row; both lists must share (V, P, Q, f).
inline std::vector<AdmittanceSample> prediction_error(const std::vector<AdmittanceSample>& predicted,
                                                      const std::vector<AdmittanceSample>& reference) {
  if (predicted.size() != reference.size()) throw Error("prediction_error: row count mismatch");
  std::vector<AdmittanceSample> out;
  out.reserve(predicted.size());
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const auto& a = predicted[i];
    const auto& b = reference[i];
    if (a.V != b.V || a.P != b.P || a.Q != b.Q || a.f != b.f)
      throw Error("prediction_error: rows are not aligned at index " + std::to_string(i));
    AdmittanceSample e = a;
    const auto ya = a.outputs(), yb = b.outputs();
    std::array<double, AdmittanceSample::kOutputs> d{};
    for (std::size_t k = 0; k < d.size(); ++k) d[k] = ya[k] - yb[k];
    e.set_outputs(d);
    out.push_back(std::move(e));
  }
  return out;
}

// -- evaluation ---------------------------------------------------------------

struct EvalRow {
  std::string ibr;
  int cluster = 0;
  std::string band;
  nn::Metrics metrics;
  double baseline_mse_std = 0.0;  ///< constant-mean predictor on the same rows
};

/// The cluster serving `ibr`: its training majority, else a recorded assignment.
inline int route(const std::string& ibr, const ClusterModel& model,
                 const std::map<std::string, int>& assigned) {
  if (const int c = model.cluster_of(ibr); c >= 0) return c;
  if (const auto it = assigned.find(ibr); it != assigned.end()) return it->second;
  throw Error("IBR '" + ibr + "' is not in the cluster model and has no assignment; run `ibrkit assign --ibr " +
              ibr + "` first");
}

inline nn::Metrics constant_baseline(const nn::FnnModel& m, const std::vector<AdmittanceSample>& rows) {
  std::array<double, nn::kOutputDim> mean{};
  for (int k = 0; k < nn::kOutputDim; ++k) mean[k] = m.output_scaler.mean[static_cast<std::size_t>(k)];
  return nn::evaluate([&](const AdmittanceSample&) { return mean; }, m.output_scaler, rows);
}

/**
 * One row per (IBR, band) in first-appearance order of the IBRs. `nets`
 * maps cluster index to its trained network.
 */
inline std::vector<EvalRow> evaluate_bands(const std::vector<AdmittanceSample>& samples,
                                           const ClusterModel& model,
                                           const std::map<int, nn::FnnModel>& nets,
                                           const std::map<std::string, int>& assigned = {}) {
  std::vector<std::string> order;
  std::map<std::string, std::array<std::vector<AdmittanceSample>, kBands.size()>> split;
  for (const auto& s : samples) {
    auto [it, fresh] = split.try_emplace(s.ibr);
    if (fresh) order.push_back(s.ibr);
    for (std::size_t b = 0; b < kBands.size(); ++b)
      if (in_band(kBands[b], s.f)) it->second[b].push_back(s);
  }
  std::vector<EvalRow> out;
  for (const auto& ibr : order) {
    const int c = route(ibr, model, assigned);
    const auto net = nets.find(c);
    if (net == nets.end())
      throw Error("no trained network for cluster " + std::to_string(c) + "; run `ibrkit train " +
                  std::to_string(c) + "` first");
    for (std::size_t b = 0; b < kBands.size(); ++b) {
      const auto& rows = split[ibr][b];
      if (rows.empty()) continue;
      EvalRow r;
      r.ibr = ibr;
      r.cluster = c;
      r.band = kBands[b].name;
      r.metrics = nn::evaluate(net->second, rows);
      r.baseline_mse_std = constant_baseline(net->second, rows).mse_std;
      out.push_back(std::move(r));
    }
  }
  return out;
}

inline void write_eval_report(std::ostream& out, const std::vector<EvalRow>& rows, std::uint64_t seed) {
  write_seed_line(out, seed);
  out << "ibr,cluster,band,n,mse_std,baseline_mse_std";
  for (const char* name : AdmittanceSample::kOutputNames) out << ",rmse_std_" << name;
  out << ",max_abs_error,worst_output,worst_V,worst_P,worst_Q,worst_f_hz\n";
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    out << r.ibr << ',' << r.cluster << ',' << r.band << ',' << m.n << ',' << format_double(m.mse_std)
        << ',' << format_double(r.baseline_mse_std);
    for (double x : m.rmse_std) out << ',' << format_double(x);
    out << ',' << format_double(m.max_abs_error) << ','
        << (m.worst_channel >= 0 ? AdmittanceSample::kOutputNames[static_cast<std::size_t>(m.worst_channel)] : "")
        << ',' << format_double(m.worst_op.V) << ',' << format_double(m.worst_op.P) << ','
        << format_double(m.worst_op.Q) << ',' << format_double(m.worst_f) << '\n';
  }
}

}  // namespace ibrkit
