#pragma once

// |Y_dd| frequency-profile clustering: feature construction, K-means with
// k-means++ seeding, silhouette scoring, K selection by average rank, and
// nearest-centroid assignment of new devices from a few measured points.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "ibrkit/dataset.hpp"
#include "ibrkit/error.hpp"
#include "ibrkit/random.hpp"

namespace ibrkit {

using Eigen::Index;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per-dimension z-score. Dimensions with (near) zero spread keep unit scale.
struct Scaler {
  std::vector<double> mean;
  std::vector<double> stddev;

  static constexpr double kMinStd = 1e-12;

  static Scaler fit(const RowMatrix& X) {
    Scaler s;
    const auto n = static_cast<double>(X.rows());
    s.mean.resize(static_cast<std::size_t>(X.cols()));
    s.stddev.resize(static_cast<std::size_t>(X.cols()));
    for (Index j = 0; j < X.cols(); ++j) {
      const double m = X.col(j).sum() / n;
      const double var = (X.col(j).array() - m).square().sum() / n;
      const double sd = std::sqrt(var);
      s.mean[static_cast<std::size_t>(j)] = m;
      s.stddev[static_cast<std::size_t>(j)] = sd > kMinStd ? sd : 1.0;
    }
    return s;
  }

  RowMatrix transform(const RowMatrix& X) const {
    RowMatrix Z(X.rows(), X.cols());
    for (Index j = 0; j < X.cols(); ++j) {
      const auto k = static_cast<std::size_t>(j);
      Z.col(j) = (X.col(j).array() - mean[k]) / stddev[k];
    }
    return Z;
  }

  friend bool operator==(const Scaler&, const Scaler&) = default;
};

struct ProfileLabel {
  std::string ibr;
  OperatingPoint op;
};

/// One log10|Y_dd| profile per (IBR, operating point) over a shared frequency grid.
struct FeatureMatrix {
  RowMatrix raw;  ///< log10|Y_dd|
  RowMatrix X;    ///< standardized
  std::vector<ProfileLabel> rows;
  std::vector<double> freqs;
  Scaler scaler;
};

namespace detail {

inline std::tuple<long, long, long> op_key(double V, double P, double Q) {
  return {std::lround(V * 1e6), std::lround(P * 1e6), std::lround(Q * 1e6)};
}

// Index of f in the ascending grid, or -1 if no grid point is within 1e-9 relative.
inline long grid_index(const std::vector<double>& grid, double f) {
  const auto it = std::lower_bound(grid.begin(), grid.end(), f * (1.0 - 1e-9));
  if (it != grid.end() && std::abs(*it - f) <= 1e-9 * std::abs(f))
    return static_cast<long>(it - grid.begin());
  return -1;
}

inline double sq_dist(const RowMatrix& X, Index i, const RowMatrix& C, Index k) {
  return (X.row(i) - C.row(k)).squaredNorm();
}

}  // namespace detail

/**
 * Builds the clustering features: log10 sqrt(g_dd^2 + b_dd^2) at the grid
 * frequencies, one row per (IBR, operating point), IBRs in order of first
 * appearance, then standardized per frequency.
 */
inline FeatureMatrix build_features(const std::vector<AdmittanceSample>& samples,
                                    const GridSpec& spec) {
  const auto ops = operating_points(spec);
  const auto freqs = frequency_grid(spec);
  std::map<std::tuple<long, long, long>, std::size_t> op_index;
  for (std::size_t i = 0; i < ops.size(); ++i)
    op_index[detail::op_key(ops[i].V, ops[i].P, ops[i].Q)] = i;

  std::vector<std::string> ibrs;
  std::map<std::string, std::size_t> ibr_index;
  for (const auto& s : samples)
    if (ibr_index.emplace(s.ibr, ibrs.size()).second) ibrs.push_back(s.ibr);

  const auto n_rows = static_cast<Index>(ibrs.size() * ops.size());
  const auto n_f = static_cast<Index>(freqs.size());
  FeatureMatrix fm;
  fm.freqs = freqs;
  fm.raw = RowMatrix::Constant(n_rows, n_f, std::numeric_limits<double>::quiet_NaN());
  for (const auto& s : samples) {
    const auto op_it = op_index.find(detail::op_key(s.V, s.P, s.Q));
    const long fi = detail::grid_index(freqs, s.f);
    if (op_it == op_index.end() || fi < 0) {
      std::ostringstream os;
      os << "build_features: sample " << s.ibr << " (V=" << s.V << ", P=" << s.P
         << ", Q=" << s.Q << ", f=" << s.f << ") is not on the grid";
      throw CompletenessError(os.str());
    }
    const double mag = std::hypot(s.g_dd, s.b_dd);
    if (!(mag > 0.0) || !std::isfinite(mag))
      throw Error("build_features: |Y_dd| is zero or non-finite for " + s.ibr);
    const auto row = static_cast<Index>(ibr_index[s.ibr] * ops.size() + op_it->second);
    fm.raw(row, fi) = std::log10(mag);
  }
  for (std::size_t b = 0; b < ibrs.size(); ++b)
    for (std::size_t o = 0; o < ops.size(); ++o) {
      fm.rows.push_back({ibrs[b], ops[o]});
      const auto row = static_cast<Index>(b * ops.size() + o);
      for (Index j = 0; j < n_f; ++j)
        if (std::isnan(fm.raw(row, j))) {
          std::ostringstream os;
          os << "build_features: missing sample " << ibrs[b] << " (V=" << ops[o].V
             << ", P=" << ops[o].P << ", Q=" << ops[o].Q << ", f=" << freqs[static_cast<std::size_t>(j)]
             << ")";
          throw CompletenessError(os.str());
        }
    }
  fm.scaler = Scaler::fit(fm.raw);
  fm.X = fm.scaler.transform(fm.raw);
  return fm;
}

struct KMeansOptions {
  std::size_t n_init = 10;
  std::size_t max_iter = 300;
};

struct KMeansResult {
  std::vector<int> labels;
  RowMatrix centroids;
  double inertia = 0.0;
  std::size_t iterations = 0;
  std::vector<double> history;  ///< inertia after every assignment step of the kept restart
};

namespace detail {

inline RowMatrix kmeanspp_init(const RowMatrix& X, int k, Rng& rng) {
  const Index n = X.rows();
  RowMatrix C(k, X.cols());
  C.row(0) = X.row(static_cast<Index>(rng.below(static_cast<std::size_t>(n))));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = sq_dist(X, i, C, 0);
  for (int c = 1; c < k; ++c) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    Index pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (Index i = 0; i < n; ++i) {
        acc += d2[static_cast<std::size_t>(i)];
        if (acc > target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Index>(rng.below(static_cast<std::size_t>(n)));
    }
    C.row(c) = X.row(pick);
    for (Index i = 0; i < n; ++i)
      d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], sq_dist(X, i, C, c));
  }
  return C;
}

// Nearest centroid, ties to the lower index. Returns the inertia.
inline double assign_labels(const RowMatrix& X, const RowMatrix& C, std::vector<int>& labels) {
  double inertia = 0.0;
  for (Index i = 0; i < X.rows(); ++i) {
    int best = 0;
    double best_d = sq_dist(X, i, C, 0);
    for (Index c = 1; c < C.rows(); ++c) {
      const double d = sq_dist(X, i, C, c);
      if (d < best_d) best_d = d, best = static_cast<int>(c);
    }
    labels[static_cast<std::size_t>(i)] = best;
    inertia += best_d;
  }
  return inertia;
}

// Centroid update; an empty cluster is re-seeded at the point farthest from
// its current centroid.
inline void update_centroids(const RowMatrix& X, std::vector<int>& labels, RowMatrix& C) {
  const Index k = C.rows();
  RowMatrix sum = RowMatrix::Zero(k, X.cols());
  std::vector<Index> count(static_cast<std::size_t>(k), 0);
  for (Index i = 0; i < X.rows(); ++i) {
    sum.row(labels[static_cast<std::size_t>(i)]) += X.row(i);
    ++count[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
  }
  for (Index c = 0; c < k; ++c)
    if (count[static_cast<std::size_t>(c)] > 0)
      C.row(c) = sum.row(c) / static_cast<double>(count[static_cast<std::size_t>(c)]);
  for (Index c = 0; c < k; ++c) {
    if (count[static_cast<std::size_t>(c)] > 0) continue;
    Index far = 0;
    double far_d = -1.0;
    for (Index i = 0; i < X.rows(); ++i) {
      const int li = labels[static_cast<std::size_t>(i)];
      if (count[static_cast<std::size_t>(li)] <= 1) continue;
      const double d = sq_dist(X, i, C, li);
      if (d > far_d) far_d = d, far = i;
    }
    --count[static_cast<std::size_t>(labels[static_cast<std::size_t>(far)])];
    labels[static_cast<std::size_t>(far)] = static_cast<int>(c);
    count[static_cast<std::size_t>(c)] = 1;
    C.row(c) = X.row(far);
  }
}

}  // namespace detail

/**
 * Lloyd iterations from k-means++ seeds, n_init restarts, keeping the
 * restart with the lowest inertia (first one on ties). Each restart stops
 * when assignments no longer change or after max_iter iterations.
 */
inline KMeansResult kmeans(const RowMatrix& X, int k, std::uint64_t seed,
                           const KMeansOptions& opt = {}) {
  if (k < 1 || k > X.rows())
    throw Error("kmeans: k=" + std::to_string(k) + " outside [1, " + std::to_string(X.rows()) +
                "]");
  Rng rng(seed);
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < std::max<std::size_t>(opt.n_init, 1); ++r) {
    KMeansResult run;
    run.centroids = detail::kmeanspp_init(X, k, rng);
    run.labels.assign(static_cast<std::size_t>(X.rows()), 0);
    run.history.push_back(detail::assign_labels(X, run.centroids, run.labels));
    for (std::size_t it = 0; it < opt.max_iter; ++it) {
      detail::update_centroids(X, run.labels, run.centroids);
      auto next = run.labels;
      const double inertia = detail::assign_labels(X, run.centroids, next);
      run.history.push_back(inertia);
      ++run.iterations;
      const bool stable = next == run.labels;
      run.labels = std::move(next);
      if (stable) break;
    }
    detail::update_centroids(X, run.labels, run.centroids);
    run.inertia = 0.0;
    for (Index i = 0; i < X.rows(); ++i)
      run.inertia += detail::sq_dist(X, i, run.centroids, run.labels[static_cast<std::size_t>(i)]);
    if (run.inertia < best.inertia) best = std::move(run);
  }
  return best;
}

/// Sum of squared distances to the global mean (the one-cluster inertia).
inline double total_inertia(const RowMatrix& X) {
  const Eigen::RowVectorXd mean = X.colwise().mean();
  return (X.rowwise() - mean).rowwise().squaredNorm().sum();
}

/**
 * Mean silhouette (b - a) / max(a, b). Points alone in their cluster score 0,
 * and a = b = 0 scores 0.
 */
inline double silhouette(const RowMatrix& X, const std::vector<int>& labels) {
  if (labels.size() != static_cast<std::size_t>(X.rows()))
    throw Error("silhouette: label count does not match rows");
  const int k = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::size_t> size(static_cast<std::size_t>(std::max(k, 0)), 0);
  for (int l : labels) ++size[static_cast<std::size_t>(l)];
  const auto nonempty = std::count_if(size.begin(), size.end(), [](auto s) { return s > 0; });
  if (nonempty < 2) throw Error("silhouette: undefined for fewer than two clusters");

  const Index n = X.rows();
  double total = 0.0;
  std::vector<double> sum(static_cast<std::size_t>(k));
  for (Index i = 0; i < n; ++i) {
    std::fill(sum.begin(), sum.end(), 0.0);
    for (Index j = 0; j < n; ++j)
      if (j != i) sum[static_cast<std::size_t>(labels[static_cast<std::size_t>(j)])] += (X.row(i) - X.row(j)).norm();
    const auto own = static_cast<std::size_t>(labels[static_cast<std::size_t>(i)]);
    if (size[own] <= 1) continue;
    const double a = sum[own] / static_cast<double>(size[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < sum.size(); ++c)
      if (c != own && size[c] > 0) b = std::min(b, sum[c] / static_cast<double>(size[c]));
    const double m = std::max(a, b);
    if (m > 0.0) total += (b - a) / m;
  }
  return total / static_cast<double>(n);
}

struct KScore {
  int k = 0;
  double inertia = 0.0;
  double silhouette = 0.0;
  double inertia_drop = 0.0;  ///< (I_{k-1} - I_k) / I_{k-1}
  int rank_silhouette = 0;
  int rank_drop = 0;
  double average_rank = 0.0;
};

struct KSelection {
  int best_k = 0;
  std::vector<KScore> scores;
};

namespace detail {

// Competition ranking, larger value = better rank (1).
inline std::vector<int> rank_descending(const std::vector<double>& v) {
  std::vector<int> r(v.size(), 1);
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = 0; j < v.size(); ++j)
      if (v[j] > v[i]) ++r[i];
  return r;
}

}  // namespace detail

/**
 * Scores every k in [k_min, k_max] by silhouette (higher is better) and by
 * relative inertia drop from k-1 clusters (higher is better, the one-cluster
 * inertia being the total spread), then picks the smallest k with the lowest
 * average of the two ranks.
 */
inline KSelection select_k(const RowMatrix& X, int k_min, int k_max, std::uint64_t seed,
                           const KMeansOptions& opt = {}) {
  if (k_min < 2 || k_max < k_min || k_max > X.rows() - 1)
    throw Error("select_k: k range must lie within [2, rows - 1]");
  KSelection sel;
  double prev = k_min == 2 ? total_inertia(X) : kmeans(X, k_min - 1, seed, opt).inertia;
  std::vector<double> sil, drop;
  for (int k = k_min; k <= k_max; ++k) {
    const auto km = kmeans(X, k, seed, opt);
    KScore s;
    s.k = k;
    s.inertia = km.inertia;
    s.silhouette = silhouette(X, km.labels);
    s.inertia_drop = prev > 0.0 ? (prev - km.inertia) / prev : 0.0;
    prev = km.inertia;
    sil.push_back(s.silhouette);
    drop.push_back(s.inertia_drop);
    sel.scores.push_back(s);
  }
  const auto rs = detail::rank_descending(sil);
  const auto rd = detail::rank_descending(drop);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < sel.scores.size(); ++i) {
    auto& s = sel.scores[i];
    s.rank_silhouette = rs[i];
    s.rank_drop = rd[i];
    s.average_rank = 0.5 * (rs[i] + rd[i]);
    if (s.average_rank < best) best = s.average_rank, sel.best_k = s.k;
  }
  return sel;
}

struct RowAssignment {
  std::string ibr;
  OperatingPoint op;
  int cluster = 0;
};

/// Trained clustering state: everything needed to place a new device.
struct ClusterModel {
  int k = 0;
  RowMatrix centroids;  ///< standardized, k x n_freq
  Scaler scaler;
  std::vector<double> freqs;
  std::vector<RowAssignment> rows;
  std::map<std::string, int> ibr_majority;
  double inertia = 0.0;
  std::uint64_t seed = 0;

  int cluster_of(const std::string& ibr) const {
    const auto it = ibr_majority.find(ibr);
    return it == ibr_majority.end() ? -1 : it->second;
  }
};

/**
 * Runs K-means at k and freezes the result. Clusters are renumbered by
 * decreasing size (ties: the cluster whose first row comes first), so that
 * cluster 0 is the most populated group.
 */
inline ClusterModel fit_clusters(const FeatureMatrix& fm, int k, std::uint64_t seed,
                                 const KMeansOptions& opt = {}) {
  const auto km = kmeans(fm.X, k, seed, opt);
  std::vector<std::size_t> size(static_cast<std::size_t>(k), 0), first(static_cast<std::size_t>(k), SIZE_MAX);
  for (std::size_t i = 0; i < km.labels.size(); ++i) {
    const auto c = static_cast<std::size_t>(km.labels[i]);
    ++size[c];
    first[c] = std::min(first[c], i);
  }
  std::vector<int> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const auto ua = static_cast<std::size_t>(a), ub = static_cast<std::size_t>(b);
    return size[ua] != size[ub] ? size[ua] > size[ub] : first[ua] < first[ub];
  });
  std::vector<int> relabel(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) relabel[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = i;

  ClusterModel m;
  m.k = k;
  m.seed = seed;
  m.inertia = km.inertia;
  m.scaler = fm.scaler;
  m.freqs = fm.freqs;
  m.centroids.resize(k, fm.X.cols());
  for (int i = 0; i < k; ++i) m.centroids.row(i) = km.centroids.row(order[static_cast<std::size_t>(i)]);
  std::map<std::string, std::vector<int>> votes;
  for (std::size_t i = 0; i < km.labels.size(); ++i) {
    const int c = relabel[static_cast<std::size_t>(km.labels[i])];
    m.rows.push_back({fm.rows[i].ibr, fm.rows[i].op, c});
    auto& v = votes[fm.rows[i].ibr];
    v.resize(static_cast<std::size_t>(k), 0);
    ++v[static_cast<std::size_t>(c)];
  }
  for (const auto& [ibr, v] : votes)
    m.ibr_majority[ibr] = static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
  return m;
}

/// A measured |Y_dd| point.
struct MagnitudePoint {
  double f = 0.0;
  double magnitude = 0.0;
};

struct Assignment {
  int cluster = -1;
  std::vector<double> distances;
};

/**
 * Nearest-centroid assignment from a handful of measured |Y_dd| values.
 * Scaler and centroids are interpolated linearly in log10 f onto the
 * measured frequencies; z is the standardized log10|Y_dd| there and
 * d_k = ||z - mu_k||_2.
 */
inline Assignment assign(const std::vector<MagnitudePoint>& measured, const ClusterModel& model) {
  if (measured.size() < 2) throw Error("assign: need at least two measured points");
  const auto& grid = model.freqs;
  const double lo = grid.front(), hi = grid.back();
  const auto n_grid = grid.size();
  Assignment out;
  out.distances.assign(static_cast<std::size_t>(model.k), 0.0);
  for (const auto& m : measured) {
    if (!(m.f >= lo * (1.0 - 1e-12)) || !(m.f <= hi * (1.0 + 1e-12))) {
      std::ostringstream os;
      os << "assign: measured frequency " << m.f << " Hz is outside the trained grid [" << lo
         << ", " << hi << "] Hz";
      throw ExtrapolationError(os.str());
    }
    if (!(m.magnitude > 0.0) || !std::isfinite(m.magnitude))
      throw Error("assign: |Y_dd| must be positive and finite");
    const double lf = std::log10(std::clamp(m.f, lo, hi));
    std::size_t j = 0;
    double w = 0.0;
    if (n_grid > 1) {
      const auto it = std::upper_bound(grid.begin(), grid.end(), std::clamp(m.f, lo, hi));
      j = std::min<std::size_t>(static_cast<std::size_t>(std::max<std::ptrdiff_t>(it - grid.begin() - 1, 0)), n_grid - 2);
      const double l0 = std::log10(grid[j]), l1 = std::log10(grid[j + 1]);
      w = (lf - l0) / (l1 - l0);
    }
    const auto lerp = [&](double a, double b) { return w == 0.0 ? a : a + w * (b - a); };
    const std::size_t j1 = n_grid > 1 ? j + 1 : j;
    const double mean = lerp(model.scaler.mean[j], model.scaler.mean[j1]);
    const double sd = lerp(model.scaler.stddev[j], model.scaler.stddev[j1]);
    const double z = (std::log10(m.magnitude) - mean) / sd;
    for (int c = 0; c < model.k; ++c) {
      const double mu = lerp(model.centroids(c, static_cast<Index>(j)), model.centroids(c, static_cast<Index>(j1)));
      out.distances[static_cast<std::size_t>(c)] += (z - mu) * (z - mu);
    }
  }
  for (auto& d : out.distances) d = std::sqrt(d);
  out.cluster = static_cast<int>(std::min_element(out.distances.begin(), out.distances.end()) -
                                 out.distances.begin());
  return out;
}

// -- serialization ----------------------------------------------------------

inline nlohmann::json to_json(const ClusterModel& m) {
  nlohmann::json j;
  j["k"] = m.k;
  j["seed"] = m.seed;
  j["inertia"] = m.inertia;
  j["freqs_hz"] = m.freqs;
  j["scaler"] = {{"mean", m.scaler.mean}, {"std", m.scaler.stddev}};
  auto& cs = j["centroids"] = nlohmann::json::array();
  for (Index c = 0; c < m.centroids.rows(); ++c) {
    std::vector<double> row(m.centroids.row(c).begin(), m.centroids.row(c).end());
    cs.push_back(row);
  }
  auto& rows = j["rows"] = nlohmann::json::array();
  for (const auto& r : m.rows)
    rows.push_back({{"ibr", r.ibr}, {"V", r.op.V}, {"P", r.op.P}, {"Q", r.op.Q}, {"cluster", r.cluster}});
  j["ibr_majority"] = m.ibr_majority;
  return j;
}

inline ClusterModel cluster_model_from_json(const nlohmann::json& j) {
  ClusterModel m;
  m.k = j.at("k").get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.inertia = j.at("inertia").get<double>();
  m.freqs = j.at("freqs_hz").get<std::vector<double>>();
  m.scaler.mean = j.at("scaler").at("mean").get<std::vector<double>>();
  m.scaler.stddev = j.at("scaler").at("std").get<std::vector<double>>();
  const auto cs = j.at("centroids").get<std::vector<std::vector<double>>>();
  if (static_cast<int>(cs.size()) != m.k) throw Error("cluster model: centroid count != k");
  m.centroids.resize(m.k, static_cast<Index>(m.freqs.size()));
  for (int c = 0; c < m.k; ++c) {
    if (cs[static_cast<std::size_t>(c)].size() != m.freqs.size())
      throw Error("cluster model: centroid dimension != frequency count");
    for (std::size_t f = 0; f < m.freqs.size(); ++f) m.centroids(c, static_cast<Index>(f)) = cs[static_cast<std::size_t>(c)][f];
  }
  if (m.scaler.mean.size() != m.freqs.size() || m.scaler.stddev.size() != m.freqs.size())
    throw Error("cluster model: scaler dimension != frequency count");
  for (const auto& r : j.at("rows"))
    m.rows.push_back({r.at("ibr").get<std::string>(),
                      {r.at("V").get<double>(), r.at("P").get<double>(), r.at("Q").get<double>()},
                      r.at("cluster").get<int>()});
  m.ibr_majority = j.at("ibr_majority").get<std::map<std::string, int>>();
  return m;
}

}  // namespace ibrkit
