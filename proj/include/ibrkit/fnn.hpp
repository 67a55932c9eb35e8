#pragma once

// Feed-forward regression networks mapping (V, P, Q, log10 f) to the eight
// admittance outputs. ReLU hidden layers, identity output, MSE loss on
// standardized targets, Adam with shuffled mini-batches.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ibrkit/clustering.hpp"
#include "ibrkit/dataset.hpp"
#include "ibrkit/error.hpp"
#include "ibrkit/random.hpp"

namespace ibrkit::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr int kInputDim = 4;
inline constexpr int kOutputDim = 8;

struct FnnSpec {
  int input_dim = kInputDim;
  std::vector<int> hidden;
  int output_dim = kOutputDim;

  void validate() const {
    if (hidden.empty()) throw Error("fnn: at least one hidden layer required");
    for (int w : hidden)
      if (w < 1) throw Error("fnn: hidden widths must be >= 1");
    if (input_dim < 1 || output_dim < 1) throw Error("fnn: bad input/output dimension");
  }

  std::vector<int> widths() const {
    std::vector<int> w{input_dim};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(output_dim);
    return w;
  }

  friend bool operator==(const FnnSpec&, const FnnSpec&) = default;
};

/// Architecture presets: the first (most populated, most varied) group gets
/// the narrow network, the others the wide one.
inline FnnSpec preset_narrow() { return {kInputDim, {4, 8}, kOutputDim}; }
inline FnnSpec preset_wide() { return {kInputDim, {32, 32}, kOutputDim}; }
inline FnnSpec preset_for_cluster(int cluster) {
  return cluster == 0 ? preset_narrow() : preset_wide();
}

struct Layer {
  Matrix W;  ///< out x in
  Vector b;
};

struct FnnModel {
  FnnSpec spec;
  std::vector<Layer> layers;
  Scaler input_scaler;   ///< over (V, P, Q, log10 f)
  Scaler output_scaler;  ///< over the 8 outputs
  std::vector<double> loss_history;

  bool finite() const {
    for (const auto& l : layers)
      if (!l.W.allFinite() || !l.b.allFinite()) return false;
    return true;
  }
};

struct TrainConfig {
  std::size_t max_epochs = 1200;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  bool shuffle = true;
};

/// He-normal weights (variance 2 / fan_in), zero biases, identity scalers.
inline FnnModel init(const FnnSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  FnnModel m;
  m.spec = spec;
  const auto w = spec.widths();
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    Layer layer;
    layer.W.resize(w[l + 1], w[l]);
    const double sd = std::sqrt(2.0 / w[l]);
    for (Eigen::Index r = 0; r < layer.W.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.W.cols(); ++c) layer.W(r, c) = sd * rng.normal();
    layer.b = Vector::Zero(w[l + 1]);
    m.layers.push_back(std::move(layer));
  }
  m.input_scaler.mean.assign(static_cast<std::size_t>(spec.input_dim), 0.0);
  m.input_scaler.stddev.assign(static_cast<std::size_t>(spec.input_dim), 1.0);
  m.output_scaler.mean.assign(static_cast<std::size_t>(spec.output_dim), 0.0);
  m.output_scaler.stddev.assign(static_cast<std::size_t>(spec.output_dim), 1.0);
  return m;
}

/// Network input for one sample: (V, P, Q, log10 f).
inline std::array<double, kInputDim> features_of(const AdmittanceSample& s) {
  return {s.V, s.P, s.Q, std::log10(s.f)};
}

/// Standardized inputs (columns) and targets of a training batch.
struct Batch {
  Matrix X;  ///< input_dim x n
  Matrix Y;  ///< output_dim x n
};

inline Batch make_batch(const FnnModel& m, const std::vector<AdmittanceSample>& samples) {
  Batch b;
  const auto n = static_cast<Eigen::Index>(samples.size());
  b.X.resize(kInputDim, n);
  b.Y.resize(kOutputDim, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto x = features_of(samples[static_cast<std::size_t>(i)]);
    const auto y = samples[static_cast<std::size_t>(i)].outputs();
    for (int k = 0; k < kInputDim; ++k)
      b.X(k, i) = (x[k] - m.input_scaler.mean[k]) / m.input_scaler.stddev[k];
    for (int k = 0; k < kOutputDim; ++k)
      b.Y(k, i) = (y[k] - m.output_scaler.mean[k]) / m.output_scaler.stddev[k];
  }
  return b;
}

namespace detail {

struct Trace {
  std::vector<Matrix> pre;  ///< pre-activations per layer
  std::vector<Matrix> act;  ///< act[0] = input, act[l+1] = output of layer l
};

inline Trace run(const FnnModel& m, const Matrix& X) {
  Trace t;
  t.act.push_back(X);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    Matrix z = m.layers[l].W * t.act.back();
    z.colwise() += m.layers[l].b;
    const bool hidden = l + 1 < m.layers.size();
    t.act.push_back(hidden ? Matrix(z.cwiseMax(0.0)) : z);
    t.pre.push_back(std::move(z));
  }
  return t;
}

}  // namespace detail

/// Standardized-in, standardized-out pass over a batch of columns.
inline Matrix forward_standardized(const FnnModel& m, const Matrix& X) {
  return detail::run(m, X).act.back();
}

/**
 * Predicts the eight outputs for x = (V, P, Q, log10 f). Inputs are always
 * standardized with the stored scaler; outputs are returned in raw units
 * (conductance/susceptance in pu) when raw_units is set, standardized
 * otherwise.
 */
inline std::array<double, kOutputDim> forward(const FnnModel& m,
                                              const std::array<double, kInputDim>& x,
                                              bool raw_units = true) {
  Matrix col(kInputDim, 1);
  for (int k = 0; k < kInputDim; ++k) {
    if (!std::isfinite(x[k])) throw Error("fnn forward: non-finite input");
    col(k, 0) = (x[k] - m.input_scaler.mean[k]) / m.input_scaler.stddev[k];
  }
  const Matrix y = forward_standardized(m, col);
  std::array<double, kOutputDim> out{};
  for (int k = 0; k < kOutputDim; ++k)
    out[k] = raw_units ? y(k, 0) * m.output_scaler.stddev[k] + m.output_scaler.mean[k] : y(k, 0);
  return out;
}

/// Mean squared error over all outputs and columns.
inline double loss(const FnnModel& m, const Batch& b) {
  const Matrix r = forward_standardized(m, b.X) - b.Y;
  return r.squaredNorm() / static_cast<double>(r.size());
}

/// Smallest |pre-activation| over hidden units, i.e. the distance to a ReLU kink.
inline double kink_margin(const FnnModel& m, const Batch& b) {
  const auto t = detail::run(m, b.X);
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l + 1 < t.pre.size(); ++l)
    margin = std::min(margin, t.pre[l].cwiseAbs().minCoeff());
  return margin;
}

/// dLoss/dparams by backpropagation, with the same layout as the model layers.
inline std::vector<Layer> gradients(const FnnModel& m, const Batch& b, double* loss_out = nullptr) {
  const auto t = detail::run(m, b.X);
  Matrix delta = t.act.back() - b.Y;
  const double denom = static_cast<double>(delta.size());
  if (loss_out) *loss_out = delta.squaredNorm() / denom;
  delta *= 2.0 / denom;
  std::vector<Layer> g(m.layers.size());
  for (std::size_t l = m.layers.size(); l-- > 0;) {
    g[l].W = delta * t.act[l].transpose();
    g[l].b = delta.rowwise().sum();
    if (l > 0) {
      Matrix back = m.layers[l].W.transpose() * delta;
      delta = back.cwiseProduct((t.pre[l - 1].array() > 0.0).cast<double>().matrix());
    }
  }
  return g;
}

namespace detail {

using MatrixX = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
using VectorX = Eigen::Matrix<long double, Eigen::Dynamic, 1>;

struct LayerX {
  MatrixX W;
  VectorX b;
};

// Loss evaluated in extended precision.
inline long double loss_extended(const std::vector<LayerX>& layers, const MatrixX& X, const MatrixX& Y) {
  MatrixX a = X;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    MatrixX z = layers[l].W * a;
    z.colwise() += layers[l].b;
    a = l + 1 < layers.size() ? MatrixX(z.cwiseMax(0.0L)) : z;
  }
  return (a - Y).squaredNorm() / static_cast<long double>(Y.size());
}

}  // namespace detail

/// Central finite differences of the loss, one parameter at a time.
inline std::vector<Layer> numerical_gradients(const FnnModel& m, const Batch& b, double h = 1e-6) {
  std::vector<detail::LayerX> probe;
  for (const auto& l : m.layers) probe.push_back({l.W.cast<long double>(), l.b.cast<long double>()});
  const detail::MatrixX X = b.X.cast<long double>(), Y = b.Y.cast<long double>();
  const long double step = h;
  std::vector<Layer> g(m.layers.size());
  const auto diff = [&](long double& param) {
    const long double saved = param;
    param = saved + step;
    const long double up = detail::loss_extended(probe, X, Y);
    param = saved - step;
    const long double down = detail::loss_extended(probe, X, Y);
    param = saved;
    return static_cast<double>((up - down) / (2.0L * step));
  };
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    auto& L = probe[l];
    g[l].W.resize(L.W.rows(), L.W.cols());
    g[l].b.resize(L.b.size());
    for (Eigen::Index r = 0; r < L.W.rows(); ++r)
      for (Eigen::Index c = 0; c < L.W.cols(); ++c) g[l].W(r, c) = diff(L.W(r, c));
    for (Eigen::Index r = 0; r < L.b.size(); ++r) g[l].b(r) = diff(L.b(r));
  }
  return g;
}

/// Denominator floor for the relative error, absorbing finite-difference round-off.
inline constexpr double kGradientFloor = 1e-6;

/**
 * Max over parameters of |backprop - fd| / max(|backprop|, |fd|, floor).
 * The batch must keep every hidden pre-activation at least 1e-6 away from
 * the ReLU kink.
 */
inline double gradient_check(const FnnModel& m, const Batch& b, double h = 1e-6) {
  if (b.X.cols() == 0) throw Error("gradient_check: empty batch");
  if (kink_margin(m, b) < 1e-6) throw Error("gradient_check: batch sits on a ReLU kink");
  const auto a = gradients(m, b);
  const auto n = numerical_gradients(m, b, h);
  double worst = 0.0;
  const auto cmp = [&](double x, double y) {
    const double den = std::max({std::abs(x), std::abs(y), kGradientFloor});
    worst = std::max(worst, std::abs(x - y) / den);
  };
  for (std::size_t l = 0; l < a.size(); ++l) {
    for (Eigen::Index i = 0; i < a[l].W.size(); ++i) cmp(a[l].W.data()[i], n[l].W.data()[i]);
    for (Eigen::Index i = 0; i < a[l].b.size(); ++i) cmp(a[l].b(i), n[l].b(i));
  }
  return worst;
}

/**
 * Fits the scalers on `samples`, then runs cfg.max_epochs epochs of Adam on
 * the MSE of the standardized outputs. The per-epoch mean training loss is
 * appended to loss_history.
 */
inline FnnModel train(FnnModel model, const std::vector<AdmittanceSample>& samples,
                      const TrainConfig& cfg) {
  if (samples.empty()) throw Error("train: no samples");
  if (cfg.batch_size < 1) throw Error("train: batch_size must be >= 1");
  {
    RowMatrix xin(static_cast<Eigen::Index>(samples.size()), kInputDim);
    RowMatrix yout(static_cast<Eigen::Index>(samples.size()), kOutputDim);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto x = features_of(samples[i]);
      const auto y = samples[i].outputs();
      for (int k = 0; k < kInputDim; ++k) xin(static_cast<Eigen::Index>(i), k) = x[k];
      for (int k = 0; k < kOutputDim; ++k) yout(static_cast<Eigen::Index>(i), k) = y[k];
    }
    model.input_scaler = Scaler::fit(xin);
    model.output_scaler = Scaler::fit(yout);
  }
  const Batch all = make_batch(model, samples);
  const auto n = static_cast<std::size_t>(all.X.cols());

  std::vector<Layer> m1(model.layers.size()), m2(model.layers.size());
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    m1[l] = m2[l] = {Matrix::Zero(model.layers[l].W.rows(), model.layers[l].W.cols()),
                     Vector::Zero(model.layers[l].b.size())};
  }
  Rng rng(cfg.seed);
  std::vector<Eigen::Index> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<Eigen::Index>(i);
  double b1t = 1.0, b2t = 1.0;
  Batch batch;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    if (cfg.shuffle) rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const auto len = static_cast<Eigen::Index>(std::min(cfg.batch_size, n - start));
      batch.X.resize(kInputDim, len);
      batch.Y.resize(kOutputDim, len);
      for (Eigen::Index c = 0; c < len; ++c) {
        batch.X.col(c) = all.X.col(order[start + static_cast<std::size_t>(c)]);
        batch.Y.col(c) = all.Y.col(order[start + static_cast<std::size_t>(c)]);
      }
      double batch_loss = 0.0;
      const auto g = gradients(model, batch, &batch_loss);
      epoch_loss += batch_loss * static_cast<double>(len);

      b1t *= cfg.beta1;
      b2t *= cfg.beta2;
      const double lr_t = cfg.learning_rate;
      const auto step = [&](auto& param, auto& mom, auto& vel, const auto& grad) {
        mom = cfg.beta1 * mom + (1.0 - cfg.beta1) * grad;
        vel = cfg.beta2 * vel + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
        param.array() -= lr_t * (mom.array() / (1.0 - b1t)) /
                         ((vel.array() / (1.0 - b2t)).sqrt() + cfg.epsilon);
      };
      for (std::size_t l = 0; l < model.layers.size(); ++l) {
        step(model.layers[l].W, m1[l].W, m2[l].W, g[l].W);
        step(model.layers[l].b, m1[l].b, m2[l].b, g[l].b);
      }
    }
    epoch_loss /= static_cast<double>(n);
    if (!std::isfinite(epoch_loss) || !model.finite()) {
      std::ostringstream os;
      os << "train: diverged at epoch " << epoch + 1 << " (learning rate " << cfg.learning_rate
         << ")";
      throw DivergenceError(os.str());
    }
    model.loss_history.push_back(epoch_loss);
  }
  return model;
}

struct Metrics {
  std::size_t n = 0;
  std::array<double, kOutputDim> rmse_std{};
  std::array<double, kOutputDim> rmse_raw{};
  double mse_std = 0.0;  ///< mean over channels and samples
  double max_abs_error = 0.0;
  int worst_channel = -1;
  OperatingPoint worst_op;
  double worst_f = 0.0;
};

using Predictor = std::function<std::array<double, kOutputDim>(const AdmittanceSample&)>;

/**
 * Compares `predict` (raw units) against the samples. Standardized errors use
 * `scale`; the worst case is reported in raw units.
 */
inline Metrics evaluate(const Predictor& predict, const Scaler& scale,
                        const std::vector<AdmittanceSample>& samples) {
  Metrics m;
  m.n = samples.size();
  if (samples.empty()) return m;
  std::array<double, kOutputDim> se_std{}, se_raw{};
  for (const auto& s : samples) {
    const auto yhat = predict(s);
    const auto y = s.outputs();
    for (int k = 0; k < kOutputDim; ++k) {
      const double e = yhat[k] - y[k];
      const double es = e / scale.stddev[static_cast<std::size_t>(k)];
      se_raw[k] += e * e;
      se_std[k] += es * es;
      if (std::abs(e) > m.max_abs_error) {
        m.max_abs_error = std::abs(e);
        m.worst_channel = k;
        m.worst_op = s.op();
        m.worst_f = s.f;
      }
    }
  }
  double total = 0.0;
  for (int k = 0; k < kOutputDim; ++k) {
    m.rmse_std[k] = std::sqrt(se_std[k] / static_cast<double>(m.n));
    m.rmse_raw[k] = std::sqrt(se_raw[k] / static_cast<double>(m.n));
    total += se_std[k];
  }
  m.mse_std = total / static_cast<double>(m.n * kOutputDim);
  return m;
}

inline Metrics evaluate(const FnnModel& model, const std::vector<AdmittanceSample>& samples) {
  return evaluate([&](const AdmittanceSample& s) { return forward(model, features_of(s), true); },
                  model.output_scaler, samples);
}

// -- serialization ----------------------------------------------------------

inline nlohmann::json to_json(const FnnModel& m) {
  nlohmann::json j;
  j["spec"] = {{"input_dim", m.spec.input_dim},
               {"hidden", m.spec.hidden},
               {"output_dim", m.spec.output_dim},
               {"activation", "relu"}};
  auto& layers = j["layers"] = nlohmann::json::array();
  for (const auto& l : m.layers) {
    std::vector<std::vector<double>> W(static_cast<std::size_t>(l.W.rows()));
    for (Eigen::Index r = 0; r < l.W.rows(); ++r)
      for (Eigen::Index c = 0; c < l.W.cols(); ++c) W[static_cast<std::size_t>(r)].push_back(l.W(r, c));
    layers.push_back({{"W", W}, {"b", std::vector<double>(l.b.begin(), l.b.end())}});
  }
  j["input_scaler"] = {{"mean", m.input_scaler.mean}, {"std", m.input_scaler.stddev}};
  j["output_scaler"] = {{"mean", m.output_scaler.mean}, {"std", m.output_scaler.stddev}};
  j["final_loss"] = m.loss_history.empty() ? 0.0 : m.loss_history.back();
  j["epochs"] = m.loss_history.size();
  return j;
}

inline FnnModel fnn_model_from_json(const nlohmann::json& j) {
  FnnModel m;
  m.spec.input_dim = j.at("spec").at("input_dim").get<int>();
  m.spec.hidden = j.at("spec").at("hidden").get<std::vector<int>>();
  m.spec.output_dim = j.at("spec").at("output_dim").get<int>();
  m.spec.validate();
  const auto widths = m.spec.widths();
  const auto& layers = j.at("layers");
  if (layers.size() + 1 != widths.size()) throw Error("fnn model: layer count mismatch");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto W = layers[l].at("W").get<std::vector<std::vector<double>>>();
    const auto b = layers[l].at("b").get<std::vector<double>>();
    Layer layer;
    layer.W.resize(widths[l + 1], widths[l]);
    if (W.size() != static_cast<std::size_t>(widths[l + 1]) || b.size() != W.size())
      throw Error("fnn model: layer shape mismatch");
    for (std::size_t r = 0; r < W.size(); ++r) {
      if (W[r].size() != static_cast<std::size_t>(widths[l])) throw Error("fnn model: layer shape mismatch");
      for (std::size_t c = 0; c < W[r].size(); ++c)
        layer.W(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = W[r][c];
    }
    layer.b = Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size()));
    m.layers.push_back(std::move(layer));
  }
  m.input_scaler.mean = j.at("input_scaler").at("mean").get<std::vector<double>>();
  m.input_scaler.stddev = j.at("input_scaler").at("std").get<std::vector<double>>();
  m.output_scaler.mean = j.at("output_scaler").at("mean").get<std::vector<double>>();
  m.output_scaler.stddev = j.at("output_scaler").at("std").get<std::vector<double>>();
  if (m.input_scaler.mean.size() != static_cast<std::size_t>(m.spec.input_dim) ||
      m.output_scaler.mean.size() != static_cast<std::size_t>(m.spec.output_dim))
    throw Error("fnn model: scaler dimension mismatch");
  if (j.contains("final_loss")) m.loss_history.push_back(j.at("final_loss").get<double>());
  return m;
}

}  // namespace ibrkit::nn
