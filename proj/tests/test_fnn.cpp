#include <gtest/gtest.h>

#include "ibrkit/catalog.hpp"
#include "ibrkit/fnn.hpp"

using namespace ibrkit;
using namespace ibrkit::nn;

namespace {

Batch random_batch(const FnnSpec& spec, int n, Rng& rng) {
  Batch b;
  b.X.resize(spec.input_dim, n);
  b.Y.resize(spec.output_dim, n);
  for (Eigen::Index i = 0; i < b.X.size(); ++i) b.X.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < b.Y.size(); ++i) b.Y.data()[i] = rng.normal();
  return b;
}

// re-draws until no hidden pre-activation is near the kink
Batch kink_free_batch(const FnnModel& m, int n, Rng& rng) {
  for (;;) {
    auto b = random_batch(m.spec, n, rng);
    if (kink_margin(m, b) >= 1e-3) return b;
  }
}

std::vector<AdmittanceSample> linear_samples(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<AdmittanceSample> out;
  for (int i = 0; i < n; ++i) {
    AdmittanceSample s;
    s.ibr = "LIN";
    s.V = 0.9 + 0.2 * rng.uniform();
    s.P = -1.0 + 2.0 * rng.uniform();
    s.Q = -1.0 + 2.0 * rng.uniform();
    s.f = std::pow(10.0, 2.3 * rng.uniform());
    const auto x = features_of(s);
    std::array<double, kOutputDim> y{};
    for (int k = 0; k < kOutputDim; ++k) y[k] = 2.0 * x[static_cast<std::size_t>(k % kInputDim)];
    s.set_outputs(y);
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST(FnnSpec, PresetsAndValidation) {
  EXPECT_EQ(preset_narrow().hidden, (std::vector<int>{4, 8}));
  EXPECT_EQ(preset_wide().hidden, (std::vector<int>{32, 32}));
  EXPECT_EQ(preset_for_cluster(0), preset_narrow());
  EXPECT_EQ(preset_for_cluster(1), preset_wide());
  EXPECT_EQ(preset_for_cluster(2), preset_wide());
  EXPECT_THROW(init({4, {}, 8}, 1), Error);
  EXPECT_THROW(init({4, {3, 0}, 8}, 1), Error);
}

TEST(Init, DeterministicZeroBiasHeVariance) {
  const auto a = init(preset_wide(), 5), b = init(preset_wide(), 5);
  ASSERT_EQ(a.layers.size(), 3u);
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    EXPECT_EQ(a.layers[l].W, b.layers[l].W);
    EXPECT_TRUE(a.layers[l].b.isZero(0.0));
  }
  EXPECT_EQ(a.layers[0].W.rows(), 32);
  EXPECT_EQ(a.layers[0].W.cols(), 4);
  EXPECT_EQ(a.layers[2].W.rows(), 8);
  const auto& W = a.layers[1].W;  // 32 x 32
  const double mean = W.mean();
  const double var = (W.array() - mean).square().sum() / static_cast<double>(W.size() - 1);
  EXPECT_NEAR(var, 2.0 / 32.0, 0.2 * 2.0 / 32.0);
  EXPECT_NE(init(preset_wide(), 6).layers[0].W, a.layers[0].W);
}

TEST(Forward, ZeroParametersGiveZeroOutput) {
  auto m = init(preset_narrow(), 1);
  for (auto& l : m.layers) l.W.setZero();
  const auto y = forward(m, {1.0, 0.5, -0.2, 1.3}, false);
  for (double v : y) EXPECT_EQ(v, 0.0);
}

TEST(Forward, SingleHiddenUnitByHand) {
  auto m = init({4, {1}, 8}, 1);
  m.layers[0].W << 0.5, -1.0, 2.0, 0.25;
  m.layers[0].b << 0.1;
  m.layers[1].W.setConstant(1.0);
  m.layers[1].W(3, 0) = -2.0;
  m.layers[1].b.setConstant(0.5);
  const std::array<double, 4> x{1.0, 0.3, 0.4, 2.0};
  const double h = std::max(0.0, 0.5 * 1.0 - 1.0 * 0.3 + 2.0 * 0.4 + 0.25 * 2.0 + 0.1);
  const auto y = forward(m, x, false);
  EXPECT_DOUBLE_EQ(y[0], h + 0.5);
  EXPECT_DOUBLE_EQ(y[3], -2.0 * h + 0.5);
  const std::array<double, 4> off{-3.0, 0.0, 0.0, 0.0};
  EXPECT_DOUBLE_EQ(forward(m, off, false)[0], 0.5);
  EXPECT_THROW(forward(m, {std::nan(""), 0.0, 0.0, 0.0}), Error);
}

TEST(Forward, RawUnitsDestandardize) {
  auto m = init(preset_wide(), 3);
  for (int k = 0; k < kOutputDim; ++k) {
    m.output_scaler.mean[static_cast<std::size_t>(k)] = 0.1 * k - 0.3;
    m.output_scaler.stddev[static_cast<std::size_t>(k)] = 0.5 + k;
  }
  m.input_scaler.mean = {1.0, 0.0, 0.0, 1.0};
  m.input_scaler.stddev = {0.08, 0.6, 0.6, 0.7};
  const std::array<double, 4> x{1.05, 0.4, -0.6, 1.7};
  const auto raw = forward(m, x, true), std = forward(m, x, false);
  for (int k = 0; k < kOutputDim; ++k)
    EXPECT_DOUBLE_EQ(raw[k], std[k] * m.output_scaler.stddev[static_cast<std::size_t>(k)] +
                                 m.output_scaler.mean[static_cast<std::size_t>(k)]);
}

TEST(Forward, PositivelyHomogeneousInFirstLayer) {
  auto m = init({4, {16}, 8}, 9);
  Rng rng(2);
  const auto b = random_batch(m.spec, 10, rng);
  const Matrix y1 = forward_standardized(m, b.X);
  m.layers[0].W *= 3.5;
  const Matrix y2 = forward_standardized(m, b.X);
  EXPECT_LE((y2 - 3.5 * y1).cwiseAbs().maxCoeff(), 1e-12 * y1.cwiseAbs().maxCoeff());
}

TEST(Gradients, MatchFiniteDifferencesOnPresets) {
  Rng rng(17);
  for (const auto& spec : {preset_narrow(), preset_wide()}) {
    const auto m = init(spec, 4);
    const auto b = kink_free_batch(m, 16, rng);
    EXPECT_LT(gradient_check(m, b), 1e-5);
  }
}

TEST(Gradients, LinearRegimeIsNearlyExact) {
  auto m = init({4, {6, 5}, 8}, 8);
  for (std::size_t l = 0; l + 1 < m.layers.size(); ++l) {
    m.layers[l].W = m.layers[l].W.cwiseAbs();
    m.layers[l].b.setConstant(0.5);
  }
  Rng rng(1);
  auto b = random_batch(m.spec, 12, rng);
  b.X = b.X.cwiseAbs();
  EXPECT_GT(kink_margin(m, b), 0.4);
  EXPECT_LT(gradient_check(m, b), 1e-7);
}

TEST(Gradients, ZeroNetworkZeroTargetHasZeroDownstreamGradient) {
  auto m = init(preset_narrow(), 2);
  for (auto& l : m.layers) l.W.setZero();
  Rng rng(3);
  auto b = random_batch(m.spec, 5, rng);
  b.Y.setZero();
  const auto g = gradients(m, b);
  for (std::size_t l = 1; l < g.size(); ++l) {
    EXPECT_TRUE(g[l].W.isZero(0.0));
    EXPECT_TRUE(g[l].b.isZero(0.0));
  }
}

TEST(Gradients, RejectsBatchOnKink) {
  auto m = init({4, {3}, 8}, 2);
  Batch b;
  b.X = Matrix::Zero(4, 2);
  b.Y = Matrix::Zero(8, 2);
  EXPECT_THROW(gradient_check(m, b), Error);
}

TEST(Train, ZeroLearningRateLeavesParameters) {
  const auto samples = linear_samples(50, 1);
  const auto m0 = init(preset_narrow(), 11);
  TrainConfig cfg;
  cfg.max_epochs = 5;
  cfg.learning_rate = 0.0;
  const auto m1 = train(m0, samples, cfg);
  for (std::size_t l = 0; l < m0.layers.size(); ++l) {
    EXPECT_EQ(m1.layers[l].W, m0.layers[l].W);
    EXPECT_EQ(m1.layers[l].b, m0.layers[l].b);
  }
  EXPECT_EQ(m1.loss_history.size(), 5u);
}

TEST(Train, FirstAdamStepMatchesClosedForm) {
  const auto samples = linear_samples(20, 2);
  const auto m0 = init(preset_narrow(), 12);
  TrainConfig cfg;
  cfg.max_epochs = 1;
  cfg.batch_size = 64;
  cfg.learning_rate = 0.01;
  cfg.shuffle = false;
  const auto m1 = train(m0, samples, cfg);

  auto scaled = m0;
  scaled.input_scaler = m1.input_scaler;
  scaled.output_scaler = m1.output_scaler;
  const auto g = gradients(scaled, make_batch(scaled, samples));
  for (std::size_t l = 0; l < m0.layers.size(); ++l) {
    // m_hat = g and v_hat = g^2 after one step
    const Matrix step = (g[l].W.array() / (g[l].W.array().abs() + cfg.epsilon)).matrix() * cfg.learning_rate;
    const Matrix want = m0.layers[l].W - step;
    EXPECT_LE((m1.layers[l].W - want).cwiseAbs().maxCoeff(), 1e-12) << "layer " << l;
    const Vector bstep = (g[l].b.array() / (g[l].b.array().abs() + cfg.epsilon)).matrix() * cfg.learning_rate;
    EXPECT_LE((m1.layers[l].b - (m0.layers[l].b - bstep)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Train, FitsLinearFunction) {
  const auto samples = linear_samples(512, 3);
  TrainConfig cfg;
  cfg.seed = 4;
  cfg.batch_size = 16;
  const auto m = train(init(preset_wide(), 13), samples, cfg);
  EXPECT_EQ(m.loss_history.size(), 1200u);
  EXPECT_LT(evaluate(m, samples).mse_std, 1e-4);
  EXPECT_TRUE(m.finite());
}

TEST(Train, DeterministicLossHistory) {
  const auto samples = linear_samples(80, 5);
  TrainConfig cfg;
  cfg.max_epochs = 30;
  cfg.seed = 9;
  const auto a = train(init(preset_narrow(), 1), samples, cfg);
  const auto b = train(init(preset_narrow(), 1), samples, cfg);
  EXPECT_EQ(a.loss_history, b.loss_history);
  EXPECT_EQ(a.layers[1].W, b.layers[1].W);
}

TEST(Train, DivergenceReportsEpochAndRate) {
  const auto samples = linear_samples(40, 6);
  TrainConfig cfg;
  cfg.max_epochs = 50;
  cfg.learning_rate = 1e200;
  try {
    train(init(preset_narrow(), 1), samples, cfg);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("1e+200"), std::string::npos);
  }
  EXPECT_THROW(train(init(preset_narrow(), 1), {}, cfg), Error);
}

// windowed mean loss on a real cluster dataset must not go up
TEST(Train, SmoothedLossIsNonIncreasingOnCatalogCluster) {
  const auto cat = Catalog::load(std::string(IBRKIT_DATA_DIR) + "/catalog.json");
  const auto samples = generate({cat.get("GFLI3")}, GridSpec::training());
  TrainConfig cfg;
  cfg.seed = 44;
  const auto m = train(init(preset_wide(), 44), samples, cfg);
  const auto& h = m.loss_history;
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t w = 0; w + 50 <= h.size(); w += 50) {
    const double avg = std::accumulate(h.begin() + static_cast<long>(w), h.begin() + static_cast<long>(w + 50), 0.0) / 50.0;
    EXPECT_LE(avg, prev) << "window starting at epoch " << w;
    prev = avg;
  }
}

TEST(Evaluate, ExactPredictionsAndConstantBaseline) {
  const auto samples = linear_samples(64, 7);
  const auto exact = evaluate([](const AdmittanceSample& s) { return s.outputs(); },
                              Scaler{std::vector<double>(8, 0.0), std::vector<double>(8, 1.0)}, samples);
  EXPECT_EQ(exact.mse_std, 0.0);
  EXPECT_EQ(exact.max_abs_error, 0.0);
  EXPECT_EQ(exact.n, 64u);

  RowMatrix Y(64, 8);
  for (Eigen::Index i = 0; i < 64; ++i)
    for (int k = 0; k < 8; ++k) Y(i, k) = samples[static_cast<std::size_t>(i)].outputs()[k];
  const auto sc = Scaler::fit(Y);
  std::array<double, 8> mean{};
  std::copy(sc.mean.begin(), sc.mean.end(), mean.begin());
  const auto base = evaluate([&](const AdmittanceSample&) { return mean; }, sc, samples);
  EXPECT_NEAR(base.mse_std, 1.0, 1e-12);
  for (double r : base.rmse_std) EXPECT_NEAR(r, 1.0, 1e-12);

  auto shuffled = samples;
  Rng rng(1);
  rng.shuffle(shuffled);
  const auto again = evaluate([&](const AdmittanceSample&) { return mean; }, sc, shuffled);
  EXPECT_NEAR(again.mse_std, base.mse_std, 1e-12);
  EXPECT_EQ(again.max_abs_error, base.max_abs_error);
}

TEST(Evaluate, WorstCaseLocation) {
  auto samples = linear_samples(10, 8);
  auto preds = samples;
  preds[6].b_dq += 0.75;
  const auto m = evaluate(
      [&](const AdmittanceSample& s) {
        for (std::size_t i = 0; i < samples.size(); ++i)
          if (&samples[i] == &s) return preds[i].outputs();
        return s.outputs();
      },
      Scaler{std::vector<double>(8, 0.0), std::vector<double>(8, 1.0)}, samples);
  EXPECT_NEAR(m.max_abs_error, 0.75, 1e-12);
  EXPECT_EQ(m.worst_channel, 3);
  EXPECT_EQ(m.worst_f, samples[6].f);
}

TEST(FnnJson, RoundTripGivesIdenticalPredictions) {
  const auto samples = linear_samples(40, 9);
  TrainConfig cfg;
  cfg.max_epochs = 3;
  const auto m = train(init(preset_wide(), 2), samples, cfg);
  const auto back = fnn_model_from_json(nlohmann::json::parse(to_json(m).dump()));
  EXPECT_EQ(back.spec, m.spec);
  for (const auto& s : samples) EXPECT_EQ(forward(back, features_of(s)), forward(m, features_of(s)));
  auto j = to_json(m);
  j["layers"][1]["b"].push_back(1.0);
  EXPECT_THROW(fnn_model_from_json(j), Error);
}
