#include <gtest/gtest.h>

#include <sstream>

#include "ibrkit/catalog.hpp"
#include "ibrkit/dataset.hpp"

using namespace ibrkit;

namespace {

const Catalog& catalog() {
  static const Catalog c = Catalog::load(std::string(IBRKIT_DATA_DIR) + "/catalog.json");
  return c;
}

std::string to_csv(const std::vector<AdmittanceSample>& s) {
  std::ostringstream os;
  write_csv(os, s);
  return os.str();
}

}  // namespace

TEST(OperatingPoints, TrainingAndTestingCounts) {
  EXPECT_EQ(operating_points(GridSpec::training()).size(), 39u);
  EXPECT_EQ(operating_points(GridSpec::testing()).size(), 243u);
}

TEST(OperatingPoints, OrderingIsVThenPThenQAscending) {
  const auto ops = operating_points(GridSpec::training());
  EXPECT_EQ(ops.front().V, 0.9);
  EXPECT_EQ(ops.front().P, -1.0);
  EXPECT_EQ(ops.front().Q, 0.0);
  EXPECT_EQ(ops.back().V, 1.1);
  EXPECT_EQ(ops.back().P, 1.0);
  for (std::size_t i = 1; i < ops.size(); ++i) {
    const auto a = std::tuple(ops[i - 1].V, ops[i - 1].P, ops[i - 1].Q);
    const auto b = std::tuple(ops[i].V, ops[i].P, ops[i].Q);
    EXPECT_LT(a, b);
  }
}

TEST(OperatingPoints, RatedPowerFilter) {
  const auto ops = operating_points(GridSpec::testing());
  bool has_unit = false;
  for (const auto& op : ops) {
    EXPECT_LE(std::hypot(op.P, op.Q), 1.0 + 1e-12);
    EXPECT_FALSE(op.P == 1.0 && std::abs(op.Q - 0.2) < 1e-12);
    has_unit |= op.P == 1.0 && op.Q == 0.0;
  }
  EXPECT_TRUE(has_unit);
  // step values come out exact, not accumulated
  bool has_minus_04 = false;
  for (const auto& op : ops) has_minus_04 |= op.P == -0.4;
  EXPECT_TRUE(has_minus_04);
}

TEST(FrequencyGrid, SmallCases) {
  EXPECT_EQ(frequency_grid(1.0, 200.0, 2), (std::vector<double>{1.0, 200.0}));
  const auto g = frequency_grid(1.0, 100.0, 3);
  EXPECT_EQ(g.front(), 1.0);
  EXPECT_NEAR(g[1], 10.0, 1e-13);
  EXPECT_EQ(g.back(), 100.0);
}

TEST(FrequencyGrid, TrainingGridIsGeometric) {
  const auto g = frequency_grid(GridSpec::training());
  ASSERT_EQ(g.size(), 100u);
  EXPECT_EQ(g.front(), 1.0);
  EXPECT_EQ(g.back(), 200.0);
  const double r = g[1] / g[0];
  for (std::size_t k = 1; k + 1 < g.size(); ++k) EXPECT_NEAR(g[k + 1] / g[k], r, 1e-12);
  EXPECT_EQ(frequency_grid(GridSpec::testing()).size(), 200u);
}

TEST(Generate, PerIbrCountsAndOrdering) {
  const auto train = generate({catalog().get("GFLI1"), catalog().get("GFMI1")}, GridSpec::training());
  ASSERT_EQ(train.size(), 2u * 3900u);
  EXPECT_EQ(train[0].ibr, "GFLI1");
  EXPECT_EQ(train[3900].ibr, "GFMI1");
  const auto freqs = frequency_grid(GridSpec::training());
  const auto ops = operating_points(GridSpec::training());
  for (std::size_t i = 0; i < 3900; ++i) {
    EXPECT_EQ(train[i].f, freqs[i % 100]);
    EXPECT_EQ(train[i].V, ops[i / 100].V);
    EXPECT_EQ(train[i].Q, ops[i / 100].Q);
  }
  for (const auto& s : train)
    for (double y : s.outputs()) ASSERT_TRUE(std::isfinite(y));
  EXPECT_TRUE(generate({}, GridSpec::training()).empty());
}

TEST(Generate, TestingGridSingleIbr) {
  const auto test = generate({catalog().get("GFLI2")}, GridSpec::testing());
  EXPECT_EQ(test.size(), 48600u);
}

TEST(Generate, ByteIdenticalAcrossRuns) {
  const auto ibrs = catalog().training_set();
  EXPECT_EQ(to_csv(generate(ibrs, GridSpec::training())), to_csv(generate(ibrs, GridSpec::training())));
}

TEST(Generate, SampleMatchesDirectAdmittance) {
  const auto& p = catalog().get("GFMI2");
  const auto s = generate({p}, GridSpec::training());
  const auto& row = s[7 * 100 + 42];
  const auto y = admittance(p, row.op(), row.f);
  EXPECT_EQ(row.g_dd, y.Ydd.real());
  EXPECT_EQ(row.b_qq, y.Yqq.imag());
}

TEST(Csv, HeaderIsExact) {
  const auto text = to_csv({});
  EXPECT_EQ(text, "ibr,V,P,Q,f_hz,g_dd,b_dd,g_dq,b_dq,g_qd,b_qd,g_qq,b_qq\n");
}

TEST(Csv, RoundTripIsIdentity) {
  auto samples = generate({catalog().get("GFLI3")}, GridSpec::training());
  samples.resize(100);
  std::istringstream in(to_csv(samples));
  EXPECT_EQ(read_csv(in), samples);
}

TEST(Csv, RoundTripThroughFile) {
  const auto samples = generate({catalog().get("GFMI3")}, GridSpec::training());
  const auto path = std::filesystem::temp_directory_path() / "ibrkit_dataset_roundtrip.csv";
  write_csv(path, samples);
  EXPECT_EQ(read_csv(path), samples);
  std::filesystem::remove(path);
}

TEST(Csv, HeaderOnlyIsEmptyAndCommentsAreSkipped) {
  std::istringstream a("ibr,V,P,Q,f_hz,g_dd,b_dd,g_dq,b_dq,g_qd,b_qd,g_qq,b_qq\n");
  EXPECT_TRUE(read_csv(a).empty());
  std::istringstream b("# seed=1\nibr,V,P,Q,f_hz,g_dd,b_dd,g_dq,b_dq,g_qd,b_qd,g_qq,b_qq\n# note\nX,1,0,0,1,1,2,3,4,5,6,7,8\n");
  const auto s = read_csv(b);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].b_qq, 8.0);
}

TEST(Csv, ShortRowReportsItsLine) {
  std::istringstream in(
      "ibr,V,P,Q,f_hz,g_dd,b_dd,g_dq,b_dq,g_qd,b_qd,g_qq,b_qq\n"
      "X,1,0,0,1,1,2,3,4,5,6,7,8\n"
      "X,1,0,0,1,1,2,3,4,5,6,7\n");
  try {
    read_csv(in);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(Csv, RejectsGarbageNumberAndWrongHeader) {
  std::istringstream bad_num("ibr,V,P,Q,f_hz,g_dd,b_dd,g_dq,b_dq,g_qd,b_qd,g_qq,b_qq\nX,1,0,0,1,1,2,3,4,5,6,7,eight\n");
  EXPECT_THROW(read_csv(bad_num), ParseError);
  std::istringstream bad_header("ibr,V,P,Q\n");
  EXPECT_THROW(read_csv(bad_header), ParseError);
}
