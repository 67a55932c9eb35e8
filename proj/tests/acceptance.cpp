#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "ibrkit/catalog.hpp"
#include "ibrkit/pipeline.hpp"
#include "ibrkit/store.hpp"
#include "support/oracles.hpp"

using namespace ibrkit;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

int failures = 0;

void report(int id, const char* name, const std::function<void(Outcome&)>& body) {
  Outcome o;
  try {
    body(o);
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail << " [exception: " << e.what() << "]";
  }
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " " << name << ":" << o.detail.str()
            << std::endl;
}

const Catalog& catalog() {
  static const Catalog c = Catalog::load(std::string(IBRKIT_DATA_DIR) + "/catalog.json");
  return c;
}

struct Trained {
  std::vector<AdmittanceSample> train;
  ClusterRun clusters;
  std::map<int, nn::FnnModel> nets;
  double train_seconds = 0.0;
};

const std::uint64_t kSeed = 42;

Trained& trained() {
  static Trained t = [] {
    Trained r;
    r.train = generate(catalog().training_set(), GridSpec::training());
    r.clusters = run_clustering(r.train, GridSpec::training(), kSeed);
    nn::TrainConfig cfg;
    cfg.seed = kSeed;
    const auto t0 = Clock::now();
    for (int c = 0; c < r.clusters.model.k; ++c) r.nets[c] = train_cluster(r.train, r.clusters.model, c, cfg);
    r.train_seconds = seconds_since(t0);
    return r;
  }();
  return t;
}

int run_cli(const fs::path& store, const std::string& args) {
  const std::string cmd = std::string(IBRKIT_CLI_PATH) + " --store " + store.string() + " --seed " +
                          std::to_string(kSeed) + " " + args + " >> " + (store.string() + ".log") + " 2>&1";
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = read_file(e.path());
  return files;
}

InverterParams controls_off(InverterParams p) {
  p.kp_i = p.ki_i = p.kp_pll = p.ki_pll = 0.0;
  p.kf = 0.0;
  p.decoupling = 0.0;
  return p;
}

}  // namespace

int main() {
  std::cout.setf(std::ios::fmtflags(0), std::ios::floatfield);
  std::cout.precision(4);

  report(1, "grid exactness", [](Outcome& o) {
    const auto n_train_ops = operating_points(GridSpec::training()).size();
    const auto n_test_ops = operating_points(GridSpec::testing()).size();
    o.check(n_train_ops == 39, "39 training operating points");
    o.check(n_test_ops == 243, "243 testing operating points");
    double worst = 0.0;
    for (const auto& p : catalog().ibrs()) {
      const auto t0 = Clock::now();
      const auto tr = generate({p}, GridSpec::training());
      const auto te = generate({p}, GridSpec::testing());
      const double dt = seconds_since(t0);
      worst = std::max(worst, dt);
      o.check(tr.size() == 3900, p.name + " has 3900 training samples");
      o.check(te.size() == 48600, p.name + " has 48600 testing samples");
      o.check(dt < 10.0, p.name + " generated in under 10 s");
    }
    o.detail << " ops " << n_train_ops << "/" << n_test_ops << ", samples per IBR 3900/48600, slowest IBR "
             << worst << " s";
  });

  report(2, "composition oracle", [](Outcome& o) {
    Rng rng(2024);
    double worst = 0.0;
    std::size_t max_states = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const auto rs = oracle::random_system(rng);
      const auto sys = ss::compose(ss::stack_blocks(rs.blocks), rs.ic);
      max_states = std::max(max_states, sys.n_states());
      for (int k = 0; k < 20; ++k) {
        const double w = std::pow(10.0, -1.0 + 3.0 * rng.uniform());
        const auto G = ss::frequency_response(sys, w);
        const auto R = oracle::composed_tf(rs.blocks, rs.ic, w);
        const double rel = (G - R).norm() / std::max(R.norm(), 1e-300);
        worst = std::max(worst, R.norm() == 0.0 ? G.norm() : rel);
      }
    }
    o.check(worst <= 1e-10, "relative error <= 1e-10");
    o.check(max_states <= 6, "at most 6 states");
    o.detail << " 100 systems x 20 frequencies, max relative error " << worst;
  });

  report(3, "analytical RL oracle", [](Outcome& o) {
    double worst = 0.0;
    for (const char* name : {"GFLI1", "GFLI3", "GFLI4"}) {
      const auto p = controls_off(catalog().get(name));
      for (const auto& op : {OperatingPoint{1.0, 0.0, 0.0}, OperatingPoint{0.9, 1.0, 0.0}, OperatingPoint{1.1, -0.6, 0.8}}) {
        const auto sys = linearize(p, op);
        for (double f : frequency_grid(GridSpec::training())) {
          const auto y = admittance_at(sys, f);
          const std::complex<double> z = std::complex<double>(0.0, 2.0 * std::numbers::pi * f) * (p.Lf / p.omega_b) + p.Rf;
          const auto det = z * z + p.Lf * p.Lf;
          Eigen::Matrix2cd want, got;
          want << z / det, p.Lf / det, -p.Lf / det, z / det;
          got << y.Ydd, y.Ydq, y.Yqd, y.Yqq;
          worst = std::max(worst, (got - want).cwiseAbs().maxCoeff() / want.cwiseAbs().maxCoeff());
        }
      }
    }
    o.check(worst <= 1e-10, "relative error <= 1e-10");
    o.detail << " 100 training frequencies, max relative error " << worst;
  });

  report(4, "clustering structure", [](Outcome& o) {
    const auto& run = trained().clusters;
    o.check(run.selection.best_k == 3, "k* = 3");
    for (int c = 0; c < run.model.k; ++c) {
      bool gfli = false, gfmi = false;
      for (const auto& [ibr, cl] : run.model.ibr_majority)
        if (cl == c) (ibr.rfind("GFMI", 0) == 0 ? gfmi : gfli) = true;
      o.check(!(gfli && gfmi), "cluster " + std::to_string(c) + " is not mixed");
    }
    o.detail << " k* = " << run.selection.best_k << ";";
    for (const auto& [ibr, cl] : run.model.ibr_majority) o.detail << " " << ibr << "->" << cl;
  });

  report(5, "k-means and silhouette oracles", [](Outcome& o) {
    Rng rng(5);
    double sil_err = 0.0;
    int beaten = 0;
    for (int d = 0; d < 50; ++d) {
      const int n = 6 + static_cast<int>(rng.below(25));
      const int dim = 1 + static_cast<int>(rng.below(4));
      const int k = 2 + static_cast<int>(rng.below(3));
      RowMatrix X(n, dim);
      for (Index i = 0; i < X.size(); ++i) X.data()[i] = rng.normal() + (i % 3 == 0 ? 3.0 * rng.uniform() : 0.0);
      std::vector<std::vector<double>> pts;
      for (Index i = 0; i < n; ++i) pts.emplace_back(X.row(i).begin(), X.row(i).end());
      const auto km = kmeans(X, k, 100 + static_cast<std::uint64_t>(d));
      double best_random = std::numeric_limits<double>::infinity();
      for (int t = 0; t < 1000; ++t) {
        std::vector<int> labels(static_cast<std::size_t>(n));
        for (auto& l : labels) l = static_cast<int>(rng.below(static_cast<std::size_t>(k)));
        best_random = std::min(best_random, oracle::inertia_of(pts, labels, k));
        if (t < 5 && std::set<int>(labels.begin(), labels.end()).size() >= 2)
          sil_err = std::max(sil_err, std::abs(silhouette(X, labels) - oracle::silhouette(pts, labels)));
      }
      if (km.inertia > best_random + 1e-12) ++beaten;
      sil_err = std::max(sil_err, std::abs(silhouette(X, km.labels) - oracle::silhouette(pts, km.labels)));
    }
    o.check(beaten == 0, "k-means never worse than random labelings");
    o.check(sil_err <= 1e-12, "silhouette within 1e-12");
    o.detail << " 50 datasets, " << beaten << " beaten by random labelings, max silhouette error " << sil_err;
  });

  report(6, "gradient correctness", [](Outcome& o) {
    const auto t0 = Clock::now();
    Rng rng(6);
    double worst = 0.0;
    for (const auto& spec : {nn::preset_narrow(), nn::preset_wide()})
      for (int trial = 0; trial < 5; ++trial) {
        const auto m = nn::init(spec, 600 + static_cast<std::uint64_t>(trial));
        nn::Batch b;
        do {
          b.X.resize(spec.input_dim, 16);
          b.Y.resize(spec.output_dim, 16);
          for (Index i = 0; i < b.X.size(); ++i) b.X.data()[i] = rng.normal();
          for (Index i = 0; i < b.Y.size(); ++i) b.Y.data()[i] = rng.normal();
        } while (nn::kink_margin(m, b) < 1e-3);
        worst = std::max(worst, nn::gradient_check(m, b));
      }
    const double dt = seconds_since(t0);
    o.check(worst < 1e-5, "max relative error < 1e-5");
    o.check(dt < 30.0, "runtime < 30 s");
    o.detail << " presets (4,8) and (32,32), max relative error " << worst << ", " << dt << " s";
  });

  report(7, "regression quality", [](Outcome& o) {
    auto& t = trained();
    const auto test = generate(catalog().training_set(), GridSpec::testing());
    o.check(t.train_seconds < 600.0, "training under 10 min");
    o.detail << " trained " << t.nets.size() << " networks in " << t.train_seconds << " s;";
    for (const auto& [c, net] : t.nets) {
      std::vector<AdmittanceSample> rows, high;
      for (const auto& s : test)
        if (t.clusters.model.cluster_of(s.ibr) == c) {
          rows.push_back(s);
          if (s.f >= 10.0) high.push_back(s);
        }
      const auto all = nn::evaluate(net, rows);
      const auto base = constant_baseline(net, rows);
      const auto hm = nn::evaluate(net, high);
      const double worst = *std::max_element(hm.rmse_std.begin(), hm.rmse_std.end());
      const double ratio = base.mse_std / all.mse_std;
      o.check(worst < 0.15, "cluster " + std::to_string(c) + " RMSE(f>=10) < 0.15");
      o.check(ratio >= 10.0, "cluster " + std::to_string(c) + " baseline ratio >= 10");
      o.detail << " cluster " << c << ": max RMSE(f>=10) " << worst << ", baseline/MSE " << ratio << ";";
    }
  });

  report(8, "few-shot assignment", [](Outcome& o) {
    auto& t = trained();
    const auto& m = t.clusters.model;
    const auto rows = measure(catalog().get("GFLI4"), {1.0, 1.0, 0.0}, frequency_grid(1.0, 200.0, 10));
    const auto a = assign_measured(rows, m);
    const int target = m.cluster_of("GFLI1");
    o.check(target == m.cluster_of("GFLI2"), "GFLI1 and GFLI2 share a cluster");
    o.check(a.cluster == target, "assigned to the GFLI1/GFLI2 cluster");
    for (int c = 0; c < m.k; ++c)
      if (c != target) o.check(a.distances[static_cast<std::size_t>(c)] > a.distances[static_cast<std::size_t>(target)], "strictly smallest distance");
    const auto test = generate({catalog().get("GFLI4")}, GridSpec::testing());
    const auto bands = evaluate_bands(test, m, t.nets, {{"GFLI4", a.cluster}});
    double low = 0.0, mid = 0.0;
    for (const auto& r : bands) {
      if (r.band == "low") low = r.metrics.mse_std;
      if (r.band == "mid") mid = r.metrics.mse_std;
    }
    o.check(low > mid, "low-band error above mid-band error");
    o.detail << " cluster " << a.cluster << ", distances";
    for (double d : a.distances) o.detail << " " << d;
    o.detail << "; GFLI4 MSE low " << low << " vs mid " << mid;
  });

  report(9, "determinism", [](Outcome& o) {
    const auto base = fs::temp_directory_path() / "ibrkit_acceptance";
    fs::remove_all(base);
    fs::create_directories(base);
    std::vector<std::map<std::string, std::string>> runs;
    for (const char* name : {"a", "b"}) {
      const auto store = base / name;
      fs::create_directories(store);
      const auto meas = (store / "gfli4_measured.csv").string();
      const auto gfli4 = (store / "gfli4_test.csv").string();
      for (const std::string& args :
           {std::string("generate"), std::string("generate --role test"), std::string("cluster"), std::string("train"),
            "generate --role measure --ibr GFLI4 --out " + meas, "assign " + meas + " --ibr GFLI4",
            "generate --role test --ibr GFLI4 --out " + gfli4, std::string("eval"),
            "eval --test " + gfli4 + " --out " + (store / "report_eval_gfli4.csv").string(),
            std::string("predict --ibr GFLI4 --reference GFLI4")}) {
        const int rc = run_cli(store, args);
        o.check(rc == 0, std::string("ibrkit ") + args + " (run " + name + ") exit " + std::to_string(rc));
        if (rc != 0) return;
      }
      runs.push_back(snapshot(store));
    }
    std::size_t identical = 0;
    for (const auto& [file, bytes] : runs[0]) {
      const auto it = runs[1].find(file);
      const bool same = it != runs[1].end() && it->second == bytes;
      o.check(same, file + " identical");
      identical += same;
    }
    o.check(runs[0].size() == runs[1].size(), "same file set");
    o.detail << " " << identical << "/" << runs[0].size() << " files byte-identical across two full pipeline runs";
  });

  return failures == 0 ? 0 : 1;
}
