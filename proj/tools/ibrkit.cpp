#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "ibrkit/catalog.hpp"
#include "ibrkit/pipeline.hpp"
#include "ibrkit/store.hpp"

using namespace ibrkit;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string store;
  std::uint64_t seed = 42;
};

std::string default_catalog(const ModelStore& store) {
  if (fs::exists(store.catalog())) return store.catalog().string();
  return std::string(IBRKIT_DATA_DIR) + "/catalog.json";
}

template <class Fn>
void write_to(const fs::path& path, Fn&& fn) {
  std::ostringstream os;
  fn(os);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file(path, os.str());
}

std::string cluster_arg_help() { return "cluster index (0-based) or `all`"; }

// -- generate ------------------------------------------------------------------

struct GenerateArgs {
  std::string catalog, role = "train", out;
  std::vector<std::string> ibrs;
  double V = 1.0, P = 1.0, Q = 0.0;
  std::size_t n_freq = 0;
};

int run_generate(const Common& c, const GenerateArgs& a) {
  const ModelStore store(ModelStore::resolve(c.store));
  const auto catalog = Catalog::load(a.catalog.empty() ? default_catalog(store) : a.catalog);
  const auto ibrs = a.ibrs.empty() ? catalog.training_set() : catalog.select(a.ibrs);

  if (a.role == "measure") {
    if (ibrs.size() != 1) throw Error("generate --role measure needs exactly one --ibr");
    const auto freqs = frequency_grid(1.0, 200.0, a.n_freq ? a.n_freq : 10);
    const auto rows = measure(ibrs.front(), {a.V, a.P, a.Q}, freqs);
    const fs::path out = a.out.empty() ? store.root() / ("measure_" + ibrs.front().name + ".csv") : fs::path(a.out);
    write_to(out, [&](std::ostream& os) { write_measurements(os, rows); });
    std::cout << "wrote " << rows.size() << " measurement rows to " << out.string() << '\n';
    return 0;
  }

  GridSpec spec;
  if (a.role == "train")
    spec = GridSpec::training();
  else if (a.role == "test")
    spec = GridSpec::testing();
  else
    throw Error("unknown role '" + a.role + "' (expected train, test or measure)");
  if (a.n_freq) spec.n_freq = a.n_freq;

  const auto samples = generate(ibrs, spec);
  fs::path out = a.out;
  if (out.empty()) {
    const StoreLock lock(store);
    out = spec.role == GridRole::Train ? store.train_csv() : store.test_csv();
    catalog.save(store.catalog());
    write_csv(out, samples);
  } else {
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_csv(out, samples);
  }
  std::cout << "wrote " << samples.size() << " rows (" << ibrs.size() << " IBRs x "
            << operating_points(spec).size() << " operating points x " << spec.n_freq
            << " frequencies) to " << out.string() << '\n';
  return 0;
}

// -- cluster -------------------------------------------------------------------

struct ClusterArgs {
  std::string train;
  int k_min = 2, k_max = 6, k = 0;
};

int run_cluster(const Common& c, const ClusterArgs& a) {
  const ModelStore store(ModelStore::resolve(c.store));
  const StoreLock lock(store);
  const auto samples = read_csv(a.train.empty() ? store.train_csv() : fs::path(a.train));
  const auto run = run_clustering(samples, GridSpec::training(), c.seed, a.k_min, a.k_max,
                                  a.k > 0 ? std::optional<int>(a.k) : std::nullopt);
  store.save_cluster_model(run.model);
  write_to(store.report("k_selection.csv"), [&](std::ostream& os) { write_k_report(os, run.selection, c.seed); });

  std::printf("%3s %12s %10s %10s %6s\n", "k", "inertia", "silhouette", "drop", "avg");
  for (const auto& s : run.selection.scores)
    std::printf("%3d %12.4f %10.4f %10.4f %6.1f%s\n", s.k, s.inertia, s.silhouette, s.inertia_drop,
                s.average_rank, s.k == run.selection.best_k ? "  <- k*" : "");
  std::printf("k* = %d, clustered at k = %d\n", run.selection.best_k, run.model.k);
  for (const auto& [ibr, cl] : run.model.ibr_majority) std::printf("  %-8s -> cluster %d\n", ibr.c_str(), cl);
  return 0;
}

// -- train ---------------------------------------------------------------------

struct TrainArgs {
  std::string which = "all", train;
  std::size_t epochs = 1200, batch = 64;
  double lr = 1e-3;
};

int run_train(const Common& c, const TrainArgs& a) {
  const ModelStore store(ModelStore::resolve(c.store));
  const StoreLock lock(store);
  std::string fp;
  const auto model = store.load_cluster_model(&fp);
  const auto samples = read_csv(a.train.empty() ? store.train_csv() : fs::path(a.train));
  std::vector<int> clusters;
  if (a.which == "all") {
    for (int k = 0; k < model.k; ++k) clusters.push_back(k);
  } else {
    try {
      clusters.push_back(std::stoi(a.which));
    } catch (const std::exception&) {
      throw Error("train: expected " + cluster_arg_help() + ", got '" + a.which + "'");
    }
  }
  nn::TrainConfig cfg;
  cfg.max_epochs = a.epochs;
  cfg.batch_size = a.batch;
  cfg.learning_rate = a.lr;
  cfg.seed = c.seed;
  for (int k : clusters) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto net = train_cluster(samples, model, k, cfg);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    store.save_fnn({k, fp, c.seed, net});
    write_to(store.report("loss_" + std::to_string(k) + ".csv"),
             [&](std::ostream& os) { write_loss_history(os, net, c.seed); });
    std::string arch;
    for (int w : net.spec.hidden) arch += (arch.empty() ? "" : ",") + std::to_string(w);
    std::printf("cluster %d: hidden (%s), %zu epochs, final loss %.6g (%.1f s)\n", k, arch.c_str(),
                net.loss_history.size(), net.loss_history.empty() ? 0.0 : net.loss_history.back(), secs);
  }
  return 0;
}

// -- assign --------------------------------------------------------------------

struct AssignArgs {
  std::string measurement, ibr;
};

int run_assign(const Common& c, const AssignArgs& a) {
  const ModelStore store(ModelStore::resolve(c.store));
  const auto model = store.load_cluster_model();
  std::ifstream in(a.measurement, std::ios::binary);
  if (!in) throw Error("cannot open measurement file " + a.measurement);
  const auto rows = read_measurements(in);
  const auto result = assign_measured(rows, model);

  for (std::size_t k = 0; k < result.distances.size(); ++k)
    std::printf("d_%zu = %.6g%s\n", k, result.distances[k], static_cast<int>(k) == result.cluster ? "  <- assigned" : "");
  std::printf("assigned to cluster %d\n", result.cluster);

  const StoreLock lock(store);
  const std::string tag = a.ibr.empty() ? fs::path(a.measurement).stem().string() : a.ibr;
  write_to(store.report("assign_" + tag + ".csv"), [&](std::ostream& os) {
    write_seed_line(os, model.seed);
    os << "cluster,distance,assigned\n";
    for (std::size_t k = 0; k < result.distances.size(); ++k)
      os << k << ',' << format_double(result.distances[k]) << ','
         << (static_cast<int>(k) == result.cluster ? 1 : 0) << '\n';
  });
  if (!a.ibr.empty()) store.save_assignment(a.ibr, {result.cluster, result.distances});
  return 0;
}

// -- predict -------------------------------------------------------------------

struct PredictArgs {
  int cluster = -1;
  std::string ibr, out, reference, error_out, catalog;
  std::vector<double> V{1.0};
  double p_min = -1.0, p_max = 1.0, p_step = 0.2;
  double q_min = 0.0, q_max = 0.0, q_step = 0.2;
  std::size_t n_freq = 200;
};

int run_predict(const Common& c, const PredictArgs& a) {
  const ModelStore store(ModelStore::resolve(c.store));
  const auto model = store.load_cluster_model();
  int k = a.cluster;
  if (k < 0) {
    if (a.ibr.empty()) throw Error("predict: give --cluster or --ibr");
    std::map<std::string, int> assigned;
    for (const auto& [name, s] : store.load_assignments()) assigned[name] = s.cluster;
    k = route(a.ibr, model, assigned);
  }
  const auto net = store.load_fnn(k);

  GridSpec spec;
  spec.v_values = a.V;
  spec.p_min = a.p_min, spec.p_max = a.p_max, spec.p_step = a.p_step;
  spec.q_min = a.q_min, spec.q_max = a.q_max, spec.q_step = a.q_step;
  spec.n_freq = a.n_freq;
  const auto ops = operating_points(spec);
  const auto requested = a.V.size() * detail::step_values(a.p_min, a.p_max, a.p_step).size() *
                         detail::step_values(a.q_min, a.q_max, a.q_step).size();
  if (ops.size() < requested)
    std::cerr << "warning: skipped " << requested - ops.size() << " infeasible operating point(s)\n";
  const auto freqs = frequency_grid(spec);
  const std::string label = a.ibr.empty() ? "cluster" + std::to_string(k) : a.ibr;
  const auto pred = predict_grid(net.model, label, ops, freqs);

  const fs::path out = a.out.empty() ? store.report("predict_" + label + ".csv") : fs::path(a.out);
  write_to(out, [&](std::ostream& os) { write_tagged_csv(os, pred, "predicted", c.seed); });
  std::cout << "wrote " << pred.size() << " predicted rows (cluster " << k << ") to " << out.string() << '\n';

  if (!a.reference.empty()) {
    const auto catalog = Catalog::load(a.catalog.empty() ? default_catalog(store) : a.catalog);
    auto truth = generate({catalog.get(a.reference)}, spec);
    for (auto& s : truth) s.ibr = label;
    const auto err = prediction_error(pred, truth);
    fs::path eout = a.error_out;
    if (eout.empty()) eout = out.parent_path() / (out.stem().string() + "_error.csv");
    write_to(eout, [&](std::ostream& os) { write_tagged_csv(os, err, "error", c.seed); });
    std::cout << "wrote " << err.size() << " error rows against " << a.reference << " to " << eout.string() << '\n';
  }
  return 0;
}

// -- eval ----------------------------------------------------------------------

struct EvalArgs {
  std::string test, out;
};

int run_eval(const Common& c, const EvalArgs& a) {
  const ModelStore store(ModelStore::resolve(c.store));
  const auto model = store.load_cluster_model();
  const auto samples = read_csv(a.test.empty() ? store.test_csv() : fs::path(a.test));
  std::map<std::string, int> assigned;
  for (const auto& [name, s] : store.load_assignments()) assigned[name] = s.cluster;

  std::map<int, nn::FnnModel> nets;
  std::set<int> needed;
  for (const auto& s : samples) needed.insert(route(s.ibr, model, assigned));
  for (int k : needed) nets[k] = store.load_fnn(k).model;

  const auto rows = evaluate_bands(samples, model, nets, assigned);
  const fs::path out = a.out.empty() ? store.report("eval.csv") : fs::path(a.out);
  write_to(out, [&](std::ostream& os) { write_eval_report(os, rows, c.seed); });

  std::printf("%-8s %7s %-5s %7s %12s %12s %12s\n", "ibr", "cluster", "band", "n", "mse_std", "baseline", "max_abs_err");
  for (const auto& r : rows)
    std::printf("%-8s %7d %-5s %7zu %12.4g %12.4g %12.4g\n", r.ibr.c_str(), r.cluster, r.band.c_str(),
                r.metrics.n, r.metrics.mse_std, r.baseline_mse_std, r.metrics.max_abs_error);
  std::cout << "report written to " << out.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Admittance identification of inverter-based resources with cluster-specialized networks"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--store", common.store, "model store directory (default $IBRKIT_STORE or ./ibrkit-store)");
  app.add_option("--seed", common.seed, "seed for clustering restarts and network training")->capture_default_str();

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "generate an admittance dataset from the analytical models");
  g->add_option("--catalog", gen.catalog, "IBR catalog JSON");
  g->add_option("--role", gen.role, "train, test or measure")->capture_default_str();
  g->add_option("--ibr", gen.ibrs, "IBR names (default: the six canonical IBRs)");
  g->add_option("--out", gen.out, "output CSV (default: train.csv/test.csv in the store)");
  g->add_option("--V", gen.V, "measurement voltage (pu)")->capture_default_str();
  g->add_option("--P", gen.P, "measurement active power (pu)")->capture_default_str();
  g->add_option("--Q", gen.Q, "measurement reactive power (pu)")->capture_default_str();
  g->add_option("--n-freq", gen.n_freq, "override the number of frequencies");

  ClusterArgs cl;
  auto* cs = app.add_subcommand("cluster", "cluster the training set and select k");
  cs->add_option("--train", cl.train, "training CSV (default: store train.csv)");
  cs->add_option("--k-min", cl.k_min)->capture_default_str();
  cs->add_option("--k-max", cl.k_max)->capture_default_str();
  cs->add_option("--k", cl.k, "force the final number of clusters");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train the per-cluster networks");
  t->add_option("cluster", tr.which, cluster_arg_help())->capture_default_str();
  t->add_option("--train", tr.train, "training CSV (default: store train.csv)");
  t->add_option("--epochs", tr.epochs)->capture_default_str();
  t->add_option("--batch", tr.batch)->capture_default_str();
  t->add_option("--lr", tr.lr)->capture_default_str();

  AssignArgs as;
  auto* a = app.add_subcommand("assign", "assign an unseen IBR from measured Y_dd points");
  a->add_option("measurement", as.measurement, "CSV with header f_hz,g_dd,b_dd")->required();
  a->add_option("--ibr", as.ibr, "record the assignment under this IBR name");

  PredictArgs pr;
  auto* p = app.add_subcommand("predict", "predict admittance over an operating-point grid");
  p->add_option("--cluster", pr.cluster, "cluster whose network to use");
  p->add_option("--ibr", pr.ibr, "route through this IBR's cluster (training majority or assignment)");
  p->add_option("--V", pr.V, "voltage values (pu)")->capture_default_str();
  p->add_option("--P-min", pr.p_min)->capture_default_str();
  p->add_option("--P-max", pr.p_max)->capture_default_str();
  p->add_option("--P-step", pr.p_step)->capture_default_str();
  p->add_option("--Q-min", pr.q_min)->capture_default_str();
  p->add_option("--Q-max", pr.q_max)->capture_default_str();
  p->add_option("--Q-step", pr.q_step)->capture_default_str();
  p->add_option("--n-freq", pr.n_freq)->capture_default_str();
  p->add_option("--out", pr.out, "prediction CSV (default: store report_predict_<label>.csv)");
  p->add_option("--reference", pr.reference, "also write predicted minus analytical for this catalog IBR");
  p->add_option("--error-out", pr.error_out, "error CSV path");
  p->add_option("--catalog", pr.catalog, "IBR catalog JSON for --reference");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate the networks on a test set, per IBR and band");
  e->add_option("--test", ev.test, "test CSV (default: store test.csv)");
  e->add_option("--out", ev.out, "report CSV (default: store report_eval.csv)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*g) return run_generate(common, gen);
    if (*cs) return run_cluster(common, cl);
    if (*t) return run_train(common, tr);
    if (*a) return run_assign(common, as);
    if (*p) return run_predict(common, pr);
    if (*e) return run_eval(common, ev);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
  return 1;
}
