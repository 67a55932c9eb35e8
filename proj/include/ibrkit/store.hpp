#pragma once

// Model store: one directory holding every artifact of a run.
//
//   catalog.json           IBR parameters used to generate the datasets
//   train.csv, test.csv    datasets
//   cluster_model.json     ClusterModel
//   fnn_<k>.json           one network per cluster
//   assignments.json       clusters chosen for unseen IBRs
//   report_*.csv           K selection, loss history, evaluation, predictions
//
// Every JSON file carries "format": "ibrkit-store-v1". Files written with a
// different tag are refused.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "ibrkit/clustering.hpp"
#include "ibrkit/error.hpp"
#include "ibrkit/fnn.hpp"

namespace ibrkit {

inline constexpr const char* kStoreFormat = "ibrkit-store-v1";
inline constexpr const char* kStoreEnv = "IBRKIT_STORE";

/// FNV-1a over the bytes, printed as 16 hex digits.
inline std::string fingerprint(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw StoreError("cannot open " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw StoreError("cannot write " + p.string());
  out << bytes;
  if (!out) throw StoreError("write failed for " + p.string());
}

struct StoredFnn {
  int cluster = 0;
  std::string cluster_fingerprint;
  std::uint64_t seed = 0;
  nn::FnnModel model;
};

struct StoredAssignment {
  int cluster = -1;
  std::vector<double> distances;
};

class ModelStore {
 public:
  explicit ModelStore(std::filesystem::path root) : root_(std::move(root)) {}

  /// `flag` if non-empty, else $IBRKIT_STORE, else ./ibrkit-store.
  static std::filesystem::path resolve(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv(kStoreEnv); env && *env) return env;
    return "ibrkit-store";
  }

  const std::filesystem::path& root() const { return root_; }
  void ensure() const { std::filesystem::create_directories(root_); }

  std::filesystem::path catalog() const { return root_ / "catalog.json"; }
  std::filesystem::path train_csv() const { return root_ / "train.csv"; }
  std::filesystem::path test_csv() const { return root_ / "test.csv"; }
  std::filesystem::path cluster_model() const { return root_ / "cluster_model.json"; }
  std::filesystem::path fnn(int k) const { return root_ / ("fnn_" + std::to_string(k) + ".json"); }
  std::filesystem::path assignments() const { return root_ / "assignments.json"; }
  std::filesystem::path report(const std::string& name) const {
    return root_ / ("report_" + name);
  }

  // -- cluster model --------------------------------------------------------

  std::string save_cluster_model(const ClusterModel& m) const {
    ensure();
    nlohmann::json j{{"format", kStoreFormat}, {"model", to_json(m)}};
    const auto bytes = j.dump(1) + "\n";
    write_file(cluster_model(), bytes);
    return fingerprint(bytes);
  }

  bool has_cluster_model() const { return std::filesystem::exists(cluster_model()); }

  ClusterModel load_cluster_model(std::string* fp = nullptr) const {
    if (!has_cluster_model())
      throw StoreError("no cluster model in " + root_.string() + "; run `ibrkit cluster` first");
    const auto bytes = read_file(cluster_model());
    const auto j = parse(bytes, cluster_model());
    if (fp) *fp = fingerprint(bytes);
    return cluster_model_from_json(j.at("model"));
  }

  std::string cluster_fingerprint() const { return fingerprint(read_file(cluster_model())); }

  // -- networks -------------------------------------------------------------

  void save_fnn(const StoredFnn& s) const {
    ensure();
    nlohmann::json j{{"format", kStoreFormat},
                     {"cluster", s.cluster},
                     {"cluster_fingerprint", s.cluster_fingerprint},
                     {"seed", s.seed},
                     {"model", nn::to_json(s.model)}};
    write_file(fnn(s.cluster), j.dump(1) + "\n");
  }

  /// Loads fnn_<k> and checks it was trained against the current cluster model.
  StoredFnn load_fnn(int k) const {
    std::string fp;
    const auto cm = load_cluster_model(&fp);
    if (k < 0 || k >= cm.k)
      throw StoreError("cluster " + std::to_string(k) + " does not exist (cluster model has k=" +
                       std::to_string(cm.k) + ")");
    if (!std::filesystem::exists(fnn(k)))
      throw StoreError("no network for cluster " + std::to_string(k) + "; run `ibrkit train " +
                       std::to_string(k) + "` first");
    const auto j = parse(read_file(fnn(k)), fnn(k));
    StoredFnn s;
    s.cluster = j.at("cluster").get<int>();
    s.cluster_fingerprint = j.at("cluster_fingerprint").get<std::string>();
    s.seed = j.at("seed").get<std::uint64_t>();
    if (s.cluster != k) throw StoreError(fnn(k).string() + " records cluster " + std::to_string(s.cluster));
    if (s.cluster_fingerprint != fp)
      throw StoreError(fnn(k).string() +
                       " was trained against a different cluster model; rerun `ibrkit train`");
    s.model = nn::fnn_model_from_json(j.at("model"));
    return s;
  }

  // -- assignments ----------------------------------------------------------

  std::map<std::string, StoredAssignment> load_assignments() const {
    std::map<std::string, StoredAssignment> out;
    if (!std::filesystem::exists(assignments())) return out;
    const auto j = parse(read_file(assignments()), assignments());
    for (const auto& [name, a] : j.at("assignments").items())
      out[name] = {a.at("cluster").get<int>(), a.at("distances").get<std::vector<double>>()};
    return out;
  }

  void save_assignment(const std::string& ibr, const StoredAssignment& a) const {
    auto all = load_assignments();
    all[ibr] = a;
    nlohmann::json list = nlohmann::json::object();
    for (const auto& [name, v] : all) list[name] = {{"cluster", v.cluster}, {"distances", v.distances}};
    ensure();
    write_file(assignments(), nlohmann::json{{"format", kStoreFormat}, {"assignments", list}}.dump(1) + "\n");
  }

 private:
  static nlohmann::json parse(const std::string& bytes, const std::filesystem::path& p) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(bytes);
    } catch (const nlohmann::json::exception& e) {
      throw StoreError(p.string() + ": " + e.what());
    }
    const auto tag = j.value("format", std::string{});
    if (tag != kStoreFormat)
      throw StoreError(p.string() + ": store format '" + tag + "' is not " + kStoreFormat);
    return j;
  }

  std::filesystem::path root_;
};

/// Advisory lock: a `.lock` file created exclusively, removed on destruction.
class StoreLock {
 public:
  explicit StoreLock(const ModelStore& store) : path_(store.root() / ".lock") {
    store.ensure();
    std::FILE* f = std::fopen(path_.string().c_str(), "wx");
    if (!f)
      throw StoreError("store " + store.root().string() +
                       " is locked by another command (delete .lock if it is stale)");
    std::fclose(f);
  }
  StoreLock(const StoreLock&) = delete;
  StoreLock& operator=(const StoreLock&) = delete;
  ~StoreLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }

 private:
  std::filesystem::path path_;
};

}  // namespace ibrkit
