#pragma once

// Inverter parameter catalog stored as JSON:
//
//   {
//     "format": "ibrkit-catalog-v1",
//     "ibrs": [ { "name": "GFLI1", "kind": "GFLI", "omega_b": 376.99, "Lf": 0.1, ... }, ... ],
//     "training_set": ["GFLI1", ...]
//   }
//
// Every parameter key of InverterParams may appear; missing keys take the
// struct defaults. "kind" is "GFLI" or "GFMI". "training_set" names the
// devices used when no explicit list is given (default: all of them).

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ibrkit/error.hpp"
#include "ibrkit/ibr_models.hpp"

namespace ibrkit {

inline constexpr const char* kCatalogFormat = "ibrkit-catalog-v1";

inline void to_json(nlohmann::json& j, const InverterParams& p) {
  j = nlohmann::json{{"name", p.name},     {"kind", to_string(p.kind)},
                     {"omega_b", p.omega_b}, {"Lf", p.Lf},
                     {"Rf", p.Rf},         {"kp_i", p.kp_i},
                     {"ki_i", p.ki_i},     {"decoupling", p.decoupling}};
  if (p.kind == InverterKind::GFLI) {
    j["kp_pll"] = p.kp_pll;
    j["ki_pll"] = p.ki_pll;
    j["kf"] = p.kf;
  } else {
    j["Cf"] = p.Cf;
    j["Lg"] = p.Lg;
    j["Rg"] = p.Rg;
    j["kp_v"] = p.kp_v;
    j["ki_v"] = p.ki_v;
    j["mp"] = p.mp;
    j["nq"] = p.nq;
    j["omega_c"] = p.omega_c;
  }
}

inline void from_json(const nlohmann::json& j, InverterParams& p) {
  p = InverterParams{};
  p.name = j.at("name").get<std::string>();
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "GFLI")
    p.kind = InverterKind::GFLI;
  else if (kind == "GFMI")
    p.kind = InverterKind::GFMI;
  else
    throw Error("inverter '" + p.name + "': unknown kind '" + kind + "'");
  const auto opt = [&](const char* key, double& field) {
    if (j.contains(key)) field = j.at(key).get<double>();
  };
  opt("omega_b", p.omega_b);
  opt("Lf", p.Lf);
  opt("Rf", p.Rf);
  opt("Cf", p.Cf);
  opt("Lg", p.Lg);
  opt("Rg", p.Rg);
  opt("kp_i", p.kp_i);
  opt("ki_i", p.ki_i);
  opt("kp_v", p.kp_v);
  opt("ki_v", p.ki_v);
  opt("kp_pll", p.kp_pll);
  opt("ki_pll", p.ki_pll);
  opt("mp", p.mp);
  opt("nq", p.nq);
  opt("omega_c", p.omega_c);
  opt("kf", p.kf);
  opt("decoupling", p.decoupling);
}

class Catalog {
 public:
  Catalog() = default;
  explicit Catalog(std::vector<InverterParams> ibrs, std::string source = {},
                   std::vector<std::string> training_set = {})
      : ibrs_(std::move(ibrs)), source_(std::move(source)), training_set_(std::move(training_set)) {
    for (const auto& p : ibrs_) p.validate();
    for (const auto& n : training_set_) get(n);
  }

  static Catalog load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open catalog file " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw Error("catalog " + path.string() + ": " + e.what());
    }
    if (j.value("format", std::string{}) != kCatalogFormat)
      throw Error("catalog " + path.string() + ": expected format tag " + kCatalogFormat);
    try {
      return Catalog(j.at("ibrs").get<std::vector<InverterParams>>(), path.string(),
                     j.value("training_set", std::vector<std::string>{}));
    } catch (const nlohmann::json::exception& e) {
      throw Error("catalog " + path.string() + ": " + e.what());
    }
  }

  void save(const std::filesystem::path& path) const {
    nlohmann::json j{{"format", kCatalogFormat}, {"ibrs", ibrs_}};
    if (!training_set_.empty()) j["training_set"] = training_set_;
    std::ofstream out(path);
    if (!out) throw Error("cannot write catalog file " + path.string());
    out << j.dump(2) << '\n';
  }

  const std::vector<InverterParams>& ibrs() const { return ibrs_; }

  std::vector<InverterParams> training_set() const {
    return training_set_.empty() ? ibrs_ : select(training_set_);
  }

  const InverterParams& get(const std::string& name) const {
    for (const auto& p : ibrs_)
      if (p.name == name) return p;
    throw Error("unknown IBR '" + name + "' in catalog " +
                (source_.empty() ? std::string("<in-memory>") : source_));
  }

  std::vector<InverterParams> select(const std::vector<std::string>& names) const {
    std::vector<InverterParams> out;
    for (const auto& n : names) out.push_back(get(n));
    return out;
  }

 private:
  std::vector<InverterParams> ibrs_;
  std::string source_;
  std::vector<std::string> training_set_;
};

}  // namespace ibrkit
