#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "flows.hpp"
#include "na.hpp"
#include "optimize.hpp"
#include "polytope.hpp"

namespace kstab {

inline constexpr const char* kVersion = "0.3.0";

class ConfigInvalid : public std::runtime_error {
 public:
  ConfigInvalid(const std::string& key, const std::string& why)
      : std::runtime_error("invalid config key '" + key + "': " + why), key(key) {}
  std::string key;
};

using Json = nlohmann::json;

// FNV-1a over the canonical dump.
inline std::string config_hash(const Json& cfg) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : cfg.dump()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

namespace detail {

inline void check_keys(const Json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigInvalid(where, "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigInvalid(where.empty() ? it.key() : where + "." + it.key(), "unknown key");
}

template <class T>
T get(const Json& j, const std::string& key, const std::string& where, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigInvalid(where.empty() ? key : where + "." + key, "wrong type");
  }
}

inline Rational parse_rational(const Json& v, const std::string& key) {
  if (v.is_number_integer()) return Rational(v.get<long long>());
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    const auto slash = s.find('/');
    try {
      if (slash == std::string::npos) return Rational(std::stoll(s));
      return Rational(std::stoll(s.substr(0, slash)), std::stoll(s.substr(slash + 1)));
    } catch (const std::exception&) {
      throw ConfigInvalid(key, "not a rational '" + s + "'");
    }
  }
  throw ConfigInvalid(key, "expected an integer or a \"p/q\" string");
}

}  // namespace detail

// {"pieces": [[a..., b], ...]}; entries are numbers, or "p/q" strings for exact input.
inline PLConvex plconvex_from_json(const Json& j, int dim) {
  detail::check_keys(j, "", {"pieces"});
  if (!j.contains("pieces") || !j["pieces"].is_array() || j["pieces"].empty())
    throw ConfigInvalid("pieces", "expected a non-empty array");
  bool exact = true;
  for (const auto& row : j["pieces"]) {
    if (!row.is_array() || static_cast<int>(row.size()) != dim + 1)
      throw ConfigInvalid("pieces", "each piece needs " + std::to_string(dim + 1) + " entries");
    for (const auto& v : row) {
      if (!(v.is_number() || v.is_string())) throw ConfigInvalid("pieces", "entries must be numbers or strings");
      if (v.is_number_float()) exact = false;
    }
  }
  if (exact) {
    std::vector<std::vector<Rational>> rows;
    for (const auto& row : j["pieces"]) {
      std::vector<Rational> r;
      for (const auto& v : row) r.push_back(detail::parse_rational(v, "pieces"));
      rows.push_back(r);
    }
    return PLConvex::from_rationals(dim, rows);
  }
  std::vector<std::vector<double>> rows;
  for (const auto& row : j["pieces"]) {
    std::vector<double> r;
    for (const auto& v : row) {
      if (v.is_string()) r.push_back(to_double(detail::parse_rational(v, "pieces")));
      else r.push_back(v.get<double>());
    }
    rows.push_back(r);
  }
  return PLConvex::from_doubles(dim, rows);
}

inline Json to_json(const PLConvex& f) {
  Json pieces = Json::array();
  for (std::size_t j = 0; j < f.pieces(); ++j) {
    Json row = Json::array();
    if (f.exact()) {
      auto q = [](const Rational& r) {
        return r.denominator() == 1 ? Json(r.numerator())
                                    : Json(std::to_string(r.numerator()) + "/" + std::to_string(r.denominator()));
      };
      for (int d = 0; d < f.dim; ++d) row.push_back(q(f.aq[j][d]));
      row.push_back(q(f.bq[j]));
    } else {
      for (int d = 0; d < f.dim; ++d) row.push_back(f.a[j][d]);
      row.push_back(f.b[j]);
    }
    pieces.push_back(row);
  }
  return {{"pieces", pieces}};
}

inline Json to_json(const NAReport& r) {
  Json j = {{"ena", r.ena}, {"lna", r.lna}, {"dna", r.dna}, {"h_invariant", r.h_invariant}, {"F", r.F}, {"mean", r.mean}};
  for (const auto& [p, v] : r.norm_p) {
    std::ostringstream key;
    key << "norm_" << p;
    j[key.str()] = v;
  }
  return j;
}

inline Json to_json(const GapReport& g) {
  Json j = {{"theorem", g.theorem},
            {"flow_limit", g.flow_limit},
            {"flow_limit_alt", g.flow_limit_alt},
            {"best_value", g.best_value},
            {"best_f", to_json(g.best_f)},
            {"best_by_pieces", g.best_by_pieces},
            {"affine_value", g.affine_value},
            {"relative_gap", g.relative_gap},
            {"ray_cauchy", g.ray_cauchy},
            {"inequality_violations", g.inequality_violations},
            {"initial_metrics_agree", g.initial_metrics_agree},
            {"chain_holds", g.chain_holds},
            {"max_identity_error", g.max_identity_error}};
  j["ray_value"] = std::isfinite(g.ray_value) ? Json(g.ray_value) : Json(nullptr);
  return j;
}

inline Polytope polytope_from_json(const Json& j) {
  if (j.is_string()) {
    try {
      return registry(j.get<std::string>());
    } catch (const PolytopeError& e) {
      throw ConfigInvalid("polytope", e.what());
    }
  }
  if (j.is_object()) {
    detail::check_keys(j, "polytope", {"normals", "name"});
    try {
      auto normals = j.at("normals").get<std::vector<IVec>>();
      return from_facets(normals, j.value("name", std::string("custom")));
    } catch (const nlohmann::json::exception&) {
      throw ConfigInvalid("polytope.normals", "expected an array of integer vectors");
    } catch (const PolytopeError& e) {
      throw ConfigInvalid("polytope.normals", e.what());
    }
  }
  throw ConfigInvalid("polytope", "expected a registry name or {\"normals\": ...}");
}

inline FlowConfig flow_config_from_json(const Json& j) {
  const std::string w = "flow";
  detail::check_keys(j, w,
                     {"kind", "dt_init", "dt_control", "dt_max", "t_max", "stop_tol", "max_update", "plateau_stop",
                      "plateau_tol", "plateau_min_time", "snapshot_times", "max_halvings"});
  FlowConfig c;
  const std::string kind = detail::get<std::string>(j, "kind", w, "ima");
  if (kind == "ima") c.kind = FlowKind::InverseMA;
  else if (kind == "krf") c.kind = FlowKind::KahlerRicci;
  else throw ConfigInvalid("flow.kind", "expected 'ima' or 'krf'");
  c.dt_init = detail::get(j, "dt_init", w, c.dt_init);
  c.dt_control = detail::get(j, "dt_control", w, c.dt_control);
  c.dt_max = detail::get(j, "dt_max", w, c.dt_max);
  c.t_max = detail::get(j, "t_max", w, c.t_max);
  c.stop_tol = detail::get(j, "stop_tol", w, c.stop_tol);
  c.max_update = detail::get(j, "max_update", w, c.max_update);
  c.plateau_stop = detail::get(j, "plateau_stop", w, c.plateau_stop);
  c.plateau_tol = detail::get(j, "plateau_tol", w, c.plateau_tol);
  c.plateau_min_time = detail::get(j, "plateau_min_time", w, c.plateau_min_time);
  c.snapshot_times = detail::get(j, "snapshot_times", w, c.snapshot_times);
  c.max_halvings = detail::get(j, "max_halvings", w, c.max_halvings);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigInvalid("flow", e.what());
  }
  return c;
}

inline Json to_json(const FlowConfig& c) {
  return {{"kind", to_string(c.kind)},       {"dt_init", c.dt_init},         {"dt_control", c.dt_control},
          {"dt_max", c.dt_max},              {"t_max", c.t_max},             {"stop_tol", c.stop_tol},
          {"max_update", c.max_update},      {"plateau_stop", c.plateau_stop}, {"plateau_tol", c.plateau_tol},
          {"plateau_min_time", c.plateau_min_time}, {"snapshot_times", c.snapshot_times}, {"max_halvings", c.max_halvings}};
}

inline SearchConfig search_config_from_json(const Json& j) {
  const std::string w = "search";
  detail::check_keys(j, w, {"max_pieces", "seeds", "rng_seed", "max_iters", "tol_step", "box"});
  SearchConfig c;
  c.max_pieces = detail::get(j, "max_pieces", w, c.max_pieces);
  c.seeds = detail::get(j, "seeds", w, c.seeds);
  c.rng_seed = detail::get(j, "rng_seed", w, c.rng_seed);
  c.max_iters = detail::get(j, "max_iters", w, c.max_iters);
  c.tol_step = detail::get(j, "tol_step", w, c.tol_step);
  c.box = detail::get(j, "box", w, c.box);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigInvalid("search", e.what());
  }
  return c;
}

inline Json to_json(const SearchConfig& c) {
  return {{"max_pieces", c.max_pieces}, {"seeds", c.seeds},       {"rng_seed", c.rng_seed},
          {"max_iters", c.max_iters},   {"tol_step", c.tol_step}, {"box", c.box}};
}

struct ExperimentConfig {
  Json polytope = "P1";
  int resolution = 0;  // 0: derived from the polytope width
  FlowConfig flow;
  SearchConfig search;
  std::string output = "out";
  unsigned long long rng_seed = 1;

  Polytope resolve_polytope() const { return polytope_from_json(polytope); }

  int grid_resolution(const Polytope& P) const {
    if (resolution > 0) return resolution;
    // 129 nodes across the widest extent of P
    double lo = 1e300, hi = -1e300;
    for (const auto& v : P.vertices)
      for (const auto& c : v) {
        lo = std::min(lo, to_double(c));
        hi = std::max(hi, to_double(c));
      }
    int m = static_cast<int>(std::ceil(128.0 / (hi - lo)));
    return m + (m % 2);
  }

  Json to_json() const {
    return {{"polytope", polytope}, {"resolution", resolution},      {"flow", kstab::to_json(flow)},
            {"search", kstab::to_json(search)}, {"output", output}, {"rng_seed", rng_seed}};
  }
};

inline ExperimentConfig experiment_from_json(const Json& j) {
  detail::check_keys(j, "", {"polytope", "resolution", "flow", "search", "output", "rng_seed"});
  ExperimentConfig c;
  if (j.contains("polytope")) c.polytope = j["polytope"];
  c.resolve_polytope();
  c.resolution = detail::get(j, "resolution", "", c.resolution);
  if (c.resolution < 0 || (c.resolution > 0 && c.resolution < 4)) throw ConfigInvalid("resolution", "must be 0 or >= 4");
  if (j.contains("flow")) c.flow = flow_config_from_json(j["flow"]);
  if (j.contains("search")) c.search = search_config_from_json(j["search"]);
  c.output = detail::get(j, "output", "", c.output);
  c.rng_seed = detail::get(j, "rng_seed", "", c.rng_seed);
  return c;
}

inline ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigInvalid("config", "cannot open '" + path + "'");
  Json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigInvalid("config", std::string("parse error: ") + e.what());
  }
  return experiment_from_json(j);
}

}  // namespace kstab
