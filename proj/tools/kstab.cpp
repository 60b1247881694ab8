#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <random>
#include <string>

#include <CLI11.hpp>

#include <kstab/flows.hpp>
#include <kstab/geodesic.hpp>
#include <kstab/io.hpp>
#include <kstab/metric.hpp>
#include <kstab/na.hpp>
#include <kstab/optimize.hpp>

namespace fs = std::filesystem;
using namespace kstab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitViolation = 2;
constexpr int kExitSolver = 3;
constexpr int kExitConfig = 64;

struct Overrides {
  std::string config, polytope, kind, out;
  int resolution = -1;
  double t_max = -1;
};

void add_common(CLI::App* app, Overrides& o, bool with_kind) {
  app->add_option("--config", o.config, "JSON experiment config");
  app->add_option("--polytope", o.polytope, "registry name (P1, P2, P1xP1, Bl1P2, Bl2P2)");
  app->add_option("--resolution", o.resolution, "lattice resolution m (nodes at spacing 1/m)");
  app->add_option("--out", o.out, "output directory");
  if (with_kind) {
    app->add_option("--kind", o.kind, "ima or krf");
    app->add_option("--t-max", o.t_max, "final flow time");
  }
}

// Effective config: file (or defaults) with command-line overrides applied.
Json effective_config(const Overrides& o) {
  Json j = Json::object();
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw ConfigInvalid("config", "cannot open '" + o.config + "'");
    try {
      in >> j;
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigInvalid("config", std::string("parse error: ") + e.what());
    }
    if (!j.is_object()) throw ConfigInvalid("config", "top level must be an object");
  }
  if (!o.polytope.empty()) j["polytope"] = o.polytope;
  if (o.resolution >= 0) j["resolution"] = o.resolution;
  if (!o.out.empty()) j["output"] = o.out;
  if (!o.kind.empty()) {
    if (!j.contains("flow")) j["flow"] = Json::object();
    if (!j["flow"].is_object()) throw ConfigInvalid("flow", "expected an object");
    j["flow"]["kind"] = o.kind;
  }
  if (o.t_max > 0) {
    if (!j.contains("flow")) j["flow"] = Json::object();
    j["flow"]["t_max"] = o.t_max;
  }
  return experiment_from_json(j).to_json();
}

fs::path prepare_output(const ExperimentConfig& cfg) {
  fs::path dir(cfg.output);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ConfigInvalid("output", "cannot create '" + cfg.output + "'");
  return dir;
}

// The output directory does not change results, so it is left out of the hash.
Json hashed(Json cfg) {
  cfg.erase("output");
  return cfg;
}

Json meta(const Json& cfg) {
  return {{"meta", {{"version", kVersion}, {"config_hash", config_hash(hashed(cfg))}, {"config", hashed(cfg)}}}};
}

void csv_header(std::ostream& os, const Json& cfg) {
  os << "# kstab " << kVersion << " config " << config_hash(hashed(cfg)) << '\n';
}

int cmd_flow(const Overrides& o) {
  const Json cj = effective_config(o);
  const ExperimentConfig cfg = experiment_from_json(cj);
  const Polytope P = cfg.resolve_polytope();
  const fs::path dir = prepare_output(cfg);
  auto grid = std::make_shared<const PolytopeGrid>(P, cfg.grid_resolution(P));
  FlowTrace tr;
  try {
    tr = run(reference_metric(grid), cfg.flow);
  } catch (const StepFailed& e) {
    std::cerr << "solver failure at t = " << e.time << ": " << e.what() << '\n';
    return kExitSolver;
  } catch (const NonConvex& e) {
    std::cerr << "solver failure: " << e.what() << '\n';
    return kExitSolver;
  }
  {
    std::ofstream os(dir / "trace.csv");
    csv_header(os, cj);
    write_trace_csv(os, tr);
  }
  const auto mon = monotonicity_report(tr);
  Json jm = meta(cj);
  bool violated = false;
  for (const auto& m : mon) {
    jm["monitors"][m.monitor] = m.max_violation;
    violated = violated || m.max_violation > 1e-6;
  }
  const auto& last = tr.reports.back();
  jm["stop_reason"] = tr.stop_reason;
  jm["final_time"] = tr.times.back();
  jm["steps"] = tr.times.size() - 1;
  jm["rejected_steps"] = tr.rejected_steps;
  jm["final"] = {{"E", last.E}, {"L", last.L}, {"D", last.D}, {"R", last.ricci_calabi}, {"M", last.mabuchi}, {"H", last.h_functional}};
  jm["linear_bound_A"] = linear_bound_constant(tr);
  jm["resolution"] = grid->resolution();
  std::ofstream(dir / "monotonicity.json") << jm.dump(2) << '\n';
  std::cout << std::setprecision(10) << P.name << ' ' << to_string(tr.kind) << ": t = " << tr.times.back()
            << "  R = " << last.ricci_calabi << "  H = " << last.h_functional << "  D = " << last.D << "  (" << tr.stop_reason
            << ")\n";
  for (const auto& m : mon) std::cout << "  " << m.monitor << " max violation " << m.max_violation << '\n';
  return violated ? kExitViolation : kExitOk;
}

int cmd_na(const Overrides& o, const std::string& f_file) {
  const Json cj = effective_config(o);
  const ExperimentConfig cfg = experiment_from_json(cj);
  const Polytope P = cfg.resolve_polytope();
  std::ifstream in(f_file);
  if (!in) throw ConfigInvalid("f", "cannot open '" + f_file + "'");
  Json fj;
  try {
    in >> fj;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigInvalid("f", std::string("parse error: ") + e.what());
  }
  const PLConvex f = pruned(plconvex_from_json(fj, P.dim), P);
  const NAReport r = na_report(f, P);
  Json out = meta(cj);
  out["f"] = to_json(f);
  out["report"] = to_json(r);
  std::cout << std::setprecision(6) << std::fixed;
  std::cout << P.name << "  ena " << r.ena << "  lna " << r.lna << "  dna " << r.dna << "  h " << r.h_invariant << '\n';
  for (const auto& [p, v] : r.norm_p) std::cout << "  norm_" << std::defaultfloat << p << ' ' << std::fixed << v << '\n';
  bool integral = f.exact();
  for (std::size_t j = 0; integral && j < f.pieces(); ++j)
    for (int d = 0; d < P.dim; ++d) integral = integral && f.aq[j][d].denominator() == 1;
  if (integral) {
    long long den = 1;
    for (const auto& b : f.bq) den = std::lcm(den, b.denominator());
    std::cout << "  k      ena_k - ena     F_k - F      norm2_k - norm2\n";
    Json table = Json::array();
    for (long long k : {25LL, 50LL, 100LL, 200LL}) {
      const long long kk = ((k + den - 1) / den) * den;
      const LatticeOracle lo = lattice_oracle(f, P, kk);
      const double e1 = lo.ena_k - r.ena, e2 = lo.F_k - r.F, e3 = lo.norm2_k - r.norm_p.at(2.0);
      std::cout << "  " << std::setw(4) << kk << "  " << std::setw(12) << std::scientific << e1 << "  " << std::setw(12) << e2
                << "  " << std::setw(12) << e3 << std::fixed << '\n';
      table.push_back({{"k", kk}, {"ena_err", e1}, {"F_err", e2}, {"norm2_err", e3}, {"N_k", lo.N_k}});
    }
    out["oracle"] = table;
  } else {
    std::cout << "  lattice oracle skipped: slopes are not integral\n";
  }
  if (!o.out.empty()) {
    const fs::path dir = prepare_output(cfg);
    std::ofstream(dir / "na.json") << out.dump(2) << '\n';
  }
  return kExitOk;
}

int cmd_theorem(const Overrides& o, const std::string& which) {
  if (which != "a" && which != "b") throw ConfigInvalid("theorem", "expected 'a' or 'b'");
  const Json cj = effective_config(o);
  const ExperimentConfig cfg = experiment_from_json(cj);
  const Polytope P = cfg.resolve_polytope();
  const fs::path dir = prepare_output(cfg);
  TheoremOptions opt;
  opt.resolution = cfg.grid_resolution(P);
  opt.perturb_seed = cfg.rng_seed;
  GapReport g;
  try {
    g = which == "a" ? theorem_a_gap(P, cfg.flow, cfg.search, opt) : theorem_b_gap(P, cfg.flow, cfg.search, opt);
  } catch (const StepFailed& e) {
    std::cerr << "solver failure at t = " << e.time << ": " << e.what() << '\n';
    return kExitSolver;
  }
  Json out = meta(cj);
  out["gap"] = to_json(g);
  out["resolution"] = opt.resolution;
  std::ofstream(dir / "gap.json") << out.dump(2) << '\n';
  {
    std::ofstream os(dir / "curve.csv");
    csv_header(os, cj);
    os << "t,flow,best_value\n" << std::setprecision(17);
    for (std::size_t i = 0; i < g.times.size(); ++i) os << g.times[i] << ',' << g.flow_curve[i] << ',' << g.best_value << '\n';
  }
  const bool nontrivial = g.flow_limit >= 1e-2;
  bool ok = g.inequality_violations == 0 && g.chain_holds && g.initial_metrics_agree && g.relative_gap <= 0.1;
  if (which == "b" && nontrivial) ok = ok && g.max_identity_error <= 0.01;
  std::cout << std::setprecision(10) << "theorem " << which << " on " << P.name << ": flow " << g.flow_limit << "  best "
            << g.best_value << "  ray " << g.ray_value << "  relative gap " << g.relative_gap << (ok ? "  ok" : "  CONTRACT FAILED")
            << '\n';
  return ok ? kExitOk : kExitViolation;
}

int cmd_sweep(const Overrides& o, int pairs) {
  const Json cj = effective_config(o);
  const ExperimentConfig cfg = experiment_from_json(cj);
  const Polytope P = cfg.resolve_polytope();
  const fs::path dir = prepare_output(cfg);
  auto grid = std::make_shared<const PolytopeGrid>(P, cfg.grid_resolution(P));
  const ToricMetric ref = reference_metric(grid);
  std::mt19937_64 rng(cfg.rng_seed);
  std::ofstream os(dir / "moment_weight.csv");
  csv_header(os, cj);
  os << "pair,R_sqrt,ratio,margin\n" << std::setprecision(17);
  int violations = 0;
  double worst = std::numeric_limits<double>::infinity();
  for (int i = 0; i < pairs; ++i) {
    const ToricMetric M = perturbed_metric(ref, rng, 0.5);
    PLConvex f = random_plconvex(P.dim, rng);
    double margin;
    try {
      margin = verify_moment_weight(M, f);
    } catch (const TrivialConfiguration&) {
      continue;
    }
    const double rs = std::sqrt(energies(M, Baseline(M)).ricci_calabi);
    os << i << ',' << rs << ',' << rs - margin << ',' << margin << '\n';
    worst = std::min(worst, margin);
    if (margin < -1e-8) ++violations;
  }
  std::ofstream bs(dir / "best_by_pieces.csv");
  csv_header(bs, cj);
  bs << "max_pieces,best_ratio\n" << std::setprecision(17);
  const SearchResult s = maximize_ratio(P, cfg.search);
  for (std::size_t k = 0; k < s.by_pieces.size(); ++k) bs << k + 1 << ',' << s.by_pieces[k] << '\n';
  std::cout << std::setprecision(10) << P.name << ": " << pairs << " pairs, min margin " << worst << ", violations " << violations
            << ", best ratio " << s.value << '\n';
  return violations == 0 ? kExitOk : kExitViolation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"toric stability experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("kstab ") + kVersion);

  Overrides fo, no, to, so;
  auto* flow = app.add_subcommand("flow", "run a flow and write its trace");
  add_common(flow, fo, true);

  std::string f_file;
  auto* na = app.add_subcommand("na", "non-Archimedean invariants of a PL convex function");
  add_common(na, no, false);
  na->add_option("--f", f_file, "PL convex function JSON")->required();

  std::string which;
  auto* th = app.add_subcommand("theorem", "both sides of the equality theorems");
  th->add_option("which", which, "a or b")->required();
  add_common(th, to, false);

  int pairs = 100;
  auto* sw = app.add_subcommand("sweep", "moment-weight sweep and family-size trend");
  add_common(sw, so, false);
  sw->add_option("--pairs", pairs, "number of random (metric, f) pairs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (flow->parsed()) return cmd_flow(fo);
    if (na->parsed()) return cmd_na(no, f_file);
    if (th->parsed()) return cmd_theorem(to, which);
    if (sw->parsed()) return cmd_sweep(so, pairs);
  } catch (const ConfigInvalid& e) {
    std::cerr << e.what() << '\n';
    return kExitConfig;
  }
  return kExitConfig;
}
