#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "wke/collision.hpp"
#include "wke/counting.hpp"
#include "wke/experiment.hpp"
#include "wke/trees.hpp"

namespace wke::cli {

enum Exit : int { ok = 0, other = 1, invalid = 2, nonconverged = 3, over_budget = 4 };

struct Invocation {
  std::string subcommand;
  std::string check_name;
  std::string config_path;
  std::string out_dir = "wkelab_out";
  std::size_t workers = default_workers();
  std::optional<double> budget;
  std::optional<std::uint64_t> seed;
  bool strict = false;
  int verbosity = 0;
  std::string method = "fast";
  int S = 4;
};

// Everything a run reports back to dispatch besides its files.
struct Outcome {
  nlohmann::json config;
  nlohmann::json seeds = nlohmann::json::object();
  bool flagged = false;
  std::string flag_reason;
};

inline std::string utc_now() {
  auto now = std::chrono::system_clock::now();
  std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

inline nlohmann::json read_config(const std::string& path) {
  require(!path.empty(), "--config is required");
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot open config " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("malformed JSON in " + path + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& p, const nlohmann::json& j) {
  std::ofstream out(p);
  if (!out) throw ValidationError("cannot write " + p.string());
  out << j.dump(2) << "\n";
}

template <class F>
auto guard_json(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(what + ": " + e.what());
  }
}

// beta as a list, "rational", or "generic" with beta_seed.
inline std::vector<double> beta_from(const nlohmann::json& j, int d) {
  nlohmann::json s{{"d", d}, {"L", 1.0}, {"beta", j.at("beta")}, {"cutoff", 0.0}};
  if (j.contains("beta_seed")) s["beta_seed"] = j.at("beta_seed");
  return TorusSpec::from_json(s).beta();
}

inline IVec ivec_from(const nlohmann::json& j) {
  auto v = j.get<std::vector<int>>();
  require(v.size() <= static_cast<std::size_t>(kMaxDim), "mode has too many components");
  IVec K{};
  for (std::size_t i = 0; i < v.size(); ++i) K[i] = v[i];
  return K;
}

inline RVec rvec_from(const nlohmann::json& j) {
  auto v = j.get<std::vector<double>>();
  require(v.size() <= static_cast<std::size_t>(kMaxDim), "point has too many components");
  RVec k{};
  for (std::size_t i = 0; i < v.size(); ++i) k[i] = v[i];
  return k;
}

// ---------------------------------------------------------------------------
// Subcommands

inline Outcome run_simulate(const Invocation& inv, const std::filesystem::path& out) {
  Outcome o;
  auto cfg = ExperimentConfig::from_json(read_config(inv.config_path));
  if (inv.seed) cfg.seeds.root_seed = *inv.seed;
  if (inv.budget) cfg.budget = *inv.budget;
  cfg.output = out.string();
  cfg.validate();
  o.config = cfg.to_json();
  o.seeds = {{"root_seed", cfg.seeds.root_seed}};
  if (cfg.spec.beta_seed()) o.seeds["beta_seed"] = *cfg.spec.beta_seed();
  auto res = run_ensemble(cfg, inv.workers);
  std::optional<KineticReport> kin;
  if (res.target("kinetic") && cfg.lambda > 0)
    kin = kinetic_check(res, cfg.profile, cfg.lambda, cfg.spec, cfg.collision_m, inv.workers);
  write_ensemble_outputs(out.string(), cfg, res, kin);
  if (res.max_mass_drift > 1e-8) {
    o.flagged = true;
    o.flag_reason = "mass drift " + std::to_string(res.max_mass_drift) + " above 1e-8";
  }
  if (inv.verbosity > 0)
    std::cout << "ensemble of " << cfg.ensemble << " done in " << res.wall_seconds << " s, mass drift "
              << res.max_mass_drift << "\n";
  return o;
}

inline Outcome run_trees(const Invocation& inv, const std::filesystem::path& out) {
  Outcome o;
  auto j = read_config(inv.config_path);
  o.config = j;
  auto spec = TorusSpec::from_json(guard_json("trees config", [&] { return j.at("spec"); }));
  auto profile = j.contains("profile") ? Profile::from_json(j.at("profile")) : Profile::gaussian();
  double lambda = 0, t = 0, budget = kDefaultTreeBudget;
  IVec K{};
  std::vector<int> orders;
  std::string model;
  guard_json("trees config", [&] {
    lambda = j.at("lambda").get<double>();
    t = j.at("t").get<double>();
    K = ivec_from(j.value("k", nlohmann::json::array()));
    orders = j.value("orders", std::vector<int>{0, 2});
    model = j.value("phase_model", std::string("uniform"));
    budget = j.value("budget", kDefaultTreeBudget);
    return 0;
  });
  require(orders.size() == 2, "orders must be [lo, hi]");
  require(model == "uniform" || model == "gaussian", "phase_model must be uniform or gaussian");
  require(t >= 0 && std::isfinite(lambda), "t must be nonnegative and lambda finite");
  if (inv.budget) budget = *inv.budget;
  const long r = spec.rank(K);
  require(r >= 0, "mode k lies outside the cutoff");
  const auto k = static_cast<std::size_t>(r);
  const PhaseModel pm = model == "gaussian" ? PhaseModel::gaussian : PhaseModel::uniform;
  if (spec.beta_seed()) o.seeds["beta_seed"] = *spec.beta_seed();
  const auto phi = profile_values(spec, profile);
  auto rows = correlation_table(spec, orders[0], orders[1], t, k, phi, lambda, pm, budget);
  write_correlation_csv((out / "correlations.csv").string(), rows);
  cplx total{};
  for (auto& row : rows) total += row.value;
  nlohmann::json rep{{"k", j.value("k", nlohmann::json::array())}, {"t", t}, {"lambda", lambda},
                     {"phi_k", phi[k]}, {"rows", rows.size()}, {"sum", {total.real(), total.imag()}}};
  if (orders[0] <= 1 && orders[1] >= 2)
    rep["second_moment_order2"] = second_moment_expansion(spec, t, k, phi, lambda, 2, pm, budget);
  write_json(out / "trees.json", rep);
  return o;
}

inline Outcome run_collision(const Invocation& inv, const std::filesystem::path& out) {
  Outcome o;
  auto j = read_config(inv.config_path);
  o.config = j;
  Dispersion disp;
  Profile profile = Profile::gaussian();
  std::vector<RVec> points;
  DeltaScheme scheme;
  std::string method;
  double budget = kDefaultContinuumBudget;
  guard_json("collision config", [&] {
    disp.d = j.at("d").get<int>();
    disp.beta = beta_from(j, disp.d);
    if (j.contains("profile")) profile = Profile::from_json(j.at("profile"));
    for (auto& p : j.at("points")) points.push_back(rvec_from(p));
    if (j.contains("scheme")) scheme = DeltaScheme::from_json(j.at("scheme"));
    method = j.value("method", std::string("mollifier"));
    budget = j.value("budget", kDefaultContinuumBudget);
    return 0;
  });
  require(disp.d >= 2 && disp.d <= 3, "collision operator needs d = 2 or 3");
  require(method == "mollifier" || method == "coarea", "method must be mollifier or coarea");
  require(profile.kind != Profile::Kind::table, "collision operator needs a continuum profile");
  if (inv.budget) budget = *inv.budget;
  if (j.contains("beta_seed")) o.seeds["beta_seed"] = j.at("beta_seed");
  const Density rho = density_of(profile, disp.d);
  std::vector<CollisionRow> rows(points.size());
  std::vector<CollisionResult> full(points.size());
  parallel_for(points.size(), inv.workers, [&](std::size_t i) {
    if (method == "coarea") {
      rows[i] = {points[i], collision_coarea(disp, rho, points[i], scheme.m, budget), 0.0};
    } else {
      full[i] = collision_operator(disp, rho, points[i], scheme, budget);
      rows[i] = {points[i], full[i].value, full[i].residual};
    }
  });
  write_collision_csv((out / "collision.csv").string(), disp.d, rows);
  nlohmann::json rep{{"method", method}, {"scheme", scheme.to_json()}, {"points", nlohmann::json::array()}};
  for (std::size_t i = 0; i < points.size(); ++i) {
    nlohmann::json p{{"k", std::vector<double>(points[i].begin(), points[i].begin() + disp.d)},
                     {"value", rows[i].value}};
    if (method == "mollifier") {
      p["residual"] = full[i].residual;
      p["scale"] = full[i].scale;
      p["ladder"] = full[i].ladder;
      p["flagged"] = full[i].flagged;
      if (full[i].flagged) {
        o.flagged = true;
        o.flag_reason = "Richardson residual above tolerance at point " + std::to_string(i);
      }
    }
    rep["points"].push_back(p);
  }
  write_json(out / "collision.json", rep);
  return o;
}

inline Outcome run_count(const Invocation& inv, const std::filesystem::path& out) {
  Outcome o;
  auto q = CountQuery::from_json(read_config(inv.config_path));
  if (inv.budget) q.budget = *inv.budget;
  q.validate();
  o.config = q.to_json();
  if (q.spec.beta_seed()) o.seeds["beta_seed"] = *q.spec.beta_seed();
  require(inv.method == "brute" || inv.method == "fast" || inv.method == "both",
          "method must be brute, fast or both");
  std::vector<CountResult> res;
  if (inv.method != "fast") res.push_back(count_brute(q, inv.workers));
  if (inv.method != "brute") res.push_back(count_fast(q));
  nlohmann::json rep{{"results", nlohmann::json::array()}};
  for (auto& r : res) {
    rep["results"].push_back(r.to_json());
    if (!r.continuum_converged) {
      o.flagged = true;
      o.flag_reason = "continuum volume did not converge";
    }
  }
  if (res.size() == 2) {
    const bool equal = res[0].count == res[1].count;
    rep["equal"] = equal;
    std::cout << "brute " << res[0].count << " fast " << res[1].count << " " << (equal ? "EQUAL" : "DIFFERENT")
              << "\n";
    if (!equal) throw NumericalFailure("brute and fast counts differ");
  } else {
    std::cout << inv.method << " " << res[0].count << "\n";
  }
  write_json(out / "count.json", rep);
  return o;
}

inline Outcome run_report(const Invocation& inv, const std::filesystem::path& out) {
  Outcome o;
  auto j = read_config(inv.config_path);
  o.config = j;
  std::string kind;
  int d = 0;
  std::vector<double> beta;
  std::vector<int> ladder;
  guard_json("report config", [&] {
    kind = j.at("kind").get<std::string>();
    d = j.at("d").get<int>();
    beta = beta_from(j, d);
    ladder = j.at("ladder").get<std::vector<int>>();
    return 0;
  });
  if (j.contains("beta_seed")) o.seeds["beta_seed"] = j.at("beta_seed");
  require(!ladder.empty(), "ladder must not be empty");
  nlohmann::json verdict;
  bool pass = false;
  if (kind == "equidistribution") {
    WindowLaw law;
    std::vector<double> mus;
    guard_json("report config", [&] {
      auto w = j.at("window");
      law.coef = w.value("coef", 1.0);
      law.exponent = w.at("exponent").get<double>();
      law.center_frac = w.value("center_frac", 0.0);
      mus = j.value("mus", std::vector<double>{});
      return 0;
    });
    auto rep = equidistribution_report(d, beta, ladder, law, mus);
    write_ladder_csv((out / "ladder.csv").string(), rep.rows);
    verdict = rep.to_json();
    pass = rep.decreasing && rep.weighted_decreasing;
    for (auto& r : rep.rows)
      if (!r.converged) {
        o.flagged = true;
        o.flag_reason = "continuum volume did not converge at L = " + std::to_string(static_cast<int>(r.L));
      }
  } else {
    double a = 0, b = 0, slack = 0.25;
    bool refined = false;
    guard_json("report config", [&] {
      a = j.at("a").get<double>();
      b = j.value("b", a);
      slack = j.value("slack", 0.25);
      refined = j.value("refined", false);
      return 0;
    });
    AuditReport rep;
    if (kind == "bound") {
      rep = bound_audit(d, beta, ladder, a, b, refined, slack);
    } else if (kind == "tail_sum") {
      rep = tail_sum_audit(d, beta, ladder, a, slack);
    } else {
      require(kind == "linear_form", "report kind must be equidistribution, bound, tail_sum or linear_form");
      rep = linear_form_audit(beta, ladder, a, b, slack);
    }
    std::ofstream csv(out / "audit.csv");
    csv.precision(17);
    csv << "L,lhs,shape,c\n";
    for (auto& r : rep.rows) csv << r.L << "," << r.lhs << "," << r.shape << "," << r.c << "\n";
    verdict = rep.to_json();
    pass = rep.ok;
  }
  verdict["kind"] = kind;
  verdict["pass"] = pass;
  write_json(out / "verdict.json", verdict);
  std::cout << kind << " " << (pass ? "PASS" : "FAIL") << "\n";
  return o;
}

// sum_{j=0}^S (-1)^j / ((S-j)! j!) times S!, i.e. the alternating binomial sum.
inline long long alternating_binomial_sum(int S) {
  long long c = 1, s = 0;
  for (int j = 0; j <= S; ++j) {
    s += (j % 2 ? -c : c);
    c = c * (S - j) / (j + 1);
  }
  return s;
}

inline Outcome run_check(const Invocation& inv, const std::filesystem::path& out) {
  Outcome o;
  if (inv.check_name == "regime") {
    auto j = read_config(inv.config_path);
    o.config = j;
    RegimeParams p = guard_json("regime config", [&] {
      return regime_params(j.at("lambda").get<double>(), j.at("L").get<double>(), j.at("d").get<int>(),
                           j.at("eps0").get<double>(), j.value("C", 1.0), j.value("T", 0.0));
    });
    write_json(out / "regime.json", p.to_json());
    std::cout << p.to_json().dump(2) << "\n";
    return o;
  }
  // cancellation
  require(inv.S >= 1 && inv.S <= 20, "--S must lie in 1..20");
  TorusSpec spec(1, 2, {1.37}, 1.0);
  Profile profile = Profile::gaussian();
  double t = 0.9, lambda = 1.3;
  IVec K{1};
  nlohmann::json cfg{{"S", inv.S}};
  if (!inv.config_path.empty()) {
    auto j = read_config(inv.config_path);
    guard_json("cancellation config", [&] {
      if (j.contains("spec")) spec = TorusSpec::from_json(j.at("spec"));
      if (j.contains("profile")) profile = Profile::from_json(j.at("profile"));
      t = j.value("t", t);
      lambda = j.value("lambda", lambda);
      if (j.contains("k")) K = ivec_from(j.at("k"));
      return 0;
    });
  }
  const long r = spec.rank(K);
  require(r >= 0, "mode k lies outside the cutoff");
  cfg.update({{"spec", spec.to_json()}, {"profile", profile.to_json()}, {"t", t}, {"lambda", lambda}});
  o.config = cfg;
  const auto phi = profile_values(spec, profile);
  auto res = degenerate_cancellation(inv.S, spec, phi, t, static_cast<std::size_t>(r), lambda, kDefaultMaxDepth,
                                     inv.budget.value_or(kDefaultTreeBudget));
  const long long binom = alternating_binomial_sum(inv.S);
  std::cout << "S = " << inv.S << "  sum_j (-1)^j S!/((S-j)! j!) = " << binom << "\n";
  std::map<std::pair<int, int>, std::pair<cplx, std::size_t>> levels;
  for (auto& row : res.rows) {
    auto& l = levels[{row.a.n, row.b.n}];
    l.first += row.value;
    ++l.second;
  }
  std::cout << std::setw(4) << "n" << std::setw(4) << "n'" << std::setw(8) << "pairs" << std::setw(16) << "Re sum"
            << std::setw(16) << "Im sum\n";
  for (auto& [nn, v] : levels)
    std::cout << std::setw(4) << nn.first << std::setw(4) << nn.second << std::setw(8) << v.second << std::setw(16)
              << v.first.real() << std::setw(16) << v.first.imag() << "\n";
  const double rel = res.scale > 0 ? std::abs(res.sum) / res.scale : 0.0;
  std::cout << "|sum| = " << std::abs(res.sum) << "  scale = " << res.scale << "  relative = " << rel << "\n";
  write_correlation_csv((out / "cancellation.csv").string(), res.rows);
  write_json(out / "cancellation.json", {{"S", inv.S},
                                         {"binomial_sum", binom},
                                         {"sum", {res.sum.real(), res.sum.imag()}},
                                         {"scale", res.scale},
                                         {"relative", rel}});
  if (binom != 0 || rel > 1e-12) {
    o.flagged = true;
    o.flag_reason = "degenerate sum does not cancel";
  }
  return o;
}

// ---------------------------------------------------------------------------
// Dispatch

inline void write_manifest(const Invocation& inv, const std::vector<std::string>& argv, const Outcome& o,
                           const std::string& started, int status, const std::string& error) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(inv.out_dir, ec);
  nlohmann::json cfg = o.config;
  if (cfg.is_object()) cfg.erase("output");
  nlohmann::json m{{"argv", argv},
                   {"subcommand", inv.subcommand},
                   {"version", kVersion},
                   {"config_path", inv.config_path},
                   {"config_hash", cfg.is_null() ? nullptr : nlohmann::json(hex64(fnv1a(cfg.dump())))},
                   {"seeds", o.seeds},
                   {"workers", inv.workers},
                   {"strict", inv.strict},
                   {"started", started},
                   {"finished", utc_now()},
                   {"exit_status", status}};
  if (!error.empty()) m["error"] = error;
  if (o.flagged) m["flag"] = o.flag_reason;
  std::ofstream f(fs::path(inv.out_dir) / "manifest.json");
  if (f) f << m.dump(2) << "\n";
}

inline int dispatch(int argc, const char* const* argv) {
  const std::string started = utc_now();
  std::vector<std::string> args(argv, argv + argc);
  Invocation inv;
  CLI::App app{"wkelab: lattice counting, tree expansions, collision integrals and ensembles"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  auto common = [&](CLI::App* s, bool needs_config) {
    auto c = s->add_option("--config", inv.config_path, "JSON config");
    if (needs_config) c->required();
    s->add_option("--out", inv.out_dir, "output directory");
    s->add_option("--workers", inv.workers, "worker threads")->check(CLI::PositiveNumber);
    s->add_option("--budget", inv.budget, "work budget override")->check(CLI::PositiveNumber);
    s->add_flag("--strict", inv.strict, "treat flagged results as failures");
    s->add_option("--seed", inv.seed, "root seed override");
    s->add_flag_function("-v,--verbose", [&inv](std::int64_t n) { inv.verbosity = static_cast<int>(n); }, "more output");
  };
  for (const char* name : {"simulate", "trees", "collision", "count", "report"})
    common(app.add_subcommand(name), true);
  app.get_subcommand("count")
      ->add_option("--method", inv.method, "brute, fast or both")
      ->check(CLI::IsMember({"brute", "fast", "both"}));
  auto* chk = app.add_subcommand("check");
  common(chk, false);
  chk->add_option("what", inv.check_name, "cancellation or regime")
      ->required()
      ->check(CLI::IsMember({"cancellation", "regime"}));
  chk->add_option("--S", inv.S, "total order for the cancellation check");

  Outcome outcome;
  int status = ok;
  std::string error;
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    if (auto* s = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front()) inv.subcommand = s->get_name();
    write_manifest(inv, args, outcome, started, invalid, e.what());
    return invalid;
  }
  inv.subcommand = app.get_subcommands().front()->get_name();
  namespace fs = std::filesystem;
  const fs::path out(inv.out_dir);
  try {
    fs::path work = out / ".partial";
    fs::remove_all(work);
    fs::create_directories(work);
    if (inv.subcommand == "simulate") outcome = run_simulate(inv, work);
    else if (inv.subcommand == "trees") outcome = run_trees(inv, work);
    else if (inv.subcommand == "collision") outcome = run_collision(inv, work);
    else if (inv.subcommand == "count") outcome = run_count(inv, work);
    else if (inv.subcommand == "report") outcome = run_report(inv, work);
    else outcome = run_check(inv, work);
    for (auto& e : fs::directory_iterator(work)) fs::rename(e.path(), out / e.path().filename());
    fs::remove_all(work);
    if (outcome.flagged) {
      std::cerr << "warning: " << outcome.flag_reason << "\n";
      if (inv.strict) status = nonconverged;
    }
  } catch (const ValidationError& e) {
    status = invalid;
    error = e.what();
  } catch (const BudgetExceeded& e) {
    status = over_budget;
    error = e.what();
    std::cerr << "budget exceeded: estimated cost " << e.estimate << ", budget " << e.budget << "\n";
  } catch (const std::exception& e) {
    status = other;
    error = e.what();
  }
  if (status != ok) {
    std::error_code ec;
    fs::remove_all(out / ".partial", ec);
    if (!error.empty()) std::cerr << "error: " << error << "\n";
  }
  write_manifest(inv, args, outcome, started, status, error);
  return status;
}

}  // namespace wke::cli
