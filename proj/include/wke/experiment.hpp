#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "wke/collision.hpp"
#include "wke/core.hpp"
#include "wke/lattice.hpp"
#include "wke/solver.hpp"
#include "wke/spectra.hpp"
#include "wke/transform.hpp"
#include "wke/trees.hpp"

namespace wke {

inline constexpr std::size_t kEnsembleChunk = 256;

struct Targets {
  int tree_order = 2;  // 0 disables the tree target
  bool kinetic = true;
};

struct ExperimentConfig {
  TorusSpec spec;
  Profile profile = Profile::gaussian();
  double lambda = 1.0;
  std::vector<double> times{0.0, 1.0};
  double horizon = 0;  // 0: the largest snapshot time
  std::size_t ensemble = 100;
  SeedPlan seeds{};
  SolverConfig solver{};
  Targets targets{};
  std::string output;
  int collision_m = 24;
  double budget = kDefaultTreeBudget;

  ExperimentConfig() = default;
  explicit ExperimentConfig(TorusSpec s) : spec(std::move(s)) {}

  double t_end() const { return horizon > 0 ? horizon : *std::max_element(times.begin(), times.end()); }

  void validate() const {
    require(ensemble >= 1, "ensemble size must be at least 1");
    require(!times.empty(), "at least one snapshot time is required");
    require(lambda >= 0 && std::isfinite(lambda), "lambda must be nonnegative");
    for (double t : times) require(t >= 0 && std::isfinite(t), "snapshot times must be nonnegative");
    require(std::is_sorted(times.begin(), times.end()), "snapshot times must be increasing");
    require(horizon >= 0, "horizon must be nonnegative");
    if (horizon > 0) require(times.back() <= horizon, "snapshot times must not exceed the horizon");
    require(targets.tree_order == 0 || targets.tree_order == 2, "tree_order must be 0 or 2");
    require(collision_m >= 4, "collision_m must be at least 4");
  }

  nlohmann::json to_json() const {
    return {{"spec", spec.to_json()},
            {"profile", profile.to_json()},
            {"lambda", lambda},
            {"times", times},
            {"horizon", horizon},
            {"ensemble", ensemble},
            {"seed", seeds.root_seed},
            {"phase_model", seeds.model == PhaseModel::uniform ? "uniform" : "gaussian"},
            {"solver", solver.to_json()},
            {"targets", {{"tree_order", targets.tree_order}, {"kinetic", targets.kinetic}}},
            {"output", output},
            {"collision_m", collision_m},
            {"budget", budget}};
  }

  std::string hash() const {
    auto j = to_json();
    j.erase("output");
    return hex64(fnv1a(j.dump()));
  }

  static ExperimentConfig from_json(const nlohmann::json& j) {
    try {
      ExperimentConfig c{TorusSpec::from_json(j.at("spec"))};
      if (j.contains("profile")) c.profile = Profile::from_json(j.at("profile"));
      c.lambda = j.value("lambda", 1.0);
      if (j.contains("times")) c.times = j.at("times").get<std::vector<double>>();
      c.horizon = j.value("horizon", 0.0);
      auto M = j.value("ensemble", 100L);
      require(M >= 1, "ensemble size must be at least 1");
      c.ensemble = static_cast<std::size_t>(M);
      c.seeds.root_seed = j.value("seed", std::uint64_t{0});
      auto pm = j.value("phase_model", std::string("uniform"));
      require(pm == "uniform" || pm == "gaussian", "phase_model must be uniform or gaussian");
      c.seeds.model = pm == "uniform" ? PhaseModel::uniform : PhaseModel::gaussian;
      if (j.contains("solver")) c.solver = SolverConfig::from_json(j.at("solver"));
      if (j.contains("targets")) {
        c.targets.tree_order = j.at("targets").value("tree_order", 2);
        c.targets.kinetic = j.at("targets").value("kinetic", true);
      }
      c.output = j.value("output", std::string());
      c.collision_m = j.value("collision_m", 24);
      c.budget = j.value("budget", kDefaultTreeBudget);
      c.validate();
      return c;
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("experiment config: ") + e.what());
    }
  }
};

// Streaming mean and centred second moment; merge() is Chan's pairwise update.
struct Moments {
  double n = 0, mean = 0, m2 = 0;

  void add(double x) {
    n += 1;
    const double d = x - mean;
    mean += d / n;
    m2 += d * (x - mean);
  }

  void merge(const Moments& o) {
    if (o.n == 0) return;
    if (n == 0) {
      *this = o;
      return;
    }
    const double tot = n + o.n, d = o.mean - mean;
    mean += d * o.n / tot;
    m2 += o.m2 + d * d * n * o.n / tot;
    n = tot;
  }

  double variance() const { return n > 1 ? m2 / (n - 1) : 0.0; }
  double stderr_() const { return n > 0 ? std::sqrt(variance() / n) : 0.0; }
};

struct TargetSeries {
  std::string name;                        // "tree2" or "kinetic"
  std::vector<std::vector<double>> value;  // [snapshot][mode]
};

struct Discrepancy {
  std::string target;
  double t = 0;
  double sup = 0;         // l-infinity over modes
  double weighted_l2 = 0;  // sqrt(sum_k phi_k e_k^2 / sum_k phi_k)
};

struct EnsembleResult {
  std::vector<double> times;
  std::size_t M = 0;
  std::vector<std::vector<double>> mean, stderr_;  // [snapshot][mode]
  std::vector<double> mass_mean, mass_stderr;      // [snapshot]
  double expected_mass = 0;
  double max_mass_drift = 0;
  std::vector<TargetSeries> targets;
  std::vector<Discrepancy> discrepancies;
  std::string config_hash;
  std::uint64_t root_seed = 0;
  double wall_seconds = 0;

  const TargetSeries* target(const std::string& name) const {
    for (auto& t : targets)
      if (t.name == name) return &t;
    return nullptr;
  }

  nlohmann::json to_json() const {
    nlohmann::json j{{"times", times},
                     {"M", M},
                     {"mass_mean", mass_mean},
                     {"mass_stderr", mass_stderr},
                     {"expected_mass", expected_mass},
                     {"max_mass_drift", max_mass_drift},
                     {"config_hash", config_hash},
                     {"root_seed", root_seed},
                     {"version", kVersion},
                     {"wall_seconds", wall_seconds}};
    j["discrepancies"] = nlohmann::json::array();
    for (auto& d : discrepancies)
      j["discrepancies"].push_back({{"target", d.target}, {"t", d.t}, {"sup", d.sup}, {"weighted_l2", d.weighted_l2}});
    return j;
  }
};

namespace detail {

inline Discrepancy discrepancy(const std::string& name, double t, const std::vector<double>& mean,
                               const std::vector<double>& target, const std::vector<double>& phi) {
  Discrepancy d{name, t, 0, 0};
  double wsum = 0, acc = 0;
  for (std::size_t r = 0; r < mean.size(); ++r) {
    const double e = std::abs(mean[r] - target[r]);
    d.sup = std::max(d.sup, e);
    acc += phi[r] * e * e;
    wsum += phi[r];
  }
  d.weighted_l2 = wsum > 0 ? std::sqrt(acc / wsum) : 0.0;
  return d;
}

}  // namespace detail

// phi(k) + (t/tau) T(phi)(k) on every lattice mode; T from the co-area formula.
inline std::vector<std::vector<double>> kinetic_prediction(const TorusSpec& spec, const Profile& profile,
                                                           double lambda, const std::vector<double>& times,
                                                           int m = 24, std::size_t workers = 1) {
  require(spec.d() >= 2, "the kinetic prediction needs d >= 2");
  const auto phi = profile_values(spec, profile);
  const Dispersion disp = Dispersion::of(spec);
  const Density rho = density_of(profile, spec.d());
  std::vector<double> T(spec.size());
  parallel_for(spec.size(), workers,
               [&](std::size_t r) { T[r] = collision_coarea(disp, rho, spec.k_of(spec.mode(r)), m); });
  const double tau = kinetic_time(lambda, spec.L(), spec.d());
  std::vector<std::vector<double>> out;
  for (double t : times) {
    std::vector<double> v(spec.size());
    for (std::size_t r = 0; r < spec.size(); ++r) v[r] = phi[r] + (lambda > 0 ? t / tau : 0.0) * T[r];
    out.push_back(std::move(v));
  }
  return out;
}

inline std::vector<std::vector<double>> tree_prediction(const TorusSpec& spec, const std::vector<double>& phi,
                                                        double lambda, const std::vector<double>& times,
                                                        PhaseModel model, double budget, std::size_t workers = 1) {
  std::vector<std::vector<double>> out(times.size(), std::vector<double>(spec.size()));
  parallel_for(spec.size(), workers, [&](std::size_t r) {
    for (std::size_t i = 0; i < times.size(); ++i)
      out[i][r] = second_moment_expansion(spec, times[i], r, phi, lambda, 2, model, budget);
  });
  return out;
}

// Monte Carlo estimate of E|a_k(t)|^2. Members are grouped in fixed chunks of
// 256; each chunk streams its members in index order and chunks merge in
// order, so the result does not depend on the worker count.
inline EnsembleResult run_ensemble(const ExperimentConfig& cfg, std::size_t workers = 1) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const TorusSpec& spec = cfg.spec;
  const auto phi = profile_values(spec, cfg.profile);
  const std::size_t n = spec.size(), S = cfg.times.size();
  SolverConfig sc = cfg.solver;
  sc.snapshots = cfg.times;
  sc.threads = 1;
  const double t_end = cfg.t_end();

  struct Chunk {
    std::vector<Moments> modes;  // [snapshot * n + mode]
    std::vector<Moments> mass;
    double drift = 0;
  };
  const std::size_t chunks = (cfg.ensemble + kEnsembleChunk - 1) / kEnsembleChunk;
  std::vector<Chunk> parts(chunks);
  parallel_for(chunks, workers, [&](std::size_t c) {
    Chunk& ch = parts[c];
    ch.modes.assign(S * n, {});
    ch.mass.assign(S, {});
    const std::size_t lo = c * kEnsembleChunk, hi = std::min(cfg.ensemble, lo + kEnsembleChunk);
    for (std::size_t m = lo; m < hi; ++m) {
      auto a0 = sample_initial(spec, phi, cfg.seeds, m).amps;
      Trajectory tr;
      try {
        if (t_end > 0) {
          tr = evolve(spec, a0, cfg.lambda, t_end, sc);
        } else {
          tr.times = {0.0};
          tr.fields = {a0};
          tr.mass = {mass(spec, a0)};
        }
      } catch (const NumericalFailure& e) {
        throw NumericalFailure("ensemble member " + std::to_string(m) + " (root seed " +
                               std::to_string(cfg.seeds.root_seed) + ") failed: " + e.what());
      }
      ch.drift = std::max(ch.drift, tr.mass_drift());
      for (std::size_t i = 0; i < S; ++i) {
        auto it = std::find(tr.times.begin(), tr.times.end(), cfg.times[i]);
        if (it == tr.times.end()) throw NumericalFailure("snapshot time missing from trajectory");
        const std::size_t s = static_cast<std::size_t>(it - tr.times.begin());
        for (std::size_t r = 0; r < n; ++r) ch.modes[i * n + r].add(std::norm(tr.fields[s][r]));
        ch.mass[i].add(tr.mass[s]);
      }
    }
  });
  Chunk all;
  all.modes.assign(S * n, {});
  all.mass.assign(S, {});
  for (auto& ch : parts) {
    for (std::size_t i = 0; i < S * n; ++i) all.modes[i].merge(ch.modes[i]);
    for (std::size_t i = 0; i < S; ++i) all.mass[i].merge(ch.mass[i]);
    all.drift = std::max(all.drift, ch.drift);
  }

  EnsembleResult res;
  res.times = cfg.times;
  res.M = cfg.ensemble;
  res.mean.assign(S, std::vector<double>(n));
  res.stderr_.assign(S, std::vector<double>(n));
  for (std::size_t i = 0; i < S; ++i) {
    for (std::size_t r = 0; r < n; ++r) {
      res.mean[i][r] = all.modes[i * n + r].mean;
      res.stderr_[i][r] = all.modes[i * n + r].stderr_();
    }
    res.mass_mean.push_back(all.mass[i].mean);
    res.mass_stderr.push_back(all.mass[i].stderr_());
  }
  double sphi = 0;
  for (double p : phi) sphi += p;
  res.expected_mass = sphi / spec.Ld();
  res.max_mass_drift = all.drift;

  if (cfg.targets.tree_order == 2)
    res.targets.push_back({"tree2", tree_prediction(spec, phi, cfg.lambda, cfg.times, cfg.seeds.model, cfg.budget,
                                                    workers)});
  if (cfg.targets.kinetic && spec.d() >= 2 && cfg.profile.kind != Profile::Kind::table)
    res.targets.push_back(
        {"kinetic", kinetic_prediction(spec, cfg.profile, cfg.lambda, cfg.times, cfg.collision_m, workers)});
  for (auto& tg : res.targets)
    for (std::size_t i = 0; i < S; ++i)
      res.discrepancies.push_back(detail::discrepancy(tg.name, cfg.times[i], res.mean[i], tg.value[i], phi));

  res.config_hash = cfg.hash();
  res.root_seed = cfg.seeds.root_seed;
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

struct KineticRow {
  double t = 0, t_over_tau = 0;
  double kinetic_sup = 0, kinetic_normalized = 0, kinetic_l2 = 0;
  double tree_sup = std::numeric_limits<double>::quiet_NaN(), tree_normalized = std::numeric_limits<double>::quiet_NaN();
  double max_stderr = 0;
};

struct KineticReport {
  double tau = 0;
  std::vector<KineticRow> rows;

  nlohmann::json to_json() const {
    nlohmann::json j{{"tau", tau}, {"rows", nlohmann::json::array()}};
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    for (auto& r : rows)
      j["rows"].push_back({{"t", r.t},
                           {"t_over_tau", r.t_over_tau},
                           {"kinetic_sup", r.kinetic_sup},
                           {"kinetic_normalized", num(r.kinetic_normalized)},
                           {"kinetic_l2", r.kinetic_l2},
                           {"tree_sup", num(r.tree_sup)},
                           {"tree_normalized", num(r.tree_normalized)},
                           {"max_stderr", r.max_stderr}});
    return j;
  }
};

// sup_k |mean - phi - (t/tau) T(phi)| per snapshot, normalized by t/tau (the
// t = 0 row uses the first positive snapshot), next to the tree-order-2 gap.
inline KineticReport kinetic_check(const EnsembleResult& res, const Profile& profile, double lambda,
                                   const TorusSpec& spec, int m = 24, std::size_t workers = 1) {
  require(lambda > 0, "kinetic_check needs lambda > 0");
  KineticReport rep;
  rep.tau = kinetic_time(lambda, spec.L(), spec.d());
  const auto phi = profile_values(spec, profile);
  std::vector<std::vector<double>> kin;
  if (const TargetSeries* k = res.target("kinetic")) {
    kin = k->value;
  } else {
    kin = kinetic_prediction(spec, profile, lambda, res.times, m, workers);
  }
  const TargetSeries* tree = res.target("tree2");
  double t1 = 0;
  for (double t : res.times)
    if (t > 0) {
      t1 = t;
      break;
    }
  for (std::size_t i = 0; i < res.times.size(); ++i) {
    KineticRow row;
    row.t = res.times[i];
    row.t_over_tau = row.t / rep.tau;
    const double norm = (row.t > 0 ? row.t : t1) / rep.tau;
    auto kd = detail::discrepancy("kinetic", row.t, res.mean[i], kin[i], phi);
    row.kinetic_sup = kd.sup;
    row.kinetic_l2 = kd.weighted_l2;
    row.kinetic_normalized = norm > 0 ? kd.sup / norm : std::numeric_limits<double>::quiet_NaN();
    if (tree) {
      row.tree_sup = detail::discrepancy("tree2", row.t, res.mean[i], tree->value[i], phi).sup;
      row.tree_normalized = norm > 0 ? row.tree_sup / norm : std::numeric_limits<double>::quiet_NaN();
    }
    for (double se : res.stderr_[i]) row.max_stderr = std::max(row.max_stderr, se);
    rep.rows.push_back(row);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Linear space-time L^4 norm

struct StrichartzRow {
  double L = 0;
  std::size_t M = 0;
  double T = 0;
  double ratio = 0, ratio_stderr = 0;
  double expected = 0;  // 2 - sum phi^2 / (sum phi)^2 for uniform phases
};

// ||e^{it Delta} u0||^4 over [0,T] x T_L, u0 = L^{-d} sum a_k e^{2 pi i k.x};
// space exactly on the padded grid, time by the trapezoid rule on nt points.
inline double spacetime_l4_4(const TorusSpec& spec, const Field& a, double T, int nt, PaddedGrid& grid) {
  require(nt >= 2, "need at least two time points");
  const double Ld = spec.Ld();
  Field u(spec.size());
  double s = 0;
  for (int j = 0; j < nt; ++j) {
    const double t = T * j / (nt - 1);
    for (std::size_t r = 0; r < spec.size(); ++r) {
      const double th = kTwoPi * t * spec.q(r);
      u[r] = a[r] * cplx(std::cos(th), std::sin(th)) / Ld;
    }
    const double v = Ld * grid.mean_abs4(u.data());
    s += (j == 0 || j == nt - 1) ? 0.5 * v : v;
  }
  return s * T / (nt - 1);
}

inline StrichartzRow strichartz_check(const TorusSpec& spec, const Profile& profile, double T, std::size_t M,
                                      const SeedPlan& plan, int nt = 9, std::size_t workers = 1) {
  require(T > 0 && M >= 1, "strichartz_check needs T > 0 and M >= 1");
  const auto phi = profile_values(spec, profile);
  std::vector<double> num(M), den(M);
  const std::size_t nw = std::max<std::size_t>(1, std::min(workers, M));
  parallel_for(nw, nw, [&](std::size_t w) {
    PaddedGrid grid(spec);
    for (std::size_t m = w; m < M; m += nw) {
      auto a = sample_initial(spec, phi, plan, m).amps;
      num[m] = spacetime_l4_4(spec, a, T, nt, grid);
      const double l2 = mass(spec, a);
      den[m] = T / spec.Ld() * l2 * l2;
    }
  });
  Moments mn, md;
  for (std::size_t m = 0; m < M; ++m) {
    mn.add(num[m]);
    md.add(den[m]);
  }
  StrichartzRow row;
  row.L = spec.L();
  row.M = M;
  row.T = T;
  row.ratio = mn.mean / md.mean;
  row.ratio_stderr = mn.stderr_() / md.mean;
  double s1 = 0, s2 = 0;
  for (double p : phi) {
    s1 += p;
    s2 += p * p;
  }
  row.expected = s1 > 0 ? 2.0 - s2 / (s1 * s1) : 0.0;
  return row;
}

struct StrichartzLadder {
  std::vector<StrichartzRow> rows;
  double band = 0;  // max ratio / min ratio
  bool ok = false;  // band <= 1.2
};

inline StrichartzLadder strichartz_ladder(int d, const std::vector<double>& Ls, const std::vector<double>& beta,
                                          double cutoff, const Profile& profile, double T, std::size_t M,
                                          const SeedPlan& plan, std::size_t workers = 1) {
  StrichartzLadder out;
  double lo = std::numeric_limits<double>::infinity(), hi = 0;
  for (double L : Ls) {
    TorusSpec spec(d, L, beta, cutoff);
    auto row = strichartz_check(spec, profile, T, M, plan, 9, workers);
    lo = std::min(lo, row.ratio);
    hi = std::max(hi, row.ratio);
    out.rows.push_back(row);
  }
  out.band = hi / lo;
  out.ok = out.band <= 1.2;
  return out;
}

// ---------------------------------------------------------------------------
// Regime parameters

struct RegimeParams {
  int d = 0;
  double lambda = 0, L = 0, eps0 = 0, C = 1, T = 0;
  std::optional<double> theta;
  double S_star = std::numeric_limits<double>::quiet_NaN();
  double I = std::numeric_limits<double>::quiet_NaN();
  double R = std::numeric_limits<double>::quiet_NaN();
  double tau = 0;
  std::string regime;  // "intermediate", "strong", "below" or "undefined"
  std::optional<double> T_window;
  double lambda_low = std::numeric_limits<double>::quiet_NaN(), lambda_mid = std::numeric_limits<double>::quiet_NaN();

  nlohmann::json to_json() const {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    return {{"d", d},
            {"lambda", lambda},
            {"L", L},
            {"eps0", eps0},
            {"C", C},
            {"T", num(T)},
            {"theta", theta ? nlohmann::json(*theta) : nlohmann::json(nullptr)},
            {"S_star", num(S_star)},
            {"I", num(I)},
            {"R", num(R)},
            {"tau", tau},
            {"regime", regime},
            {"T_window", T_window ? nlohmann::json(*T_window) : nlohmann::json(nullptr)},
            {"lambda_low", num(lambda_low)},
            {"lambda_mid", num(lambda_mid)}};
  }
};

inline std::optional<double> strichartz_theta(int d) {
  if (d == 3) return 4.0 / 13.0 + 2.0;
  if (d >= 4) return (d - 2.0) * (d - 2.0) / (2.0 * (d - 1.0)) + 2.0;
  return std::nullopt;
}

// T = 0 evaluates S_*, I and R at the predicted window (or L^d when no window applies).
inline RegimeParams regime_params(double lambda, double L, int d, double eps0, double C = 1.0, double T = 0.0) {
  require(lambda > 0 && L > 0 && d >= 1 && eps0 >= 0 && C > 0 && T >= 0, "invalid regime parameters");
  RegimeParams p;
  p.d = d;
  p.lambda = lambda;
  p.L = L;
  p.eps0 = eps0;
  p.C = C;
  p.tau = kinetic_time(lambda, L, d);
  p.theta = strichartz_theta(d);
  if (!p.theta) {
    p.regime = "undefined";
    p.T = T;
    return p;
  }
  const double th = *p.theta;
  p.lambda_low = std::pow(L, (-d + th) / 4.0);
  p.lambda_mid = std::pow(L, (d - th) / 4.0 - 2.0 * eps0);
  if (lambda >= p.lambda_mid) {
    p.regime = "strong";
    p.T_window = std::pow(lambda, -4.0) * std::pow(L, d - 8.0 * eps0);
  } else if (lambda >= p.lambda_low) {
    p.regime = "intermediate";
    p.T_window = std::pow(lambda, -2.0) * std::pow(L, (d + th) / 2.0 - 4.0 * eps0);
  } else {
    p.regime = "below";
  }
  p.T = T > 0 ? T : (p.T_window ? *p.T_window : std::pow(L, d));
  const double x = p.T / std::pow(L, th);
  p.S_star = C * std::pow(L, eps0) * std::pow(1.0 + x * x, 0.125);
  p.I = std::pow(L, eps0) * std::pow(p.T / std::pow(L, d), 0.25);
  p.R = 12.0 * std::pow(lambda * p.S_star * p.I, 2);
  return p;
}

// ---------------------------------------------------------------------------
// Outputs

inline void write_ensemble_outputs(const std::string& dir, const ExperimentConfig& cfg, const EnsembleResult& res,
                                   const std::optional<KineticReport>& kin = std::nullopt) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const TorusSpec& spec = cfg.spec;
  const int d = spec.d();
  for (std::size_t i = 0; i < res.times.size(); ++i) {
    std::ofstream out(fs::path(dir) / ("spectrum_" + std::to_string(i) + ".csv"));
    if (!out) throw ValidationError("cannot write into " + dir);
    out.precision(17);
    for (int a = 0; a < d; ++a) out << "K" << a << ",";
    out << "t,mean,stderr\n";
    for (std::size_t r = 0; r < spec.size(); ++r) {
      for (int a = 0; a < d; ++a) out << spec.mode(r)[a] << ",";
      out << res.times[i] << "," << res.mean[i][r] << "," << res.stderr_[i][r] << "\n";
    }
  }
  std::ofstream lf(fs::path(dir) / "long.csv");
  lf.precision(17);
  lf << "k_norm,t,mean,stderr,target,discrepancy\n";
  for (std::size_t i = 0; i < res.times.size(); ++i)
    for (std::size_t r = 0; r < spec.size(); ++r) {
      RVec k = spec.k_of(spec.mode(r));
      double kn = 0;
      for (int a = 0; a < d; ++a) kn += k[a] * k[a];
      kn = std::sqrt(kn);
      for (auto& tg : res.targets)
        lf << kn << "," << res.times[i] << "," << res.mean[i][r] << "," << res.stderr_[i][r] << "," << tg.name << ","
           << res.mean[i][r] - tg.value[i][r] << "\n";
      if (res.targets.empty())
        lf << kn << "," << res.times[i] << "," << res.mean[i][r] << "," << res.stderr_[i][r] << ",none,\n";
    }
  nlohmann::json rep = res.to_json();
  rep["config"] = cfg.to_json();
  if (kin) rep["kinetic"] = kin->to_json();
  std::ofstream js(fs::path(dir) / "report.json");
  js << rep.dump(2) << "\n";
}

}  // namespace wke
