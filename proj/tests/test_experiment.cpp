#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "wke/experiment.hpp"

using namespace wke;

namespace {

ExperimentConfig small_config(double lambda, std::size_t M, std::uint64_t seed = 1) {
  ExperimentConfig c{TorusSpec::generic(1, 4, 1.0, 42)};
  c.lambda = lambda;
  c.times = {0.0, 0.5, 1.0};
  c.ensemble = M;
  c.seeds.root_seed = seed;
  c.targets.kinetic = false;
  return c;
}

// lambda with t / sqrt(tau) = r at time t
double lambda_for(double r, double t, double L, int d) { return std::sqrt(r * std::pow(L, d) / (std::sqrt(2.0) * t)); }

}  // namespace

TEST(Ensemble, ZeroCouplingKeepsModuli) {
  auto c = small_config(0.0, 300);
  auto r = run_ensemble(c);
  auto phi = profile_values(c.spec, c.profile);
  for (std::size_t i = 0; i < r.times.size(); ++i)
    for (std::size_t k = 0; k < phi.size(); ++k) {
      // |sqrt(phi) e^{i theta}|^2 agrees with phi up to rounding of cos^2 + sin^2
      EXPECT_NEAR(r.mean[i][k], phi[k], 4 * std::numeric_limits<double>::epsilon() * phi[k]);
      EXPECT_LE(r.stderr_[i][k], 1e-15 * phi[k]);
    }
}

TEST(Ensemble, SameSeedIsBitIdentical) {
  auto c = small_config(0.8, 1, 99);
  auto a = run_ensemble(c), b = run_ensemble(c);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.stderr_, b.stderr_);
}

TEST(Ensemble, WorkerCountDoesNotChangeResults) {
  auto c = small_config(0.8, 700, 3);
  auto a = run_ensemble(c, 1), b = run_ensemble(c, 3);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.stderr_, b.stderr_);
  EXPECT_EQ(a.mass_mean, b.mass_mean);
}

TEST(Ensemble, ChunkMergeMatchesSinglePass) {
  std::mt19937_64 g(4);
  std::normal_distribution<> n(1.0, 2.0);
  Moments whole, left, right;
  for (int i = 0; i < 1000; ++i) {
    double x = n(g);
    whole.add(x);
    (i < 256 ? left : right).add(x);
  }
  left.merge(right);
  EXPECT_NEAR(left.mean, whole.mean, 1e-14);
  EXPECT_NEAR(left.variance(), whole.variance(), 1e-12);
}

TEST(Ensemble, MatchesTreeExpansion) {
  const double lam = lambda_for(0.1, 1.0, 4, 1);
  auto c = small_config(lam, 2000, 11);
  auto r = run_ensemble(c);
  const TargetSeries* tree = r.target("tree2");
  ASSERT_NE(tree, nullptr);
  for (std::size_t i = 1; i < r.times.size(); ++i)
    for (std::size_t k = 0; k < c.spec.size(); ++k)
      EXPECT_LE(std::abs(r.mean[i][k] - tree->value[i][k]), 4 * r.stderr_[i][k]) << "t=" << r.times[i] << " k=" << k;
  EXPECT_LE(r.max_mass_drift, 1e-8);
}

TEST(Ensemble, StandardErrorScaling) {
  // se ~ M^{-1/2}: doubling M gives sqrt 2, quadrupling gives 2
  const double lam = 1.0;
  auto se_at = [&](std::size_t M) {
    auto r = run_ensemble(small_config(lam, M, 21));
    double s = 0;
    for (double v : r.stderr_[2]) s += v;
    return s;
  };
  const double s1 = se_at(500), s2 = se_at(1000), s4 = se_at(2000);
  EXPECT_GE(s1 / s2, 1.3);
  EXPECT_LE(s1 / s2, 1.6);
  EXPECT_GE(s1 / s4, 1.7);
  EXPECT_LE(s1 / s4, 2.3);
}

TEST(Ensemble, MassSanity) {
  auto c = small_config(1.2, 400, 5);
  c.seeds.model = PhaseModel::gaussian;
  auto r = run_ensemble(c);
  for (std::size_t i = 0; i < r.times.size(); ++i)
    EXPECT_LE(std::abs(r.mass_mean[i] - r.expected_mass), 4 * r.mass_stderr[i]);
  c.seeds.model = PhaseModel::uniform;
  auto u = run_ensemble(c);
  for (std::size_t i = 0; i < u.times.size(); ++i)
    EXPECT_NEAR(u.mass_mean[i], u.expected_mass, 1e-8 * u.expected_mass);
}

TEST(Ensemble, BlowUpNamesTheMember) {
  auto c = small_config(1e4, 3, 8);
  c.times = {0.0, 50.0};
  c.solver.dt = 1.0;
  c.targets.tree_order = 0;
  try {
    run_ensemble(c);
    FAIL() << "expected a failure";
  } catch (const NumericalFailure& e) {
    EXPECT_NE(std::string(e.what()).find("member 0"), std::string::npos) << e.what();
  }
}

TEST(ExperimentConfig, JsonRoundTripAndValidation) {
  auto c = small_config(0.5, 10, 7);
  c.output = "out";
  auto back = ExperimentConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.hash(), c.hash());
  auto j = c.to_json();
  j["ensemble"] = 0;
  EXPECT_THROW(ExperimentConfig::from_json(j), ValidationError);
  j = c.to_json();
  j["horizon"] = 0.5;
  EXPECT_THROW(ExperimentConfig::from_json(j), ValidationError);
  j = c.to_json();
  j["times"] = {1.0, 0.5};
  EXPECT_THROW(ExperimentConfig::from_json(j), ValidationError);
  j = c.to_json();
  j["output"] = "elsewhere";
  EXPECT_EQ(ExperimentConfig::from_json(j).hash(), c.hash());
}

TEST(KineticCheck, InitialSnapshotIsNoise) {
  ExperimentConfig c{TorusSpec::generic(2, 4, 1.0, 42)};
  c.lambda = 1.5;
  c.times = {0.0, 0.5};
  c.ensemble = 400;
  c.seeds = {13, PhaseModel::gaussian};
  c.targets.tree_order = 0;
  auto r = run_ensemble(c);
  auto rep = kinetic_check(r, c.profile, c.lambda, c.spec);
  ASSERT_EQ(rep.rows.size(), 2u);
  const double t1 = 0.5 / rep.tau;
  EXPECT_LE(rep.rows[0].kinetic_normalized, 4 * rep.rows[0].max_stderr / t1);
  EXPECT_DOUBLE_EQ(rep.rows[1].t_over_tau, 0.5 / kinetic_time(1.5, 4, 2));
}

TEST(KineticCheck, TreeBeatsKineticAtSmallTime) {
  ExperimentConfig c{TorusSpec::generic(2, 4, 1.0, 42)};
  c.lambda = lambda_for(0.3, 0.5, 4, 2);
  c.times = {0.5};
  c.ensemble = 500;
  c.seeds.root_seed = 17;
  c.collision_m = 12;
  auto r = run_ensemble(c);
  auto rep = kinetic_check(r, c.profile, c.lambda, c.spec, 12);
  EXPECT_LT(rep.rows[0].tree_sup, rep.rows[0].kinetic_sup);
  EXPECT_GT(rep.rows[0].kinetic_sup - rep.rows[0].tree_sup, rep.rows[0].max_stderr);
  EXPECT_LE(r.max_mass_drift, 1e-8);
}

TEST(Strichartz, SingleModeClosedForm) {
  auto spec = TorusSpec::generic(2, 8, 1.0, 42);
  Profile p;
  p.kind = Profile::Kind::table;
  p.table[IVec{2, -1, 0, 0}] = 2.25;
  auto a = sample_initial(spec, profile_values(spec, p), SeedPlan{1}, 0).amps;
  PaddedGrid grid(spec);
  const double Ld = spec.Ld();
  const double c4 = 2.25 * 2.25;
  const double one = spacetime_l4_4(spec, a, 1.0, 5, grid), two = spacetime_l4_4(spec, a, 2.0, 5, grid);
  EXPECT_NEAR(one, Ld * c4 / std::pow(Ld, 4), 1e-12 * one);
  EXPECT_NEAR(two, 2 * one, 1e-12 * one);
  auto row = strichartz_check(spec, p, 1.0, 3, SeedPlan{1});
  EXPECT_NEAR(row.ratio, 1.0, 1e-12);
  EXPECT_NEAR(row.expected, 1.0, 1e-15);
}

TEST(Strichartz, GaussianLadderHasNoTrend) {
  auto lad = strichartz_ladder(2, {8, 16, 32}, TorusSpec::generic(2, 1, 0.0, 42).beta(), 1.0, Profile::gaussian(),
                               1.0, 200, SeedPlan{7});
  EXPECT_TRUE(lad.ok);
  EXPECT_LE(lad.band, 1.2);
  for (auto& r : lad.rows) EXPECT_NEAR(r.ratio, r.expected, 5 * r.ratio_stderr + 1e-3);
}

TEST(Regime, ThetaAndTau) {
  EXPECT_DOUBLE_EQ(*strichartz_theta(3), 30.0 / 13.0);
  EXPECT_DOUBLE_EQ(*strichartz_theta(4), 8.0 / 3.0);
  EXPECT_FALSE(strichartz_theta(2).has_value());
  auto p = regime_params(0.3, 20.0, 3, 0.01);
  EXPECT_DOUBLE_EQ(p.tau, kinetic_time(0.3, 20.0, 3));
  EXPECT_EQ(p.C, 1.0);
  auto q = regime_params(0.3, 20.0, 2, 0.01);
  EXPECT_FALSE(q.theta.has_value());
  EXPECT_EQ(q.regime, "undefined");
  EXPECT_DOUBLE_EQ(q.tau, kinetic_time(0.3, 20.0, 2));
}

TEST(Regime, WindowsAndR) {
  const double L = 1e4, eps = 0.01;
  const int d = 3;
  const double th = 30.0 / 13.0;
  const double lmid = std::pow(L, (d - th) / 4 - 2 * eps), llow = std::pow(L, (-d + th) / 4);
  auto strong = regime_params(2 * lmid, L, d, eps);
  EXPECT_EQ(strong.regime, "strong");
  EXPECT_NEAR(*strong.T_window, std::pow(2 * lmid, -4) * std::pow(L, d - 8 * eps), 1e-9 * *strong.T_window);
  const double lam = std::sqrt(llow * lmid);
  auto mid = regime_params(lam, L, d, eps);
  EXPECT_EQ(mid.regime, "intermediate");
  EXPECT_NEAR(*mid.T_window, std::pow(lam, -2) * std::pow(L, (d + th) / 2 - 4 * eps), 1e-9 * *mid.T_window);
  EXPECT_EQ(regime_params(0.5 * llow, L, d, eps).regime, "below");
  auto p = regime_params(lam, L, d, eps, 2.0, 1e3);
  const double x = 1e3 / std::pow(L, th);
  const double S = 2.0 * std::pow(L, eps) * std::pow(1 + x * x, 0.125);
  const double I = std::pow(L, eps) * std::pow(1e3 / std::pow(L, d), 0.25);
  EXPECT_NEAR(p.R, 12 * std::pow(lam * S * I, 2), 1e-12 * p.R);
}

TEST(Outputs, FilesAndColumns) {
  auto c = small_config(0.6, 20, 2);
  auto r = run_ensemble(c);
  auto dir = std::filesystem::temp_directory_path() / "wke_experiment_out";
  std::filesystem::remove_all(dir);
  write_ensemble_outputs(dir.string(), c, r);
  std::ifstream lf(dir / "long.csv");
  std::string header;
  std::getline(lf, header);
  EXPECT_EQ(header, "k_norm,t,mean,stderr,target,discrepancy");
  EXPECT_TRUE(std::filesystem::exists(dir / "spectrum_0.csv"));
  std::ifstream js(dir / "report.json");
  auto rep = nlohmann::json::parse(js);
  EXPECT_EQ(rep["config_hash"], c.hash());
  EXPECT_EQ(rep["version"], kVersion);
  EXPECT_EQ(rep["root_seed"], 2);
  std::filesystem::remove_all(dir);
}
