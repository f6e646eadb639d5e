#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <filesystem>
#include <fstream>

#include "wke/collision.hpp"
#include "wke/trees.hpp"

using namespace wke;

namespace {

const Dispersion kAniso{2, {1.0, 1.37}};

Density gaussian_density(double w = 1.0) { return density_of(Profile::gaussian(w), 2); }

// Mixture with no reflection symmetry, so no conservation law holds by parity.
double mixture(const RVec& k) {
  auto g = [](double x, double y, double s) { return std::exp(-kPi * s * (x * x + y * y)); };
  return g(k[0] - 0.3, k[1], 1.0) + 0.5 * g(k[0] + 0.2, k[1] - 0.4, 2.0);
}

}  // namespace

TEST(KineticTime, Examples) {
  EXPECT_DOUBLE_EQ(kinetic_time(1.0, 10.0, 3), 5e5);
  EXPECT_DOUBLE_EQ(kinetic_time(1.0, 2.0, 1), 2.0);
  const double lam = 0.7;
  EXPECT_NEAR(kinetic_time(lam / std::sqrt(2.0), 6.0, 2) * std::pow(lam / std::sqrt(2.0), 4), std::pow(6.0, 4) / 2,
              1e-9);
  EXPECT_THROW(kinetic_time(0.0, 1.0, 2), ValidationError);
}

TEST(SphereRule, AreasAndSecondMoments) {
  const double area[] = {0, 0, kTwoPi, 4 * kPi, 2 * kPi * kPi};
  for (int d = 2; d <= 4; ++d) {
    SphereRule r = sphere_rule(d, 10);
    double s = 0, x2 = 0, x4 = 0;
    for (std::size_t i = 0; i < r.w.size(); ++i) {
      s += r.w[i];
      x2 += r.w[i] * r.dir[i][d - 1] * r.dir[i][d - 1];
      x4 += r.w[i] * std::pow(r.dir[i][0], 4);
    }
    EXPECT_NEAR(s, area[d], 1e-12) << d;
    EXPECT_NEAR(x2, area[d] / d, 1e-12) << d;
    EXPECT_NEAR(x4, 3 * area[d] / (d * (d + 2.0)), 1e-12) << d;
  }
}

// For W = exp(-a (Q(p) + Q(q))) the density is pi^2 e^{-2a|w|}/(4a det beta) in d = 2
// and pi^2/(4 a^2 det beta) at w = 0 in d = 3.
TEST(ResonanceDensity, GaussianWeightClosedForm) {
  const double a = 0.8;
  RVec k{0.4, -0.3, 0.2, 0};
  for (int d : {2, 3}) {
    Dispersion disp{d, d == 2 ? std::vector<double>{1.0, 1.37} : std::vector<double>{1.0, 1.37, 1.81}};
    auto W = [&](const RVec& k1, const RVec& k2, const RVec& k3) {
      RVec p{}, q{};
      for (int i = 0; i < d; ++i) {
        p[i] = k2[i] - k[i];
        q[i] = k1[i] - k3[i];
      }
      return std::exp(-a * (disp.q(p) + disp.q(q)));
    };
    ResonanceQuadrature rq(disp, k, 8.0, 8.0, 24);
    if (d == 2) {
      for (double w : {-1.3, -0.2, 0.0, 0.05, 0.9})
        EXPECT_NEAR(rq.density(w, W), kPi * kPi * std::exp(-2 * a * std::abs(w)) / (4 * a * disp.det()), 1e-11) << w;
    } else {
      EXPECT_NEAR(rq.density(0.0, W), kPi * kPi / (4 * a * a * disp.det()), 1e-10);
      // w > 0: 2 pi^2 e^{-2aw} int r^2 sqrt(r^2 + 2w) e^{-2 a r^2} dr / det
      const double w = 0.3;
      auto f = [&](double r) { return r * r * std::sqrt(r * r + 2 * w) * std::exp(-2 * a * r * r); };
      double ref = 2 * kPi * kPi * std::exp(-2 * a * w) / disp.det() *
                   boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, 8.0, 10, 1e-13);
      EXPECT_NEAR(rq.density(w, W), ref, 1e-8 * ref);
    }
  }
}

// Mollified T from the reduced quadrature against a plain 4-d tensor Gauss
// rule over (k1, k2) with k3 = k + k2 - k1.
TEST(ResonanceDensity, MatchesDirectTensorQuadrature) {
  const double eps = 0.4;
  const RVec k{0.3, -0.2, 0, 0};
  Density rho = gaussian_density();
  auto rq = quadrature_for(kAniso, rho, k, 24);
  const double r0 = rho.rho(k);
  auto weight = [&](const RVec& a, const RVec& b, const RVec& c) {
    return collision_weight(r0, rho.rho(a), rho.rho(b), rho.rho(c));
  };
  const double reduced = detail::mollified(rq, eps, weight);

  Rule g = composite_gauss(24, {-3.5, -1.75, 0.0, 1.75, 3.5});
  const std::size_t n = g.size();
  std::vector<double> r1(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) r1[i * n + j] = rho.rho(RVec{g.x[i], g.x[j], 0, 0});
  double direct = 0;
  const double q0 = kAniso.q(k);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) {
      RVec k1{g.x[a], g.x[b], 0, 0};
      for (std::size_t c = 0; c < n; ++c)
        for (std::size_t e = 0; e < n; ++e) {
          RVec k2{g.x[c], g.x[e], 0, 0};
          RVec k3{k[0] + k2[0] - k1[0], k[1] + k2[1] - k1[1], 0, 0};
          double om = q0 - kAniso.q(k1) + kAniso.q(k2) - kAniso.q(k3);
          double dl = std::exp(-0.5 * om * om / (eps * eps)) / (std::sqrt(kTwoPi) * eps);
          direct += g.w[a] * g.w[b] * g.w[c] * g.w[e] * dl *
                    collision_weight(r0, r1[a * n + b], r1[c * n + e], rho.rho(k3));
        }
    }
  EXPECT_NEAR(reduced, direct, 1e-7 * std::abs(direct));
}

TEST(LatticeKernel, TrivialCases) {
  auto s = TorusSpec::generic(2, 4, 1.0, 3);
  auto phi = profile_values(s, Profile::gaussian(0.5));
  EXPECT_EQ(finite_time_kernel_lattice(s, 0.0, 3, phi, 1.0), 0.0);
  std::vector<double> flat(s.size(), 0.7);
  EXPECT_NEAR(finite_time_kernel_lattice(s, 2.0, 3, flat, 1.0), 0.0, 1e-15);
  phi[0] = -1;
  EXPECT_THROW(finite_time_kernel_lattice(s, 1.0, 3, phi, 1.0), ValidationError);
}

TEST(LatticeKernel, EqualsLeadingSecondMomentCorrection) {
  auto s = TorusSpec::generic(1, 3, 1.0, 17);
  auto phi = profile_values(s, Profile::gaussian(0.6));
  for (std::size_t k = 0; k < s.size(); ++k) {
    double lead = second_moment_leading(s, 1.7, k, phi, 0.9);
    EXPECT_NEAR(finite_time_kernel_lattice(s, 1.7, k, phi, 0.9), lead - phi[k], 1e-14 * std::abs(lead));
  }
}

TEST(ContinuumKernel, TrivialCases) {
  auto s = TorusSpec::generic(2, 8, 1.0, 3);
  auto r = finite_time_kernel_continuum(s, 0.0, RVec{0.1, 0, 0, 0}, Profile::gaussian(0.5), 1.0, 12);
  EXPECT_EQ(r.value, 0.0);
  Density flat{[](const RVec&) { return 0.7; }, 1.0};
  auto c = finite_time_kernel_continuum(s, {3.0}, RVec{0.1, 0, 0, 0}, flat, 1.0, 8);
  EXPECT_EQ(c[0].value, 0.0);
}

TEST(ContinuumKernel, LatticeSumsConvergeToIt) {
  const Profile g = Profile::gaussian(0.15);
  std::vector<double> gaps;
  for (double L : {8.0, 16.0, 32.0}) {
    auto s = TorusSpec::generic(2, L, 1.0, 2024);
    auto phi = profile_values(s, g);
    const std::size_t k = s.rank(IVec{static_cast<int>(L / 8), 0, 0, 0});
    double lat = finite_time_kernel_lattice(s, 1.0, k, phi, 1.0);
    auto c = finite_time_kernel_continuum(s, 1.0, s.k_of(s.mode(k)), g, 1.0, 24);
    EXPECT_TRUE(c.converged) << c.rel_gap;
    gaps.push_back(std::abs(lat - c.value_fine) / std::abs(c.value_fine));
  }
  EXPECT_GT(gaps[0], 1e-2);
  EXPECT_LT(gaps[1], gaps[0]);
  EXPECT_LT(gaps[2], gaps[1]);
  EXPECT_LT(gaps[2], 1e-5);
}

TEST(ContinuumKernel, SincSquaredTendsToDeltaAtRateOne) {
  auto s = TorusSpec::generic(2, 8, 1.0, 2024);
  const RVec k{0.3, 0.1, 0, 0};
  const Profile g = Profile::gaussian();
  auto col = collision_operator(Dispersion::of(s), density_of(g, 2), k);
  ASSERT_FALSE(col.flagged);
  const double target = col.value / kinetic_time(1.0, 8, 2);
  std::vector<double> ts{10, 20, 40};
  auto ks = finite_time_kernel_continuum(s, ts, k, g, 1.0, 16);
  std::vector<double> gaps;
  for (std::size_t i = 0; i < ts.size(); ++i) gaps.push_back(std::abs(ks[i].value_fine / ts[i] - target));
  for (std::size_t i = 0; i + 1 < gaps.size(); ++i) {
    double rate = std::log2(gaps[i] / gaps[i + 1]);
    EXPECT_GE(rate, 0.7);
    EXPECT_LE(rate, 1.3);
  }
}

TEST(Sinc2, NormalizationIsPi) {
  EXPECT_NEAR(sinc2_normalization(), kPi, 1e-6);
  EXPECT_GT(std::abs(sinc2_normalization() - kPi * kPi), 1.0);
}

TEST(CollisionOperator, ConstantIsStationary) {
  Density flat{[](const RVec&) { return 2.0; }, 3.0};
  auto r = collision_operator(kAniso, flat, RVec{0.3, 0.1, 0, 0});
  EXPECT_LE(std::abs(r.value), 1e-12 * r.scale);
  EXPECT_GT(r.scale, 0.0);
}

TEST(CollisionOperator, RayleighJeansIsStationary) {
  Density rj{[](const RVec& q) { return 1.0 / (0.5 + q[0] * q[0] + 1.37 * q[1] * q[1] + 0.3 * q[0] - 0.2 * q[1]); },
             3.0};
  for (RVec k : {RVec{0.3, 0.1, 0, 0}, RVec{1.2, -0.7, 0, 0}}) {
    auto r = collision_operator(kAniso, rj, k);
    EXPECT_LE(std::abs(r.value), 1e-6 * r.scale);
    EXPECT_FALSE(r.flagged);
  }
}

TEST(CollisionOperator, MatchesCoareaAndLadderIsConsistent) {
  Density rho = gaussian_density();
  for (RVec k : {RVec{0.3, 0.1, 0, 0}, RVec{1.2, -0.7, 0, 0}}) {
    auto r = collision_operator(kAniso, rho, k);
    ASSERT_EQ(r.ladder.size(), 3u);
    EXPECT_FALSE(r.flagged);
    EXPECT_NEAR(r.value, collision_coarea(kAniso, rho, k, 24), 1e-7 * r.scale);
    DeltaScheme half;
    half.eps0 = r.eps0 / 2;
    EXPECT_LE(std::abs(collision_operator(kAniso, rho, k, half).value - r.value), r.residual);
  }
}

TEST(CollisionOperator, WideMollifierIsFlagged) {
  DeltaScheme s;
  s.eps0 = 0.5;
  auto r = collision_operator(kAniso, gaussian_density(), RVec{0.3, 0.1, 0, 0}, s);
  EXPECT_TRUE(r.flagged);
}

TEST(CollisionOperator, DimensionLimits) {
  Dispersion d1{1, {1.0}};
  EXPECT_THROW(collision_operator(d1, gaussian_density(), RVec{}), ValidationError);
  Dispersion d4{4, {1.0, 1.1, 1.2, 1.3}};
  Density rho = density_of(Profile::gaussian(), 4);
  EXPECT_THROW(collision_operator(d4, rho, RVec{}), BudgetExceeded);
}

TEST(DeltaScheme, JsonRoundTrip) {
  DeltaScheme s;
  s.eps0 = 0.01;
  s.m = 20;
  auto back = DeltaScheme::from_json(s.to_json());
  EXPECT_EQ(back.eps0, 0.01);
  EXPECT_EQ(back.m, 20);
  EXPECT_THROW(DeltaScheme::from_json({{"eps0", -1.0}}), ValidationError);
  EXPECT_THROW(DeltaScheme::from_json({{"shape", "box"}}), ValidationError);
}

TEST(KineticState, GridAndInterpolation) {
  auto st = KineticState::from_profile(kAniso, Profile::gaussian(), 2.2, 16);
  ASSERT_EQ(st.size(), 256u);
  for (std::size_t i = 0; i < st.size(); ++i) {
    const RVec& k = st.node(i);
    const RVec& m = st.node(st.size() - 1 - i);
    EXPECT_NEAR(k[0], -m[0], 1e-14);
    EXPECT_NEAR(k[1], -m[1], 1e-14);
  }
  for (RVec k : {RVec{0.123, -0.456, 0, 0}, RVec{1.9, 2.05, 0, 0}, RVec{-0.01, 0.7, 0, 0}})
    EXPECT_NEAR(st(k), std::exp(-kPi * (k[0] * k[0] + k[1] * k[1])), 1e-10);
  EXPECT_NEAR(st.mass(), 1.0, 1e-5);
  std::vector<double> bad(st.size(), 1.0);
  bad[7] = 0.0;
  EXPECT_THROW(st.set(bad), NumericalFailure);
}

TEST(Conservation, IntegralsOfT) {
  auto st = KineticState::from_density(kAniso, mixture, 2.2, 24);
  WkeOptions opt;
  auto T = collision_on_grid(st, opt);
  auto c = conservation_integrals(st, T);
  EXPECT_LE(std::abs(c.mass) / c.mass_scale, 1e-3);
  EXPECT_LE(std::abs(c.momentum[0]) / c.momentum_scale[0], 1e-3);
  EXPECT_LE(std::abs(c.momentum[1]) / c.momentum_scale[1], 1e-3);
  EXPECT_LE(std::abs(c.energy) / c.energy_scale, 1e-3);
}

TEST(Wke, ConstantStateIsUnchanged) {
  auto st = KineticState::from_density(kAniso, [](const RVec&) { return 0.8; }, 2.0, 8);
  auto tr = wke_evolve(st, 0.2, 0.1);
  ASSERT_EQ(tr.size(), 3u);
  for (std::size_t i = 0; i < st.size(); ++i) EXPECT_EQ(tr.back().values()[i], 0.8);
}

TEST(Wke, EulerStepIsPhiPlusDsT) {
  auto st = KineticState::from_profile(kAniso, Profile::gaussian(), 2.2, 10);
  WkeOptions opt;
  opt.m = 12;
  auto T = collision_on_grid(st, opt);
  auto next = wke_euler_step(st, 0.05, opt);
  for (std::size_t i = 0; i < st.size(); ++i) EXPECT_EQ(next.values()[i], st.values()[i] + 0.05 * T[i]);
  EXPECT_DOUBLE_EQ(next.time, 0.05);
}

TEST(Wke, MassDriftOverTenSteps) {
  auto st = wke_gaussian_preset(kAniso);
  auto tr = wke_evolve(st, 0.2, 0.02);
  ASSERT_EQ(tr.size(), 11u);
  EXPECT_LE(std::abs(tr.back().mass() - st.mass()) / st.mass(), 1e-6);
  EXPECT_LE(std::abs(tr.back().energy() - st.energy()) / st.energy(), 1e-5);
  // the Gaussian is not stationary: the centre fills in
  EXPECT_GT(tr.back()(RVec{}), st(RVec{}) + 1e-3);
}

TEST(Wke, NegativeDensityAborts) {
  auto st = KineticState::from_profile(kAniso, Profile::gaussian(), 2.2, 8);
  WkeOptions opt;
  opt.m = 8;
  EXPECT_THROW(wke_evolve(st, 200.0, 200.0, opt), NumericalFailure);
}

TEST(CollisionCsv, Header) {
  auto path = std::filesystem::temp_directory_path() / "wke_collision.csv";
  write_collision_csv(path.string(), 2, {{RVec{0.5, -0.5, 0, 0}, 1.25, 1e-9}});
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "k0,k1,value,residual");
  std::getline(in, line);
  EXPECT_EQ(line.substr(0, 9), "0.5,-0.5,");
  std::filesystem::remove(path);
}
