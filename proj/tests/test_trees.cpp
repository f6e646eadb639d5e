#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/multiprecision/cpp_int.hpp>
#include <random>

#include "wke/trees.hpp"

using namespace wke;

namespace {

// F_j(s) = int_0^s e^{-2 pi i u Omega_j} F_{j-1}(u) du, F_0 = 1; F_n(t) is the
// iterated time integral over 0 <= t_1 <= ... <= t_n <= t.
cplx iterated_integral(const std::vector<double>& om, int j, double s) {
  if (j == 0) return 1.0;
  auto f = [&](double u) { return std::exp(cplx(0, -kTwoPi * u * om[j - 1])) * iterated_integral(om, j - 1, u); };
  using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
  return GK::integrate(f, 0.0, s, 6, 1e-11);
}

Field field_of(const TorusSpec& s, std::uint64_t seed) {
  return sample_initial(s, Profile::gaussian(), SeedPlan{seed}, 0).amps;
}

}  // namespace

TEST(TreeIndex, Counts) {
  EXPECT_EQ(enumerate_indices(0).size(), 1u);
  auto one = enumerate_indices(1);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].ell, std::vector<int>{1});
  EXPECT_EQ(enumerate_indices(2).size(), 3u);
  EXPECT_EQ(enumerate_indices(3).size(), 15u);
  EXPECT_EQ(enumerate_indices(4).size(), 105u);
  EXPECT_THROW(enumerate_indices(5), BudgetExceeded);
  EXPECT_EQ(enumerate_indices(5, 5).size(), 945u);
}

TEST(TreeIndex, SignatureSumIsOne) {
  for (int n = 0; n <= 4; ++n) {
    int s = 0;
    for (auto& idx : enumerate_indices(n)) s += idx.signature();
    EXPECT_EQ(s, 1) << n;
  }
  auto all = enumerate_indices(3);
  for (std::size_t i = 0; i + 1 < all.size(); ++i) EXPECT_LT(all[i].ell, all[i + 1].ell);
}

TEST(Simplex, ClosedFormExamples) {
  EXPECT_NEAR(std::abs(simplex_oscillatory_integral({0.0}, 2.5) - 2.5), 0, 1e-15);
  EXPECT_NEAR(std::abs(simplex_oscillatory_integral({1.0}, 1.0)), 0, 1e-15);
  for (int n = 1; n <= 5; ++n) {
    double t = 1.7;
    cplx v = simplex_oscillatory_integral(std::vector<double>(n, 0.0), t);
    EXPECT_NEAR(std::abs(v - std::pow(t, n) / std::tgamma(n + 1.0)), 0, 1e-14);
  }
  EXPECT_EQ(simplex_oscillatory_integral({0.3, 0.2}, 0.0), cplx{});
}

TEST(Simplex, MatchesAdaptiveQuadrature) {
  std::mt19937_64 g(3);
  std::uniform_real_distribution<double> u(-2, 2);
  std::vector<std::vector<double>> cases;
  for (int n = 1; n <= 3; ++n)
    for (int r = 0; r < 6; ++r) {
      std::vector<double> om(n);
      for (auto& x : om) x = u(g);
      cases.push_back(om);
    }
  // clustered and confluent node sets
  cases.push_back({1e-7, -1e-7});
  cases.push_back({0.5, -0.5 + 2e-5, 1e-6});
  cases.push_back({0.3, 1e-5, -1e-5});
  cases.push_back({0.0, 0.0, 0.7});
  cases.push_back({2e-4, 3e-4, -5e-4});
  for (auto& om : cases) {
    double t = 1.3;
    cplx ref = iterated_integral(om, static_cast<int>(om.size()), t);
    cplx v = simplex_oscillatory_integral(om, t);
    EXPECT_LT(std::abs(v - ref), 1e-9) << om.size() << " " << om[0] << " " << (om.size() > 1 ? om[1] : 0) << " " << (om.size() > 2 ? om[2] : 0) << " v=" << v << " ref=" << ref;
  }
}

TEST(Simplex, DividedDifferenceMatchesExpAtDistinctPoints) {
  std::vector<cplx> x{cplx(0, 1), cplx(0, -2), cplx(0, 0.5)};
  cplx expect{};
  for (std::size_t j = 0; j < 3; ++j) {
    cplx den = 1;
    for (std::size_t l = 0; l < 3; ++l)
      if (l != j) den *= x[j] - x[l];
    expect += std::exp(x[j]) / den;
  }
  EXPECT_NEAR(std::abs(exp_divided_difference(x) - expect), 0, 1e-15);
}

TEST(EvaluateJ, ZeroAndFirstOrder) {
  auto s = TorusSpec::generic(1, 3, 1.0, 5);
  auto a = field_of(s, 1);
  const double lam = 1.4, t = 0.8;
  for (std::size_t k = 0; k < s.size(); ++k) {
    EXPECT_EQ(evaluate_J(s, TreeIndex{0, {}}, t, k, a, lam), a[k]);
    EXPECT_EQ(evaluate_J(s, TreeIndex{1, {1}}, 0.0, k, a, lam), cplx{});
    // literal first Duhamel term: (lambda^2/L^{2d}) sum a a-bar a (1 - e^{-2 pi i t Omega})/(2 pi Omega)
    const double c = lam * lam / (s.Ld() * s.Ld());
    cplx lit{};
    for (std::size_t k1 = 0; k1 < s.size(); ++k1)
      for (std::size_t k2 = 0; k2 < s.size(); ++k2) {
        long k3 = s.rank(s.mode(k) - s.mode(k1) + s.mode(k2));
        if (k3 < 0) continue;
        double om = s.omega(k, k1, k2, k3);
        cplx f = std::abs(om) < 1e-14 ? cplx(0, t) : (1.0 - std::exp(cplx(0, -kTwoPi * t * om))) / (kTwoPi * om);
        lit += c * a[k1] * std::conj(a[k2]) * a[k3] * f;
      }
    EXPECT_NEAR(std::abs(evaluate_J(s, TreeIndex{1, {1}}, t, k, a, lam) - lit), 0, 1e-14);
  }
  for (int n = 2; n <= 3; ++n) EXPECT_EQ(evaluate_J_level(s, n, 0.0, 0, a, lam), cplx{});
}

TEST(Assignments, LevelSumInvariantAndDegeneracy) {
  auto s = TorusSpec::generic(1, 2, 1.0, 6);
  for (auto& idx : enumerate_indices(2)) {
    std::size_t k = s.rank(IVec{1});
    long visits = 0;
    for_each_assignment(s, idx, k, AssignmentFilter::all, [&](const Assignment& as) {
      ++visits;
      for (int j = 0; j <= idx.n; ++j) {
        IVec sum{};
        const auto& lv = as.levels[j];
        for (std::size_t m = 0; m < lv.size(); ++m)
          sum = m % 2 == 0 ? sum + s.mode(lv[m]) : sum - s.mode(lv[m]);
        EXPECT_EQ(sum, s.mode(k));
      }
      if (as.all_degenerate) {
        for (double om : as.omega) EXPECT_NEAR(om, 0.0, 1e-15);
      }
    });
    EXPECT_GT(visits, 0);
  }
  EXPECT_THROW(for_each_assignment(s, TreeIndex{2, {1, 1}}, 0, AssignmentFilter::all, [](const Assignment&) {}, 10.0),
               BudgetExceeded);
}

// Independent restricted sums: every level contributes the two degenerate
// configurations (m,q,q) and (q,q,m); the coincident q = m case is one
// assignment counted with multiplicity 2.
TEST(EvaluateD, FirstOrderClosedFormAndRestrictedSum) {
  auto s = TorusSpec::generic(1, 2, 1.0, 7);
  auto a = field_of(s, 2);
  const double lam = 1.1, t = 0.6, c = lam * lam / (s.Ld() * s.Ld());
  for (std::size_t k = 0; k < s.size(); ++k) {
    double X = 0;
    for (auto& v : a) X += std::norm(v);
    cplx closed = 2.0 * t * cplx(0, c) * a[k] * X;
    EXPECT_NEAR(std::abs(evaluate_D(s, TreeIndex{1, {1}}, t, k, a, lam) - closed), 0, 1e-14);
    cplx restricted{};
    s.for_each_triple(k, [&](std::size_t k1, std::size_t k2, std::size_t k3) {
      int mult = (k1 == k) + (k3 == k);
      if (mult) restricted += static_cast<double>(mult) * cplx(0, c) * a[k1] * std::conj(a[k2]) * a[k3] * t;
    });
    EXPECT_NEAR(std::abs(restricted - closed), 0, 1e-14);
  }
}

TEST(EvaluateD, SecondOrderRestrictedSum) {
  auto s = TorusSpec::generic(1, 2, 1.0, 8);
  auto a = field_of(s, 3);
  const double lam = 0.9, t = 1.3, c = lam * lam / (s.Ld() * s.Ld());
  const std::size_t N = s.size();
  for (std::size_t k = 0; k < N; ++k)
    for (auto& idx : enumerate_indices(2)) {
      // level 2 -> 1: k -> (k1,k2,k3); level 1 -> 0 expands position ell_1
      cplx restricted{};
      s.for_each_triple(k, [&](std::size_t k1, std::size_t k2, std::size_t k3) {
        int m1 = (k1 == k) + (k3 == k);
        if (!m1) return;
        std::vector<std::size_t> lv{k1, k2, k3};
        std::size_t pos = idx.ell[0] - 1;
        std::size_t m = lv[pos];
        s.for_each_triple(m, [&](std::size_t p1, std::size_t p2, std::size_t p3) {
          int m2 = (p1 == m) + (p3 == m);
          if (!m2) return;
          std::vector<std::size_t> leaves;
          for (std::size_t i = 0; i < 3; ++i) {
            if (i == pos) {
              leaves.insert(leaves.end(), {p1, p2, p3});
            } else {
              leaves.push_back(lv[i]);
            }
          }
          cplx prod = 1;
          for (std::size_t i = 0; i < leaves.size(); ++i) prod *= i % 2 == 0 ? a[leaves[i]] : std::conj(a[leaves[i]]);
          restricted += static_cast<double>(m1 * m2) * prod * t * t / 2.0;
        });
      });
      restricted *= cplx(0, c) * cplx(0, c) * static_cast<double>(idx.signature());
      cplx d = evaluate_D(s, idx, t, k, a, lam);
      EXPECT_NEAR(std::abs(restricted - d), 0, 1e-13 * (1 + std::abs(d)));
      // and through the library's own degenerate enumeration
      cplx lib{};
      for_each_assignment(s, idx, k, AssignmentFilter::all_degenerate, [&](const Assignment& as) {
        lib += static_cast<double>(as.multiplicity) * leaf_product(as.levels[0], a) *
               simplex_oscillatory_integral(as.omega, t);
      });
      lib *= tree_prefactor(s, 2, lam) * static_cast<double>(idx.signature());
      EXPECT_NEAR(std::abs(lib - d), 0, 1e-13 * (1 + std::abs(d)));
    }
}

TEST(Cancellation, RationalCoefficientIdentity) {
  using boost::multiprecision::cpp_rational;
  for (int S = 1; S <= 20; ++S) {
    cpp_rational sum = 0, fact_j = 1;
    for (int j = 0; j <= S; ++j) {
      if (j > 0) fact_j *= j;
      cpp_rational fs = 1;
      for (int i = 2; i <= S - j; ++i) fs *= i;
      cpp_rational term = cpp_rational(1) / (fs * fact_j);
      sum += (j % 2 == 0) ? term : cpp_rational(-term);
    }
    EXPECT_EQ(sum, 0) << S;
  }
  cplx i(0, 1);
  EXPECT_EQ(i * i / 2.0 + 1.0 + i * i / 2.0, cplx{});
}

TEST(Cancellation, FieldLevel) {
  TorusSpec s(1, 2, {1.37}, 1.0);
  auto phi = profile_values(s, Profile::gaussian());
  for (int S : {1, 2, 3}) {
    auto r = degenerate_cancellation(S, s, phi, 0.9, s.rank(IVec{1}), 1.3);
    EXPECT_GT(r.scale, 0);
    EXPECT_LE(std::abs(r.sum), 1e-12 * r.scale) << S;
  }
  EXPECT_THROW(degenerate_cancellation(5, s, phi, 1.0, 0, 1.0), BudgetExceeded);
}

TEST(Correlation, LowOrders) {
  auto s = TorusSpec::generic(1, 2, 1.0, 9);
  auto phi = profile_values(s, Profile::gaussian(0.8));
  const double lam = 1.2, t = 0.7, c = lam * lam / (s.Ld() * s.Ld());
  for (std::size_t k = 0; k < s.size(); ++k) {
    cplx c00 = correlation(s, TreeIndex{0, {}}, TreeIndex{0, {}}, t, k, phi, lam);
    EXPECT_NEAR(std::abs(c00 - phi[k]), 0, 1e-15);
    // only the degenerate assignments (k,q,q) and (q,q,k) carry charge +k
    double sum = 0;
    for (double p : phi) sum += p;
    cplx expect = cplx(0, -c) * t * phi[k] * (2 * sum - phi[k]);
    cplx c01 = correlation(s, TreeIndex{0, {}}, TreeIndex{1, {1}}, t, k, phi, lam);
    EXPECT_NEAR(std::abs(c01 - expect), 0, 1e-14);
  }
  EXPECT_THROW(correlation(s, TreeIndex{3, {1, 1, 1}}, TreeIndex{2, {1, 1}}, t, 0, phi, lam), BudgetExceeded);
}

TEST(Correlation, FirstOrderMatchesMonteCarlo) {
  auto s = TorusSpec::generic(1, 2, 1.0, 10);
  auto phi = profile_values(s, Profile::gaussian(0.9));
  const double lam = 1.0, t = 0.8;
  const std::size_t k = s.rank(IVec{1});
  TreeIndex one{1, {1}};
  cplx exact = correlation(s, one, one, t, k, phi, lam);
  SeedPlan plan{77};
  const int M = 100000;
  double mean = 0, m2 = 0;
  for (int m = 0; m < M; ++m) {
    auto a = sample_initial(s, phi, plan, m).amps;
    double v = std::norm(evaluate_J(s, one, t, k, a, lam));
    double d = v - mean;
    mean += d / (m + 1);
    m2 += d * (v - mean);
  }
  double se = std::sqrt(m2 / (M - 1) / M);
  EXPECT_NEAR(exact.imag(), 0, 1e-15);
  EXPECT_LE(std::abs(mean - exact.real()), 4 * se);
}

TEST(Correlation, GaussianModelFirstOrderMatchesMonteCarlo) {
  auto s = TorusSpec::generic(1, 2, 1.0, 10);
  auto phi = profile_values(s, Profile::gaussian(0.9));
  const double lam = 1.0, t = 0.8;
  const std::size_t k = s.rank(IVec{0});
  TreeIndex one{1, {1}};
  cplx exact = correlation(s, one, one, t, k, phi, lam, PhaseModel::gaussian);
  SeedPlan plan{78, PhaseModel::gaussian};
  const int M = 100000;
  double mean = 0, m2 = 0;
  for (int m = 0; m < M; ++m) {
    auto a = sample_initial(s, phi, plan, m).amps;
    double v = std::norm(evaluate_J(s, one, t, k, a, lam));
    double d = v - mean;
    mean += d / (m + 1);
    m2 += d * (v - mean);
  }
  double se = std::sqrt(m2 / (M - 1) / M);
  EXPECT_LE(std::abs(mean - exact.real()), 4 * se);
  cplx uniform = correlation(s, one, one, t, k, phi, lam);
  EXPECT_GT(exact.real(), uniform.real());
}

TEST(Pairings, Counts) {
  EXPECT_EQ(enumerate_pairings(0, 0).size(), 1u);
  EXPECT_EQ(enumerate_pairings(1, 1).size(), 6u);
  EXPECT_EQ(enumerate_pairings(1, 2).size(), 24u);
  for (auto& psi : enumerate_pairings(2, 1)) {
    for (int j = 1; j <= static_cast<int>(psi.size()); ++j) {
      int pj = psi[j - 1];
      EXPECT_NE(pj, j);
      EXPECT_EQ(psi[pj - 1], j);
      EXPECT_EQ(combined_parity(2, pj), -combined_parity(2, j));
    }
  }
}

TEST(SecondMoment, TrivialLimits) {
  auto s = TorusSpec::generic(1, 3, 1.0, 11);
  auto phi = profile_values(s, Profile::gaussian());
  for (std::size_t k = 0; k < s.size(); ++k) {
    EXPECT_EQ(second_moment_expansion(s, 0.0, k, phi, 1.0, 2), phi[k]);
    EXPECT_EQ(second_moment_expansion(s, 1.0, k, phi, 0.0, 2), phi[k]);
    EXPECT_EQ(second_moment_expansion(s, 1.0, k, phi, 1.0, 0), phi[k]);
  }
  EXPECT_THROW(second_moment_expansion(s, 1.0, 0, phi, 1.0, 1), ValidationError);
}

TEST(SecondMoment, DegenerateCorrectionDecays) {
  std::vector<double> rel;
  for (double L : {4.0, 8.0, 16.0}) {
    TorusSpec s(1, L, {1.41421356}, 1.0);
    auto phi = profile_values(s, Profile::gaussian(0.7));
    std::size_t k = s.rank(IVec{static_cast<int>(L / 4)});
    double exact = second_moment_expansion(s, 1.0, k, phi, 1.0, 2);
    double lead = second_moment_leading(s, 1.0, k, phi, 1.0);
    rel.push_back(std::abs(exact - lead) / std::abs(lead - phi[k]));
  }
  EXPECT_LT(rel[1], rel[0]);
  EXPECT_LT(rel[2], rel[1]);
  EXPECT_LT(rel[2], 0.5 * rel[0]);
}

TEST(TreesCsv, Writes) {
  auto s = TorusSpec::generic(1, 2, 1.0, 12);
  auto phi = profile_values(s, Profile::gaussian());
  auto rows = correlation_table(s, 0, 2, 0.5, 0, phi, 1.0);
  EXPECT_EQ(rows.size(), 1u + 2u + 1u + 3u + 3u);
  auto path = testing::TempDir() + "corr.csv";
  write_correlation_csv(path, rows);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "n,ell,n_prime,ell_prime,re,im");
}

TEST(Correlation, TargetedExpansionMatchesFull) {
  auto s = TorusSpec::generic(2, 2, 1.0, 13);
  auto phi = profile_values(s, Profile::gaussian(0.9));
  const std::size_t k = s.rank(IVec{1, 0});
  const ChargeMap root{{k, 1}};
  for (auto model : {PhaseModel::uniform, PhaseModel::gaussian})
    for (int n = 1; n <= 2; ++n)
      for (auto& idx : enumerate_indices(n)) {
        auto J0 = expand_tree(s, TreeIndex{0, {}}, 1.1, k, phi, 0.8, model);
        auto full = expand_tree(s, idx, 1.1, k, phi, 0.8, model);
        auto part = expand_tree(s, idx, 1.1, k, phi, 0.8, model, AssignmentFilter::all, kDefaultTreeBudget, &root);
        cplx a = expectation(full, J0, phi), b = expectation(part, J0, phi);
        EXPECT_GT(std::abs(a), 0);
        EXPECT_NEAR(std::abs(a - b), 0, 1e-14 * std::abs(a));
      }
}

// Growth of the lambda^4 correlations between t and 2t, in the window
// 1 << t << L^d. The modes sit away from sign changes of the collision term,
// where the bounded non-resonant part would dominate.
TEST(Correlation, OrderFourGrowsLinearlyInTime) {
  struct Case {
    double L, cutoff, width;
    int kx;
    double t;
  };
  for (auto c : {Case{24, 0.4, 0.25, 3, 4.0}, Case{24, 0.4, 0.25, 3, 8.0}, Case{32, 0.3, 0.2, 4, 8.0}}) {
    auto s = TorusSpec::generic(2, c.L, c.cutoff, 2024);
    auto phi = profile_values(s, Profile::gaussian(c.width));
    const std::size_t k = s.rank(IVec{c.kx, 0});
    auto total = [&](double t) {
      cplx sum{};
      for (auto& r : correlation_table(s, 2, 2, t, k, phi, 1.0)) sum += r.value;
      return sum;
    };
    cplx a = total(c.t), b = total(2 * c.t);
    EXPECT_NEAR(a.imag(), 0, 1e-12 * std::abs(a));
    double ratio = std::abs(b) / std::abs(a);
    EXPECT_GE(ratio, 1.5) << c.L << " " << c.t;
    EXPECT_LE(ratio, 2.5) << c.L << " " << c.t;
  }
}
