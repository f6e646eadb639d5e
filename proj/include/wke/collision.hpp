#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "wke/core.hpp"
#include "wke/lattice.hpp"
#include "wke/quadrature.hpp"
#include "wke/spectra.hpp"

namespace wke {

inline double kinetic_time(double lambda, double L, int d) {
  require(lambda > 0 && L > 0 && d >= 1, "kinetic time needs lambda, L > 0");
  return std::pow(L, 2.0 * d) / (2.0 * std::pow(lambda, 4));
}

// The continuum side of a torus: dimension and the coefficients of Q.
struct Dispersion {
  int d = 3;
  std::vector<double> beta;

  static Dispersion of(const TorusSpec& spec) { return {spec.d(), spec.beta()}; }

  double q(const RVec& k) const {
    double s = 0;
    for (int i = 0; i < d; ++i) s += beta[i] * k[i] * k[i];
    return s;
  }

  double beta_max() const { return *std::max_element(beta.begin(), beta.end()); }

  double det() const {
    double p = 1;
    for (double b : beta) p *= b;
    return p;
  }
};

// ---------------------------------------------------------------------------
// Sphere quadrature

struct SphereRule {
  std::vector<RVec> dir;
  std::vector<double> w;
};

// d = 2: m-point trapezoid on the circle. d >= 3: polar angles in x = cos(theta)
// with weight (1 - x^2)^{(j-1)/2}: Gauss-Legendre for odd j, Gauss-Chebyshev of
// the second kind (times (1 - x^2)^{(j-2)/2}) for even j. Azimuth: 2m-point trapezoid.
inline SphereRule sphere_rule(int d, int m) {
  require(d >= 2 && d <= kMaxDim, "sphere rule needs 2 <= d <= 4");
  require(m >= 2, "sphere rule needs at least two nodes");
  const int na = d == 2 ? m : 2 * m;
  const int polar = d - 2;
  std::vector<Rule> pol(polar);
  for (int a = 0; a < polar; ++a) {
    const int j = d - 2 - a;  // power of sin(theta_a) in the area element
    Rule r;
    if (j % 2 == 1) {
      r = gauss_legendre(m, -1.0, 1.0);
      for (int i = 0; i < m; ++i) r.w[i] *= std::pow(1 - r.x[i] * r.x[i], (j - 1) / 2);
    } else {
      r.x.resize(m);
      r.w.resize(m);
      for (int i = 0; i < m; ++i) {
        double th = kPi * (i + 1) / (m + 1);
        r.x[i] = std::cos(th);
        r.w[i] = kPi / (m + 1) * std::pow(std::sin(th), 2) * std::pow(1 - r.x[i] * r.x[i], (j - 2) / 2);
      }
    }
    pol[a] = std::move(r);
  }
  SphereRule out;
  std::vector<int> ix(polar, 0);
  while (true) {
    RVec base{};
    double wt = 1, sprod = 1;
    // x_0 = cos th_0, x_1 = sin th_0 cos th_1, ..., the last two from the azimuth
    for (int a = 0; a < polar; ++a) {
      double c = pol[a].x[ix[a]];
      base[a] = sprod * c;
      wt *= pol[a].w[ix[a]];
      sprod *= std::sqrt(std::max(0.0, 1 - c * c));
    }
    for (int t = 0; t < na; ++t) {
      double ph = kTwoPi * (t + 0.5) / na;
      RVec u = base;
      u[d - 2] = sprod * std::cos(ph);
      u[d - 1] = sprod * std::sin(ph);
      out.dir.push_back(u);
      out.w.push_back(wt * kTwoPi / na);
    }
    int a = polar - 1;
    while (a >= 0 && ++ix[a] == m) ix[a--] = 0;
    if (a < 0) break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Resonance density
//
// With p = k2 - k and q = k1 - k3 (so k1 = k + (p+q)/2, k2 = k + p,
// k3 = k + (p-q)/2) the constraint Sigma = 0 is built in, dk1 dk2 = 2^{-d} dp dq,
// and Omega = (Q(p) - Q(q))/2. In beta-scaled polar coordinates |p~| = P,
// |q~| = r, so delta(Omega - w) removes one radius exactly:
//   w >= 0:  F(w) = c int dr r^{d-1} P^{d-2} A(r, P),  P = sqrt(r^2 + 2w)
//   w <  0:  F(w) = c int dP P^{d-1} r^{d-2} A(r, P),  r = sqrt(P^2 - 2w)
// with c = 2^{-d}/det(beta) and A the integral of the weight over both spheres.

inline constexpr double kDefaultContinuumBudget = 4e8;

class ResonanceQuadrature {
 public:
  // p_max, q_max bound |p~| and |q~| where the weight can be nonzero.
  ResonanceQuadrature(const Dispersion& disp, const RVec& k, double p_max, double q_max, int m,
                      double budget = kDefaultContinuumBudget)
      : disp_(disp), k_(k), p_max_(p_max), q_max_(q_max) {
    require(disp.d >= 2, "continuum resonance quadrature needs d >= 2 (d = 1 has no resonant surface)");
    require(m >= 4, "continuum resolution must be at least 4");
    double sphere_nodes = disp.d == 2 ? m : std::pow(m, disp.d - 2) * 2 * m;
    double work = (disp.d == 2 ? 4.0 : 6.0) * m * sphere_nodes * sphere_nodes;
    if (disp.d > 3 && budget <= kDefaultContinuumBudget)
      throw BudgetExceeded("continuum quadrature above d = 3 needs an explicit budget override", work, budget);
    check_budget(work, budget, "continuum resonance quadrature");
    SphereRule s = sphere_rule(disp.d, m);
    for (std::size_t i = 0; i < s.dir.size(); ++i) {
      RVec u{};
      for (int a = 0; a < disp.d; ++a) u[a] = s.dir[i][a] / std::sqrt(disp.beta[a]);
      dirs_.push_back(u);
      wdir_.push_back(s.w[i]);
    }
    // d >= 3: grade toward 0, where the factor P^{d-2} or r^{d-2} loses smoothness
    if (disp.d == 2)
      radial_ = {0.0, 0.25, 0.5, 0.75, 1.0};
    else
      radial_ = {0.0, 1.0 / 64, 1.0 / 16, 1.0 / 4, 0.5, 0.75, 1.0};
    m_ = m;
  }

  double omega_min() const { return -0.5 * q_max_ * q_max_; }
  double omega_max() const { return 0.5 * p_max_ * p_max_; }

  // F(w) for the weight W(k1, k2, k3).
  template <class W>
  double density(double w, W&& weight) const {
    const int d = disp_.d;
    const bool pos = w >= 0;
    const double other_max = pos ? p_max_ : q_max_;
    // stop where the partner radius leaves its ball, so F stays smooth in w
    const double cut = other_max * other_max - 2 * std::abs(w);
    if (cut <= 0) return 0.0;
    const double outer = std::min(pos ? q_max_ : p_max_, std::sqrt(cut));
    std::vector<double> br(radial_.size());
    for (std::size_t i = 0; i < br.size(); ++i) br[i] = radial_[i] * outer;
    Rule rr = composite_gauss(m_, br);
    double total = 0;
    for (std::size_t ir = 0; ir < rr.size(); ++ir) {
      const double x = rr.x[ir];
      const double y2 = pos ? x * x + 2 * w : x * x - 2 * w;
      const double y = std::sqrt(std::max(0.0, y2));
      const double P = pos ? y : x, r = pos ? x : y;
      const double radial = rr.w[ir] * std::pow(x, d - 1) * (d == 2 ? 1.0 : std::pow(y, d - 2));
      if (radial == 0) continue;
      double acc = 0;
      for (std::size_t i = 0; i < dirs_.size(); ++i) {
        RVec p{}, k2{};
        for (int a = 0; a < d; ++a) {
          p[a] = P * dirs_[i][a];
          k2[a] = k_[a] + p[a];
        }
        double inner = 0;
        for (std::size_t j = 0; j < dirs_.size(); ++j) {
          RVec k1{}, k3{};
          for (int a = 0; a < d; ++a) {
            double qa = r * dirs_[j][a];
            k1[a] = k_[a] + 0.5 * (p[a] + qa);
            k3[a] = k_[a] + 0.5 * (p[a] - qa);
          }
          inner += wdir_[j] * weight(k1, k2, k3);
        }
        acc += wdir_[i] * inner;
      }
      total += radial * acc;
    }
    return total * std::pow(0.5, d) / disp_.det();
  }

 private:
  Dispersion disp_;
  RVec k_;
  double p_max_, q_max_;
  int m_ = 0;
  std::vector<RVec> dirs_;
  std::vector<double> wdir_;
  std::vector<double> radial_;
};

// A density rho(k) together with the radius beyond which it is negligible.
struct Density {
  std::function<double(const RVec&)> rho;
  double radius = 1.0;
};

inline Density density_of(const Profile& profile, int d) {
  return {[profile, d](const RVec& k) { return profile(k, d); }, profile.support_radius()};
}

inline ResonanceQuadrature quadrature_for(const Dispersion& disp, const Density& rho, const RVec& k, int m,
                                          double budget = kDefaultContinuumBudget) {
  double kn = 0;
  for (int a = 0; a < disp.d; ++a) kn += k[a] * k[a];
  const double sb = std::sqrt(disp.beta_max());
  return ResonanceQuadrature(disp, k, sb * (std::sqrt(kn) + rho.radius), sb * 2.0 * rho.radius, m, budget);
}

// rho rho1 rho2 rho3 [1/rho - 1/rho1 + 1/rho2 - 1/rho3], expanded so that zeros of
// rho are harmless.
inline double collision_weight(double r0, double r1, double r2, double r3) {
  return r1 * r2 * r3 - r0 * r2 * r3 + r0 * r1 * r3 - r0 * r1 * r2;
}

inline double collision_scale_weight(double r0, double r1, double r2, double r3) {
  return std::abs(r1 * r2 * r3) + std::abs(r0 * r2 * r3) + std::abs(r0 * r1 * r3) + std::abs(r0 * r1 * r2);
}

// ---------------------------------------------------------------------------
// Lattice and continuum finite-time kernels

// (2 lambda^4 / L^{4d}) sum_{Sigma=0} G(phi) |sin(pi t Omega)/(pi Omega)|^2
inline double finite_time_kernel_lattice(const TorusSpec& spec, double t, std::size_t k, const std::vector<double>& phi,
                                         double lambda) {
  require(phi.size() == spec.size(), "profile length does not match the lattice");
  for (double v : phi) require(v >= 0 && std::isfinite(v), "profile must be nonnegative and finite");
  if (t == 0) return 0.0;
  double s = 0;
  const double p0 = phi[k];
  spec.for_each_triple(k, [&](std::size_t a, std::size_t b, std::size_t c) {
    double g = collision_weight(p0, phi[a], phi[b], phi[c]);
    if (g != 0) s += g * sinc2(t, spec.omega(k, a, b, c));
  });
  return 2.0 * std::pow(lambda, 4) / std::pow(spec.Ld(), 4) * s;
}

// F(w) tabulated on graded Gauss panels on each side of 0 (F is only C^1
// across w = 0), so that integrals against narrow kernels can interpolate it.
class ResonanceProfile {
 public:
  ResonanceProfile(const Dispersion& disp, const Density& rho, const RVec& k, int m,
                   double budget = kDefaultContinuumBudget)
      : quad_(quadrature_for(disp, rho, k, m, budget)) {
    const double r0 = rho.rho(k);
    auto weight = [&](const RVec& a, const RVec& b, const RVec& c) {
      return collision_weight(r0, rho.rho(a), rho.rho(b), rho.rho(c));
    };
    const int n = std::max(16, m);
    auto side = [&](double extent, double sign) {
      std::vector<double> br{0.0};
      for (int j = 7; j >= 0; --j) br.push_back(extent / std::pow(2.0, j));
      for (std::size_t p = 0; p + 1 < br.size(); ++p) {
        Rule g = gauss_legendre(n, br[p], br[p + 1]);
        Panel pan;
        pan.lo = sign > 0 ? br[p] : -br[p + 1];
        pan.hi = sign > 0 ? br[p + 1] : -br[p];
        std::vector<double> xs(n);
        for (int i = 0; i < n; ++i) xs[i] = sign > 0 ? g.x[i] : -g.x[n - 1 - i];
        pan.interp = Barycentric(xs);
        pan.f.resize(n);
        for (int i = 0; i < n; ++i) pan.f[i] = quad_.density(xs[i], weight);
        panels_.push_back(std::move(pan));
      }
    };
    side(quad_.omega_max(), 1.0);
    side(-quad_.omega_min(), -1.0);
    f0_ = quad_.density(0.0, weight);
  }

  double at_zero() const { return f0_; }

  double operator()(double w) const {
    for (auto& p : panels_)
      if (w >= p.lo && w <= p.hi) return p.interp(w, p.f.data());
    return 0.0;
  }

  // int F(w) g(w) dw, each panel split into sub-panels no wider than h.
  template <class G>
  double integrate(G&& g, double h) const {
    double s = 0;
    const Rule& ref = gauss_legendre_ref(16);
    for (auto& p : panels_) {
      int sub = std::max(1, static_cast<int>(std::ceil((p.hi - p.lo) / h)));
      double dh = (p.hi - p.lo) / sub;
      for (int j = 0; j < sub; ++j) {
        double a = p.lo + j * dh;
        for (std::size_t i = 0; i < ref.size(); ++i) {
          double x = a + 0.5 * dh * (ref.x[i] + 1.0);
          s += 0.5 * dh * ref.w[i] * p.interp(x, p.f.data()) * g(x);
        }
      }
    }
    return s;
  }

  // int F(w) |sin(pi t w)/(pi w)|^2 dw
  double sinc2_integral(double t) const {
    if (t == 0) return 0.0;
    return integrate([t](double w) { return sinc2(t, w); }, 0.5 / t);
  }

 private:
  struct Panel {
    double lo, hi;
    Barycentric interp;
    std::vector<double> f;
  };
  ResonanceQuadrature quad_;
  std::vector<Panel> panels_;
  double f0_ = 0;
};

struct KernelResult {
  double value = 0;       // at resolution m
  double value_fine = 0;  // at resolution 2m
  double rel_gap = 0;
  bool converged = true;
};

// (2 lambda^4/L^{2d}) int G(phi) delta(Sigma) |sin(pi t Omega)/(pi Omega)|^2 dk1 dk2 dk3,
// the continuum counterpart of finite_time_kernel_lattice on the same torus.
inline std::vector<KernelResult> finite_time_kernel_continuum(const TorusSpec& spec, const std::vector<double>& ts,
                                                              const RVec& k, const Density& rho, double lambda,
                                                              int m = 24, double tol = 1e-5,
                                                              double budget = kDefaultContinuumBudget) {
  const Dispersion disp = Dispersion::of(spec);
  const double pre = 2.0 * std::pow(lambda, 4) / std::pow(spec.Ld(), 2);
  ResonanceProfile coarse(disp, rho, k, m, budget), fine(disp, rho, k, 2 * m, budget * 64);
  std::vector<KernelResult> out;
  for (double t : ts) {
    KernelResult r;
    r.value = pre * coarse.sinc2_integral(t);
    r.value_fine = pre * fine.sinc2_integral(t);
    double scale = std::max(std::abs(r.value_fine), 1e-300);
    r.rel_gap = t == 0 ? 0.0 : std::abs(r.value - r.value_fine) / scale;
    r.converged = r.rel_gap <= tol;
    out.push_back(r);
  }
  return out;
}

inline std::vector<KernelResult> finite_time_kernel_continuum(const TorusSpec& spec, const std::vector<double>& ts,
                                                              const RVec& k, const Profile& profile, double lambda,
                                                              int m = 24, double tol = 1e-5,
                                                              double budget = kDefaultContinuumBudget) {
  return finite_time_kernel_continuum(spec, ts, k, density_of(profile, spec.d()), lambda, m, tol, budget);
}

inline KernelResult finite_time_kernel_continuum(const TorusSpec& spec, double t, const RVec& k,
                                                 const Profile& profile, double lambda, int m = 24,
                                                 double tol = 1e-5) {
  return finite_time_kernel_continuum(spec, std::vector<double>{t}, k, profile, lambda, m, tol).front();
}

// ---------------------------------------------------------------------------
// Collision operator

struct DeltaScheme {
  double eps0 = 0;  // 0: 2e-4 of the Omega range of the quadrature
  int levels = 3;   // eps0, eps0/2, eps0/4
  int m = 24;
  double tol = 1e-6;

  nlohmann::json to_json() const {
    return {{"shape", "gaussian"}, {"eps0", eps0}, {"levels", levels}, {"m", m}, {"tol", tol}};
  }

  static DeltaScheme from_json(const nlohmann::json& j) {
    DeltaScheme s;
    s.eps0 = j.value("eps0", 0.0);
    s.levels = j.value("levels", 3);
    s.m = j.value("m", 24);
    s.tol = j.value("tol", 1e-6);
    require(j.value("shape", std::string("gaussian")) == "gaussian", "only the gaussian mollifier is supported");
    require(s.eps0 >= 0, "eps0 must be nonnegative");
    require(s.levels == 3, "the Richardson ladder uses exactly three widths");
    require(s.m >= 4, "m must be at least 4");
    return s;
  }
};

struct CollisionResult {
  double value = 0;     // extrapolated T(rho)(k)
  double residual = 0;  // |extrapolated - best single-level Richardson|
  double scale = 0;     // same integral with every term in absolute value
  std::vector<double> ladder;  // T at eps0, eps0/2, eps0/4
  std::vector<int> orders{2, 3};  // eliminated powers of eps
  double eps0 = 0;
  bool flagged = false;
};

namespace detail {

template <class W>
double mollified(const ResonanceQuadrature& q, double eps, W&& weight) {
  const double c = 1.0 / (std::sqrt(kTwoPi) * eps);
  double s = 0;
  for (double sign : {-1.0, 1.0}) {
    Rule g = gauss_legendre(24, 0.0, 8.0 * eps);
    for (std::size_t i = 0; i < g.size(); ++i) {
      double w = sign * g.x[i];
      s += g.w[i] * c * std::exp(-0.5 * (w / eps) * (w / eps)) * q.density(w, weight);
    }
  }
  return s;
}

}  // namespace detail

// T(rho)(k) = int delta(Sigma) delta(Omega) rho rho1 rho2 rho3 [1/rho - 1/rho1 + 1/rho2 - 1/rho3],
// with delta replaced by Gaussians of width eps0, eps0/2, eps0/4 and the ladder
// Richardson-extrapolated in eps^2 and eps^3. No 1/tau prefactor.
inline CollisionResult collision_operator(const Dispersion& disp, const Density& rho, const RVec& k,
                                          const DeltaScheme& scheme = {},
                                          double budget = kDefaultContinuumBudget) {
  auto q = quadrature_for(disp, rho, k, scheme.m, budget);
  const double r0 = rho.rho(k);
  auto weight = [&](const RVec& a, const RVec& b, const RVec& c) {
    return collision_weight(r0, rho.rho(a), rho.rho(b), rho.rho(c));
  };
  auto scale_w = [&](const RVec& a, const RVec& b, const RVec& c) {
    return collision_scale_weight(r0, rho.rho(a), rho.rho(b), rho.rho(c));
  };
  CollisionResult res;
  res.eps0 = scheme.eps0 > 0 ? scheme.eps0 : 2e-4 * (q.omega_max() - q.omega_min());
  for (int l = 0; l < 3; ++l) res.ladder.push_back(detail::mollified(q, res.eps0 / std::pow(2.0, l), weight));
  // F is C^1 across 0 with a jump higher up, so the ladder error runs in eps^2 and eps^3.
  const double r1 = (4 * res.ladder[1] - res.ladder[0]) / 3, r2 = (4 * res.ladder[2] - res.ladder[1]) / 3;
  res.value = (8 * r2 - r1) / 7;
  res.residual = std::abs(res.value - r2);
  res.scale = q.density(0.0, scale_w);
  res.flagged = res.residual > scheme.tol * std::max(res.scale, 1e-300);
  return res;
}

// T(rho)(k) through the exact co-area value F(0).
inline double collision_coarea(const Dispersion& disp, const Density& rho, const RVec& k, int m = 24,
                               double budget = kDefaultContinuumBudget) {
  auto q = quadrature_for(disp, rho, k, m, budget);
  const double r0 = rho.rho(k);
  return q.density(0.0, [&](const RVec& a, const RVec& b, const RVec& c) {
    return collision_weight(r0, rho.rho(a), rho.rho(b), rho.rho(c));
  });
}

// int |sin x / x|^2 over [-X, X] on panels of width pi, plus the tail 1/X
// (exact to O(X^{-3}) at X = n pi).
inline double sinc2_normalization(int half_periods = 2000) {
  const double X = half_periods * kPi;
  const Rule& g = gauss_legendre_ref(20);
  double s = 0;
  for (int p = -half_periods; p < half_periods; ++p) {
    double a = p * kPi;
    for (std::size_t i = 0; i < g.size(); ++i) {
      double x = a + 0.5 * kPi * (g.x[i] + 1.0);
      double v = std::abs(x) < 1e-8 ? 1.0 : std::sin(x) / x;
      s += 0.5 * kPi * g.w[i] * v * v;
    }
  }
  return s + 1.0 / X;
}

// ---------------------------------------------------------------------------
// Kinetic state and the WKE stepper

// rho on a tensor Gauss-Legendre grid over the box [-R, R]^d. Off-grid values
// come from log rho: the degree m-1 interpolant is tabulated on a uniform grid
// and read back with local cubic Lagrange interpolation, which keeps rho positive
// and reproduces Gaussians exactly. Outside the box log rho is extended constantly.
class KineticState {
 public:
  KineticState(const Dispersion& disp, double R, int m) : disp_(disp), R_(R), m_(m) {
    require(disp.d >= 2 && disp.d <= 3, "kinetic grids support d = 2, 3");
    require(R > 0 && m >= 2, "kinetic grid needs R > 0 and m >= 2");
    axis_ = gauss_legendre(m, -R, R);
    std::size_t total = 1;
    for (int a = 0; a < disp.d; ++a) total *= static_cast<std::size_t>(m);
    nodes_.resize(total);
    weights_.resize(total);
    for (std::size_t idx = 0; idx < total; ++idx) {
      std::size_t r = idx;
      double w = 1;
      RVec k{};
      for (int a = disp.d - 1; a >= 0; --a) {
        std::size_t i = r % m;
        r /= m;
        k[a] = axis_.x[i];
        w *= axis_.w[i];
      }
      nodes_[idx] = k;
      weights_[idx] = w;
    }
    fine_ = (disp.d == 2 ? 8 : 4) * m + 1;
    h_ = 2 * R / (fine_ - 1);
    Barycentric b(axis_.x);
    std::vector<double> c(m);
    to_fine_.assign(static_cast<std::size_t>(fine_) * m, 0.0);
    for (int f = 0; f < fine_; ++f) {
      b.weights(-R + f * h_, c.data());
      std::copy(c.begin(), c.end(), to_fine_.begin() + static_cast<std::ptrdiff_t>(f) * m);
    }
    set(std::vector<double>(total, 1.0));
  }

  static KineticState from_density(const Dispersion& disp, const std::function<double(const RVec&)>& f, double R,
                                   int m) {
    KineticState s(disp, R, m);
    std::vector<double> v(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) v[i] = f(s.node(i));
    s.set(std::move(v));
    return s;
  }

  static KineticState from_profile(const Dispersion& disp, const Profile& p, double R, int m) {
    return from_density(disp, [&](const RVec& k) { return p(k, disp.d); }, R, m);
  }

  std::size_t size() const { return nodes_.size(); }
  const RVec& node(std::size_t i) const { return nodes_[i]; }
  double weight(std::size_t i) const { return weights_[i]; }
  const std::vector<double>& values() const { return rho_; }
  const Dispersion& dispersion() const { return disp_; }
  double box() const { return R_; }
  int per_axis() const { return m_; }
  double time = 0;

  void set(std::vector<double> v) {
    require(v.size() == size(), "state length mismatch");
    std::vector<double> lg(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!(v[i] > 0) || !std::isfinite(v[i]))
        throw NumericalFailure("kinetic density is not positive at node " + std::to_string(i) + " (value " +
                               std::to_string(v[i]) + ", s = " + std::to_string(time) + ")");
      lg[i] = std::log(v[i]);
    }
    rho_ = std::move(v);
    // interpolate the offset from one node so constants come back bit-exact
    ref_ = lg[0];
    for (double& x : lg) x -= ref_;
    // axis by axis: coarse m^d -> fine^d
    std::vector<std::size_t> shape(disp_.d, static_cast<std::size_t>(m_));
    for (int a = 0; a < disp_.d; ++a) {
      std::size_t outer = 1, inner = 1;
      for (int b = 0; b < a; ++b) outer *= shape[b];
      for (int b = a + 1; b < disp_.d; ++b) inner *= shape[b];
      std::vector<double> next(outer * fine_ * inner, 0.0);
      for (std::size_t o = 0; o < outer; ++o)
        for (int f = 0; f < fine_; ++f) {
          const double* c = &to_fine_[static_cast<std::size_t>(f) * m_];
          double* dst = &next[(o * fine_ + f) * inner];
          for (int i = 0; i < m_; ++i) {
            const double* src = &lg[(o * m_ + i) * inner];
            for (std::size_t in = 0; in < inner; ++in) dst[in] += c[i] * src[in];
          }
        }
      lg = std::move(next);
      shape[a] = static_cast<std::size_t>(fine_);
    }
    table_ = std::move(lg);
  }

  double operator()(const RVec& k) const {
    const int d = disp_.d;
    int base[3] = {0, 0, 0};
    double w[3][4] = {};
    for (int a = 0; a < d; ++a) {
      double x = (std::clamp(k[a], -R_, R_) + R_) / h_;
      int b = std::clamp(static_cast<int>(x) - 1, 0, fine_ - 4);
      double u = x - b;  // nodes at 0, 1, 2, 3
      w[a][0] = -(u - 1) * (u - 2) * (u - 3) / 6;
      w[a][1] = u * (u - 2) * (u - 3) / 2;
      w[a][2] = -u * (u - 1) * (u - 3) / 2;
      w[a][3] = u * (u - 1) * (u - 2) / 6;
      base[a] = b;
    }
    double s = 0;
    const std::size_t F = static_cast<std::size_t>(fine_);
    if (d == 2) {
      for (int i = 0; i < 4; ++i) {
        const double* row = &table_[(base[0] + i) * F + base[1]];
        s += w[0][i] * (w[1][0] * row[0] + w[1][1] * row[1] + w[1][2] * row[2] + w[1][3] * row[3]);
      }
    } else {
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
          const double* row = &table_[((base[0] + i) * F + base[1] + j) * F + base[2]];
          s += w[0][i] * w[1][j] * (w[2][0] * row[0] + w[2][1] * row[1] + w[2][2] * row[2] + w[2][3] * row[3]);
        }
    }
    return std::exp(ref_ + s);
  }

  Density density() const {
    return {[this](const RVec& k) { return (*this)(k); }, R_ * std::sqrt(static_cast<double>(disp_.d))};
  }

  double integrate(const std::vector<double>& f) const {
    double s = 0;
    for (std::size_t i = 0; i < size(); ++i) s += weights_[i] * f[i];
    return s;
  }

  double mass() const { return integrate(rho_); }

  double energy() const {
    double s = 0;
    for (std::size_t i = 0; i < size(); ++i) s += weights_[i] * disp_.q(nodes_[i]) * rho_[i];
    return s;
  }

 private:
  Dispersion disp_;
  double R_;
  int m_;
  Rule axis_;
  std::vector<RVec> nodes_;
  std::vector<double> weights_, rho_;
  int fine_ = 0;
  double h_ = 0, ref_ = 0;
  std::vector<double> to_fine_, table_;
};

// Gaussian of width w on the box [-2.2 w, 2.2 w]^d with 24 nodes per axis.
inline KineticState wke_gaussian_preset(const Dispersion& disp, double width = 1.0) {
  return KineticState::from_profile(disp, Profile::gaussian(width), 2.2 * width, 24);
}

enum class DeltaMethod { coarea, mollifier };

struct WkeOptions {
  int m = 16;  // resonance quadrature resolution per node
  DeltaMethod method = DeltaMethod::coarea;
  DeltaScheme scheme{};
  std::size_t workers = 1;
};

// T(rho) at every grid node.
inline std::vector<double> collision_on_grid(const KineticState& st, const WkeOptions& opt = {}) {
  std::vector<double> out(st.size());
  const Density rho = st.density();
  parallel_for(st.size(), opt.workers, [&](std::size_t i) {
    if (opt.method == DeltaMethod::coarea) {
      out[i] = collision_coarea(st.dispersion(), rho, st.node(i), opt.m);
    } else {
      DeltaScheme s = opt.scheme;
      s.m = opt.m;
      out[i] = collision_operator(st.dispersion(), rho, st.node(i), s).value;
    }
  });
  return out;
}

struct ConservationReport {
  double mass = 0, mass_scale = 0;
  std::vector<double> momentum, momentum_scale;
  double energy = 0, energy_scale = 0;

  double worst_relative() const {
    double w = std::abs(mass) / mass_scale;
    for (std::size_t a = 0; a < momentum.size(); ++a)
      w = std::max(w, std::abs(momentum[a]) / momentum_scale[a]);
    return std::max(w, std::abs(energy) / energy_scale);
  }
};

// int T, int k T, int Q T over the grid, each against its absolute counterpart.
inline ConservationReport conservation_integrals(const KineticState& st, const std::vector<double>& T) {
  const int d = st.dispersion().d;
  ConservationReport r;
  r.momentum.assign(d, 0.0);
  r.momentum_scale.assign(d, 0.0);
  for (std::size_t i = 0; i < st.size(); ++i) {
    const double w = st.weight(i);
    const RVec& k = st.node(i);
    r.mass += w * T[i];
    r.mass_scale += w * std::abs(T[i]);
    for (int a = 0; a < d; ++a) {
      r.momentum[a] += w * k[a] * T[i];
      r.momentum_scale[a] += w * std::abs(k[a] * T[i]);
    }
    double q = st.dispersion().q(k);
    r.energy += w * q * T[i];
    r.energy_scale += w * q * std::abs(T[i]);
  }
  return r;
}

inline KineticState wke_euler_step(const KineticState& st, double ds, const WkeOptions& opt = {}) {
  auto T = collision_on_grid(st, opt);
  KineticState next = st;
  std::vector<double> v = st.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += ds * T[i];
  next.time = st.time + ds;
  next.set(std::move(v));
  return next;
}

// Explicit RK4 in kinetic time; returns the state after every step.
inline std::vector<KineticState> wke_evolve(const KineticState& init, double s_end, double ds,
                                            const WkeOptions& opt = {}) {
  require(ds > 0, "ds must be positive");
  require(s_end >= 0, "s_end must be nonnegative");
  std::vector<KineticState> traj{init};
  const long steps = static_cast<long>(std::ceil(s_end / ds - 1e-9));
  const double h = steps > 0 ? s_end / steps : 0;
  for (long n = 0; n < steps; ++n) {
    const KineticState& cur = traj.back();
    const auto& y = cur.values();
    auto stage = [&](const std::vector<double>& T, double c) {
      KineticState s = cur;
      std::vector<double> v = y;
      for (std::size_t i = 0; i < v.size(); ++i) v[i] += c * h * T[i];
      s.time = cur.time + c * h;
      s.set(std::move(v));
      return s;
    };
    auto k1 = collision_on_grid(cur, opt);
    auto k2 = collision_on_grid(stage(k1, 0.5), opt);
    auto k3 = collision_on_grid(stage(k2, 0.5), opt);
    auto k4 = collision_on_grid(stage(k3, 1.0), opt);
    std::vector<double> v = y;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += h / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
    KineticState next = cur;
    next.time = cur.time + h;
    next.set(std::move(v));
    traj.push_back(std::move(next));
  }
  return traj;
}

struct CollisionRow {
  RVec k;
  double value, residual;
};

inline void write_collision_csv(const std::string& path, int d, const std::vector<CollisionRow>& rows) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out.precision(17);
  for (int a = 0; a < d; ++a) out << "k" << a << ",";
  out << "value,residual\n";
  for (auto& r : rows) {
    for (int a = 0; a < d; ++a) out << r.k[a] << ",";
    out << r.value << "," << r.residual << "\n";
  }
}

}  // namespace wke
