#pragma once

#include <gsl/gsl_errno.h>
#include <gsl/gsl_integration.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "wke/collision.hpp"
#include "wke/core.hpp"
#include "wke/lattice.hpp"
#include "wke/quadrature.hpp"

namespace wke {

enum class Region { rz, shell };
enum class CountMethod { brute, fast };

// Per-axis exclusions. A pair (p, q) is dropped if some axis i has
// p_i^2 = q_i^2 (axis_equal), |p_i - q_i| < min_diff, or min(|p_i|, |q_i|) < min_coord.
// On shells p = u' + u'', q = u' - u'' with u' = K1 - K, u'' = K3 - K.
struct Exclusions {
  bool axis_equal = false;
  int min_diff = 0;
  int min_coord = 0;

  bool keeps(int p, int q) const {
    if (axis_equal && std::abs(p) == std::abs(q)) return false;
    if (std::abs(p - q) < min_diff) return false;
    return std::min(std::abs(p), std::abs(q)) >= min_coord;
  }

  bool keeps_shell(const IVec& u1, const IVec& u2, int d) const {
    for (int i = 0; i < d; ++i)
      if (!keeps(u1[i] + u2[i], u1[i] - u2[i])) return false;
    return true;
  }

  bool any() const { return axis_equal || min_diff > 0 || min_coord > 0; }

  nlohmann::json to_json() const {
    return {{"axis_equal", axis_equal}, {"min_diff", min_diff}, {"min_coord", min_coord}};
  }

  static Exclusions from_json(const nlohmann::json& j) {
    Exclusions e;
    e.axis_equal = j.value("axis_equal", false);
    e.min_diff = j.value("min_diff", 0);
    e.min_coord = j.value("min_coord", 0);
    require(e.min_diff >= 0 && e.min_coord >= 0, "exclusion thresholds must be nonnegative");
    return e;
  }
};

inline constexpr double kDefaultCountBudget = 2e11;

struct CountQuery {
  TorusSpec spec;
  double a = 0, b = 0;
  Region region = Region::rz;
  IVec k{};  // shell centre (integer mode)
  Exclusions exclusions{};
  double budget = kDefaultCountBudget;

  void validate() const {
    require(a <= b, "window needs a <= b");
    require(std::isfinite(a) && std::isfinite(b), "window must be finite");
    if (region == Region::rz) {
      require(spec.L() == std::floor(spec.L()) && spec.L() >= 1, "R_Z counting needs an integer L");
    } else {
      require(spec.contains(k), "shell centre must be a lattice mode");
    }
  }

  int L() const { return static_cast<int>(spec.L()); }

  nlohmann::json to_json() const {
    nlohmann::json j{{"spec", spec.to_json()},
                     {"window", {a, b}},
                     {"region", region == Region::rz ? "rz" : "shell"},
                     {"exclusions", exclusions.to_json()},
                     {"budget", budget}};
    if (region == Region::shell) j["k"] = std::vector<int>(k.begin(), k.begin() + spec.d());
    return j;
  }

  static CountQuery from_json(const nlohmann::json& j) {
    try {
      CountQuery q{TorusSpec::from_json(j.at("spec"))};
      auto w = j.at("window").get<std::vector<double>>();
      require(w.size() == 2, "window must be [a, b]");
      q.a = w[0];
      q.b = w[1];
      auto r = j.value("region", std::string("rz"));
      require(r == "rz" || r == "shell", "region must be rz or shell");
      q.region = r == "rz" ? Region::rz : Region::shell;
      if (j.contains("k")) {
        auto kv = j.at("k").get<std::vector<int>>();
        require(static_cast<int>(kv.size()) == q.spec.d(), "k must have d entries");
        for (std::size_t i = 0; i < kv.size(); ++i) q.k[i] = kv[i];
      }
      if (j.contains("exclusions")) q.exclusions = Exclusions::from_json(j.at("exclusions"));
      q.budget = j.value("budget", kDefaultCountBudget);
      q.validate();
      return q;
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("count query: ") + e.what());
    }
  }
};

struct Volume {
  double value = 0;
  double abserr = 0;
  bool converged = true;
};

struct CountResult {
  std::uint64_t count = 0;
  std::uint64_t degenerate = 0;  // R_Z: some p_i = q_i; shell: every u'_i u''_i = 0
  double continuum = 0;
  bool continuum_converged = true;
  double rel_error = 0;
  CountMethod method = CountMethod::brute;
  double seconds = 0;
  nlohmann::json query;

  nlohmann::json to_json() const {
    return {{"count", count},
            {"degenerate", degenerate},
            {"continuum", continuum},
            {"continuum_converged", continuum_converged},
            {"rel_error", rel_error},
            {"method", method == CountMethod::brute ? "brute" : "fast"},
            {"seconds", seconds},
            {"query", query}};
  }
};

namespace detail {

inline std::uint64_t checked_add(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r;
  if (__builtin_add_overflow(a, b, &r)) throw NumericalFailure("64-bit count overflow");
  return r;
}

inline std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r;
  if (__builtin_mul_overflow(a, b, &r)) throw NumericalFailure("64-bit count overflow");
  return r;
}

struct AxisPair {
  long w;  // p^2 - q^2
  bool equal;
};

inline std::vector<AxisPair> axis_pairs(int L, const Exclusions& ex) {
  std::vector<AxisPair> out;
  for (int p = 0; p <= L; ++p)
    for (int q = 0; q <= L; ++q)
      if (ex.keeps(p, q)) out.push_back({static_cast<long>(p) * p - static_cast<long>(q) * q, p == q});
  return out;
}

// Axes [0, split) form the A half, [split, d) the B half. Every count uses
// the value fl(sA + sB) with each half summed left to right, so brute force
// and meet-in-the-middle see bit-identical numbers.
inline int split_of(int d) { return (d + 1) / 2; }

// all B-half configurations: partial sum and whether every B axis has p_i = q_i
struct HalfSums {
  std::vector<double> s;
  std::vector<char> equal;
};

inline HalfSums half_configurations(const std::vector<double>& beta, int lo, int hi,
                                    const std::vector<std::vector<AxisPair>>& axes) {
  HalfSums h;
  if (lo == hi) {
    h.s.push_back(0.0);
    h.equal.push_back(1);
    return h;
  }
  std::function<void(int, double, bool)> rec = [&](int i, double s, bool eq) {
    if (i == hi) {
      h.s.push_back(s);
      h.equal.push_back(eq);
      return;
    }
    for (auto& ap : axes[i]) {
      double term = beta[i] * static_cast<double>(ap.w);
      rec(i + 1, i == lo ? term : s + term, eq && ap.equal);
    }
  };
  rec(lo, 0.0, true);
  return h;
}

// Distinct per-axis values with multiplicities.
inline std::vector<std::pair<long, std::uint64_t>> axis_multiplicities(const std::vector<AxisPair>& pairs) {
  std::map<long, std::uint64_t> m;
  for (auto& ap : pairs) ++m[ap.w];
  return {m.begin(), m.end()};
}

// Distinct half sums (sorted) with multiplicities, enumerated over distinct
// per-axis values.
template <class F>
void for_each_half_value(const std::vector<double>& beta, int lo, int hi,
                         const std::vector<std::vector<std::pair<long, std::uint64_t>>>& mult, F&& f) {
  if (lo == hi) {
    f(0.0, std::uint64_t{1});
    return;
  }
  std::function<void(int, double, std::uint64_t)> rec = [&](int i, double s, std::uint64_t m) {
    if (i == hi) {
      f(s, m);
      return;
    }
    for (auto& [w, c] : mult[i]) {
      double term = beta[i] * static_cast<double>(w);
      rec(i + 1, i == lo ? term : s + term, checked_mul(m, c));
    }
  };
  rec(lo, 0.0, std::uint64_t{1});
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

// Canonical value of Q(p, q) from per-axis w_i = p_i^2 - q_i^2.
inline double rz_value(const std::vector<double>& beta, const std::vector<long>& w) {
  const int d = static_cast<int>(beta.size()), h = detail::split_of(d);
  double sa = 0, sb = 0;
  for (int i = 0; i < h; ++i) sa = i == 0 ? beta[i] * w[i] : sa + beta[i] * w[i];
  for (int i = h; i < d; ++i) sb = i == h ? beta[i] * w[i] : sb + beta[i] * w[i];
  return sa + sb;
}

// ---------------------------------------------------------------------------
// Shell region

// Omega of every admissible triple at mode k, sorted ascending.
inline std::vector<double> shell_values(const TorusSpec& spec, std::size_t k, const Exclusions& ex = {}) {
  std::vector<double> v;
  const IVec& K = spec.mode(k);
  spec.for_each_triple(k, [&](std::size_t a, std::size_t b, std::size_t c) {
    if (ex.any() && !ex.keeps_shell(spec.mode(a) - K, spec.mode(c) - K, spec.d())) return;
    v.push_back(spec.omega(k, a, b, c));
  });
  std::sort(v.begin(), v.end());
  return v;
}

inline std::uint64_t count_sorted(const std::vector<double>& v, double a, double b) {
  auto lo = std::lower_bound(v.begin(), v.end(), a);
  auto hi = std::upper_bound(v.begin(), v.end(), b);
  return hi > lo ? static_cast<std::uint64_t>(hi - lo) : 0;
}

enum class ShellForm { direct, product, difference };

// Shell count at mode k in three coordinate systems:
//   direct:     (k1, k2, k3) with Omega = Q(k) - Q(k1) + Q(k2) - Q(k3)
//   product:    u' = K1 - K, u'' = K3 - K, Omega = 2 sum beta_i u'_i u''_i / L^2
//   difference: p = u' + u'', q = u' - u'' (same parity per axis), Omega = (Q(p) - Q(q)) / (2 L^2)
inline std::uint64_t shell_count(const TorusSpec& spec, const IVec& K, double a, double b,
                                 ShellForm form = ShellForm::direct) {
  long kr = spec.rank(K);
  require(kr >= 0, "shell centre must be a lattice mode");
  const int d = spec.d();
  const double L2 = spec.L() * spec.L();
  const auto& beta = spec.beta();
  std::uint64_t n = 0;
  if (form == ShellForm::direct) {
    spec.for_each_triple(static_cast<std::size_t>(kr), [&](std::size_t x, std::size_t y, std::size_t z) {
      double om = spec.omega(static_cast<std::size_t>(kr), x, y, z);
      n += (om >= a && om <= b);
    });
    return n;
  }
  if (form == ShellForm::product) {
    for (const IVec& K1 : spec.modes())
      for (const IVec& K3 : spec.modes()) {
        IVec u1 = K1 - K, u2 = K3 - K;
        if (!spec.contains(K + u1 + u2)) continue;
        double om = 0;
        for (int i = 0; i < d; ++i) om += 2.0 * beta[i] * static_cast<double>(u1[i]) * u2[i];
        om /= L2;
        n += (om >= a && om <= b);
      }
    return n;
  }
  // p, q over the doubled box with p_i = q_i mod 2; u' = (p+q)/2, u'' = (p-q)/2
  const int R = 4 * spec.kmax();
  IVec p{}, q{};
  std::function<void(int)> rec = [&](int i) {
    if (i == d) {
      IVec u1{}, u2{};
      for (int j = 0; j < d; ++j) {
        u1[j] = (p[j] + q[j]) / 2;
        u2[j] = (p[j] - q[j]) / 2;
      }
      if (!spec.contains(K + u1) || !spec.contains(K + u2) || !spec.contains(K + u1 + u2)) return;
      double om = 0;
      for (int j = 0; j < d; ++j)
        om += 0.5 * beta[j] * static_cast<double>(long(p[j]) * p[j] - long(q[j]) * q[j]);
      om /= L2;
      n += (om >= a && om <= b);
      return;
    }
    for (p[i] = -R; p[i] <= R; ++p[i])
      for (q[i] = -R + ((p[i] + R) & 1); q[i] <= R; q[i] += 2) rec(i + 1);
  };
  rec(0);
  return n;
}

// ---------------------------------------------------------------------------
// Continuum side of R_Z
//
// With X, Y uniform on [0,1], Z = X^2 - Y^2 has density
//   f(z) = (1/2) log((1 + sqrt(1 - |z|)) / sqrt|z|),  |z| <= 1,
// and #{(p,q) in [0,L]^{2d}: Q(p,q) in [a,b]} is asymptotic to
// L^{2d} P(a/L^2 <= sum beta_i Z_i <= b/L^2).

inline double xy_density(double z) {
  double az = std::abs(z);
  if (az >= 1.0) return 0.0;
  if (az == 0.0) return std::numeric_limits<double>::infinity();
  return 0.5 * std::log((1.0 + std::sqrt(1.0 - az)) / std::sqrt(az));
}

// P(X^2 - Y^2 <= z)
inline double xy_cdf(double z) {
  if (z <= -1.0) return 0.0;
  if (z >= 1.0) return 1.0;
  // G(y) = int sqrt(y^2 + z) dy
  auto G = [z](double y) {
    double r = std::sqrt(std::max(0.0, y * y + z));
    double arg = y + r;
    return 0.5 * (y * r + (arg > 0 ? z * std::log(arg) : 0.0));
  };
  if (z >= 0) {
    double y0 = std::sqrt(1.0 - z);
    return G(y0) - (z > 0 ? G(0.0) : 0.0) + (1.0 - y0);
  }
  return G(1.0) - G(std::sqrt(-z));
}

namespace detail {

inline void quiet_gsl() {
  static std::once_flag once;
  std::call_once(once, [] { gsl_set_error_handler_off(); });
}

// Integrates f over [lo, hi] with the given interior break points.
class Integrator {
 public:
  Integrator() : ws_(gsl_integration_workspace_alloc(kLimit)) { quiet_gsl(); }
  ~Integrator() { gsl_integration_workspace_free(ws_); }
  Integrator(const Integrator&) = delete;
  Integrator& operator=(const Integrator&) = delete;

  Volume run(const std::function<double(double)>& f, double lo, double hi, std::vector<double> pts,
             double epsrel) {
    Volume v;
    if (!(hi > lo)) return v;
    pts.push_back(lo);
    pts.push_back(hi);
    std::vector<double> keep;
    for (double x : pts)
      if (x >= lo && x <= hi) keep.push_back(x);
    std::sort(keep.begin(), keep.end());
    keep.erase(std::unique(keep.begin(), keep.end(), [](double x, double y) { return std::abs(x - y) < 1e-15; }),
               keep.end());
    gsl_function F;
    F.function = [](double x, void* p) { return (*static_cast<const std::function<double(double)>*>(p))(x); };
    F.params = const_cast<std::function<double(double)>*>(&f);
    int status = gsl_integration_qagp(&F, keep.data(), keep.size(), 0.0, epsrel, kLimit, ws_, &v.value, &v.abserr);
    // roundoff stalls near the log singularity are harmless once the error estimate is small
    v.converged = status == GSL_SUCCESS ||
                  (status == GSL_EROUND && v.abserr <= 1e3 * epsrel * std::abs(v.value) + 1e-300);
    return v;
  }

 private:
  static constexpr std::size_t kLimit = 2000;
  gsl_integration_workspace* ws_;
};

// P(a <= sum_{i >= from} beta_i Z_i <= b)
inline Volume slab_probability(const std::vector<double>& beta, std::size_t from, double a, double b,
                               std::vector<std::unique_ptr<Integrator>>& ws, double epsrel) {
  const std::size_t d = beta.size();
  if (from + 1 == d) {
    const double bi = beta[from];
    return {xy_cdf(b / bi) - xy_cdf(a / bi), 0.0, true};
  }
  double rest = 0;
  for (std::size_t i = from + 1; i < d; ++i) rest += beta[i];
  const double bi = beta[from];
  bool ok = true;
  double err = 0;
  auto f = [&](double z) {
    if (z == 0.0) return 0.0;
    Volume inner = slab_probability(beta, from + 1, a - z, b - z, ws, epsrel);
    ok = ok && inner.converged;
    err += inner.abserr;
    return xy_density(z / bi) / bi * inner.value;
  };
  std::vector<double> pts{0.0, a, b, a - rest, a + rest, b - rest, b + rest};
  if (from + 2 == d) {
    const double bn = beta[from + 1];
    pts = {0.0, a, b, a - bn, a + bn, b - bn, b + bn};
  }
  Volume v = ws[from]->run(f, std::max(-bi, a - rest), std::min(bi, b + rest), pts, epsrel);
  v.converged = v.converged && ok;
  return v;
}

// density of sum_{i >= from} beta_i Z_i at s
inline double sum_density(const std::vector<double>& beta, std::size_t from, double s,
                          std::vector<std::unique_ptr<Integrator>>& ws, double epsrel, bool& ok) {
  const std::size_t d = beta.size();
  const double bi = beta[from];
  if (from + 1 == d) return s == 0.0 ? 0.0 : xy_density(s / bi) / bi;
  double rest = 0;
  for (std::size_t i = from + 1; i < d; ++i) rest += beta[i];
  auto f = [&](double z) {
    if (z == 0.0) return 0.0;
    return xy_density(z / bi) / bi * sum_density(beta, from + 1, s - z, ws, epsrel, ok);
  };
  std::vector<double> pts{0.0, s, s - rest, s + rest};
  if (from + 2 == d) {
    const double bn = beta[from + 1];
    pts = {0.0, s, s - bn, s + bn};
  }
  Volume v = ws[from]->run(f, std::max(-bi, s - rest), std::min(bi, s + rest), pts, epsrel);
  ok = ok && v.converged;
  return v.value;
}

}  // namespace detail

// Volume of {(x, y) in [0,L]^{2d}: a <= Q(x) - Q(y) <= b}.
inline Volume rz_slab_volume(const std::vector<double>& beta, double L, double a, double b, double epsrel = 1e-8) {
  require(a <= b, "window needs a <= b");
  const double L2 = L * L;
  std::vector<std::unique_ptr<detail::Integrator>> ws;
  for (std::size_t i = 0; i < beta.size(); ++i) ws.push_back(std::make_unique<detail::Integrator>());
  Volume v = detail::slab_probability(beta, 0, a / L2, b / L2, ws, epsrel);
  const double scale = std::pow(L, 2.0 * beta.size());
  v.value *= scale;
  v.abserr *= scale;
  v.converged = v.converged && v.abserr <= std::max(1e3 * epsrel * std::abs(v.value), 1e-12 * scale);
  return v;
}

// L^{2d} int g(mu Q(x, y)) dx dy over [0,1]^{2d} in p, q units, g = sinc^2.
inline Volume rz_weighted_continuum(const std::vector<double>& beta, double L, double mu, double epsrel = 1e-8) {
  require(mu > 0, "mu must be positive");
  std::vector<std::unique_ptr<detail::Integrator>> ws;
  for (std::size_t i = 0; i < beta.size(); ++i) ws.push_back(std::make_unique<detail::Integrator>());
  const double c = mu * L * L, smax = std::accumulate(beta.begin(), beta.end(), 0.0);
  bool ok = true;
  // panels no wider than half a period of g(c s), refined into the log points
  const int per = std::max(1, static_cast<int>(std::ceil(2 * c * smax)));
  const Rule& ref = gauss_legendre_ref(10);
  double total = 0;
  for (int sign : {-1, 1}) {
    for (int p = 0; p < per; ++p) {
      double lo = p * smax / per, hi = (p + 1) * smax / per;
      std::vector<double> br{lo, hi};
      if (p == 0)  // density ~ log near 0: geometric grading
        for (int j = 1; j <= 12; ++j) br.insert(br.begin() + 1, hi / std::pow(4.0, j));
      for (std::size_t q = 0; q + 1 < br.size(); ++q) {
        double h = br[q + 1] - br[q];
        for (std::size_t i = 0; i < ref.size(); ++i) {
          double s = br[q] + 0.5 * h * (ref.x[i] + 1.0);
          double x = kPi * c * s;
          double g = std::abs(x) < 1e-8 ? 1.0 : std::pow(std::sin(x) / x, 2);
          total += 0.5 * h * ref.w[i] * g * detail::sum_density(beta, 0, sign * s, ws, epsrel, ok);
        }
      }
    }
  }
  return {total * std::pow(L, 2.0 * beta.size()), 0.0, ok};
}

// Shell volume L^{2d} int 1[a <= Omega <= b] over admissible (k1, k2) in the
// continuum, through the resonance density of the cutoff indicator.
inline Volume shell_volume(const TorusSpec& spec, const IVec& K, double a, double b, int m = 0) {
  require(spec.d() >= 2, "continuum shell volume needs d >= 2");
  if (m <= 0) m = spec.d() == 2 ? 24 : 12;
  const Dispersion disp = Dispersion::of(spec);
  const RVec k = spec.k_of(K);
  const double kap = spec.cutoff();
  const bool ball = spec.shape() == CutoffShape::ball;
  auto inside = [&](const RVec& x) {
    double r = 0;
    for (int i = 0; i < spec.d(); ++i) {
      if (!ball && std::abs(x[i]) > kap) return false;
      r += x[i] * x[i];
    }
    return !ball || r <= kap * kap;
  };
  auto weight = [&](const RVec& k1, const RVec& k2, const RVec& k3) {
    return inside(k1) && inside(k2) && inside(k3) ? 1.0 : 0.0;
  };
  const double rad = ball ? kap : kap * std::sqrt(static_cast<double>(spec.d()));
  double kn = 0;
  for (int i = 0; i < spec.d(); ++i) kn += k[i] * k[i];
  const double sb = std::sqrt(disp.beta_max());
  auto at = [&](int mm) {
    ResonanceQuadrature rq(disp, k, sb * (std::sqrt(kn) + rad), sb * 2 * rad, mm);
    if (b == a) return 0.0;
    Rule g = gauss_legendre(8, a, b);
    double s = 0;
    for (std::size_t i = 0; i < g.size(); ++i) s += g.w[i] * rq.density(g.x[i], weight);
    return s;
  };
  const double scale = std::pow(spec.L(), 2.0 * spec.d());
  double v1 = at(m) * scale, v2 = at(2 * m) * scale;
  return {v2, std::abs(v2 - v1), std::abs(v2 - v1) <= 1e-3 * std::max(std::abs(v2), 1.0)};
}

inline Volume continuum_volume(const CountQuery& q) {
  q.validate();
  if (q.region == Region::rz) return rz_slab_volume(q.spec.beta(), q.spec.L(), q.a, q.b);
  return shell_volume(q.spec, q.k, q.a, q.b);
}

// ---------------------------------------------------------------------------
// Counting

inline void finish(CountResult& r, const CountQuery& q, bool with_continuum) {
  r.query = q.to_json();
  if (!with_continuum) return;
  Volume v = continuum_volume(q);
  r.continuum = v.value;
  r.continuum_converged = v.converged;
  r.rel_error = std::abs(static_cast<double>(r.count) - v.value) / std::max(v.value, 1.0);
}

// Full enumeration of (p, q) in [0,L]^{2d} (R_Z) or of all triples (shell).
inline CountResult count_brute(const CountQuery& q, std::size_t workers = 1, bool with_continuum = true) {
  q.validate();
  auto t0 = std::chrono::steady_clock::now();
  CountResult r;
  r.method = CountMethod::brute;
  const int d = q.spec.d();
  if (q.region == Region::shell) {
    const double n = static_cast<double>(q.spec.size());
    check_budget(n * n, q.budget, "brute shell count");
    long kr = q.spec.rank(q.k);
    const IVec K = q.k;
    q.spec.for_each_triple(static_cast<std::size_t>(kr), [&](std::size_t x, std::size_t y, std::size_t z) {
      (void)y;
      double om = q.spec.omega(static_cast<std::size_t>(kr), x, y, z);
      if (om < q.a || om > q.b) return;
      IVec u1 = q.spec.mode(x) - K, u2 = q.spec.mode(z) - K;
      if (!q.exclusions.keeps_shell(u1, u2, d)) return;
      ++r.count;
      bool deg = true;
      for (int i = 0; i < d; ++i) deg = deg && (u1[i] == 0 || u2[i] == 0);
      r.degenerate += deg;
    });
  } else {
    const int L = q.L();
    check_budget(std::pow(L + 1.0, 2.0 * d), q.budget, "brute R_Z count");
    const auto& beta = q.spec.beta();
    std::vector<std::vector<detail::AxisPair>> axes(d, detail::axis_pairs(L, q.exclusions));
    const int h = detail::split_of(d);
    detail::HalfSums B = detail::half_configurations(beta, h, d, axes);
    const std::size_t nb = B.s.size();
    // B configurations where some axis has p_i = q_i
    std::vector<char> b_some_equal(nb, 0);
    if (d > h) {
      std::size_t idx = 0;
      std::function<void(int, bool)> mark = [&](int i, bool any) {
        if (i == d) {
          b_some_equal[idx++] = any;
          return;
        }
        for (auto& ap : axes[i]) mark(i + 1, any || ap.equal);
      };
      mark(h, false);
    }
    const std::size_t n0 = axes[0].size();
    std::vector<std::uint64_t> cnt(std::max<std::size_t>(workers, 1), 0), deg(cnt.size(), 0);
    const double a = q.a, b = q.b;
    parallel_for(n0, workers, [&](std::size_t i0) {
      const std::size_t w = workers <= 1 ? 0 : i0 % workers;
      std::uint64_t c = 0, dg = 0;
      std::function<void(int, double, bool, bool)> rec = [&](int i, double s, bool eq, bool any) {
        if (i == h) {
          const double* v = B.s.data();
          const char* flag = any ? nullptr : b_some_equal.data();
          std::uint64_t local = 0, ldg = 0;
          if (flag) {
            for (std::size_t j = 0; j < nb; ++j) {
              const double x = s + v[j];
              const std::uint64_t in = (x >= a) & (x <= b);
              local += in;
              ldg += in & static_cast<std::uint64_t>(flag[j]);
            }
          } else {
            for (std::size_t j = 0; j < nb; ++j) {
              const double x = s + v[j];
              local += static_cast<std::uint64_t>((x >= a) & (x <= b));
            }
            ldg = local;
          }
          if (eq) {  // drop p = q
            for (std::size_t j = 0; j < nb; ++j)
              if (B.equal[j] && s + v[j] >= a && s + v[j] <= b) {
                --local;
                --ldg;
              }
          }
          c += local;
          dg += ldg;
          return;
        }
        const auto& ax = axes[i];
        for (std::size_t t = (i == 0 ? i0 : 0); t < (i == 0 ? i0 + 1 : ax.size()); ++t) {
          double term = beta[i] * static_cast<double>(ax[t].w);
          rec(i + 1, i == 0 ? term : s + term, eq && ax[t].equal, any || ax[t].equal);
        }
      };
      rec(0, 0.0, true, false);
      cnt[w] = detail::checked_add(cnt[w], c);
      deg[w] = detail::checked_add(deg[w], dg);
    });
    for (std::size_t w = 0; w < cnt.size(); ++w) {
      r.count = detail::checked_add(r.count, cnt[w]);
      r.degenerate = detail::checked_add(r.degenerate, deg[w]);
    }
  }
  r.seconds = detail::seconds_since(t0);
  finish(r, q, with_continuum);
  return r;
}

// Meet in the middle over per-axis value tables (R_Z only): distinct B-half
// sums are sorted once; each A-half value locates its admissible B range by
// binary search on the monotone map v -> fl(sA + v).
inline CountResult count_fast(const CountQuery& q, bool with_continuum = true) {
  q.validate();
  if (q.region != Region::rz) throw ValidationError("fast counting supports the separable R_Z region only");
  auto t0 = std::chrono::steady_clock::now();
  CountResult r;
  r.method = CountMethod::fast;
  const int d = q.spec.d(), L = q.L(), h = detail::split_of(d);
  const auto& beta = q.spec.beta();
  auto pairs = detail::axis_pairs(L, q.exclusions);
  auto mult1 = detail::axis_multiplicities(pairs);
  std::vector<std::vector<std::pair<long, std::uint64_t>>> mult(d, mult1);
  double est = 1;
  for (int i = 0; i < d; ++i) est *= static_cast<double>(mult1.size());
  check_budget(est * std::log2(est + 2.0) / static_cast<double>(mult1.size()), q.budget, "fast R_Z count");

  // sorted distinct B sums with prefix multiplicities
  std::vector<std::pair<double, std::uint64_t>> bv;
  detail::for_each_half_value(beta, h, d, mult, [&](double s, std::uint64_t m) { bv.push_back({s, m}); });
  std::sort(bv.begin(), bv.end());
  std::vector<double> bs;
  std::vector<std::uint64_t> prefix{0};
  for (auto& [s, m] : bv) {
    if (!bs.empty() && bs.back() == s) {
      prefix.back() = detail::checked_add(prefix.back(), m);
    } else {
      bs.push_back(s);
      prefix.push_back(detail::checked_add(prefix.back(), m));
    }
  }
  const double a = q.a, b = q.b;
  auto range = [&](double sa) {
    auto lo = std::partition_point(bs.begin(), bs.end(), [&](double v) { return sa + v < a; });
    auto hi = std::partition_point(lo, bs.end(), [&](double v) { return sa + v <= b; });
    return prefix[hi - bs.begin()] - prefix[lo - bs.begin()];
  };
  detail::for_each_half_value(beta, 0, h, mult, [&](double sa, std::uint64_t m) {
    r.count = detail::checked_add(r.count, detail::checked_mul(m, range(sa)));
  });
  // p = q contributes value 0 once per surviving diagonal configuration
  std::uint64_t diag = 1, per_axis = 0;
  for (auto& ap : pairs) per_axis += ap.equal;
  for (int i = 0; i < d; ++i) diag = detail::checked_mul(diag, per_axis);
  if (a <= 0.0 && 0.0 <= b) r.count -= diag;
  r.degenerate = 0;  // not tracked on the fast path
  r.seconds = detail::seconds_since(t0);
  finish(r, q, with_continuum);
  return r;
}

// ---------------------------------------------------------------------------
// Weighted sums, reports and audits

// sum over (p, q) in [0,L]^{2d}, p != q, of g(mu Q(p, q)), g = sinc^2, using
// per-axis multiplicities.
inline double rz_weighted_sum(const std::vector<double>& beta, int L, double mu) {
  const int d = static_cast<int>(beta.size());
  auto mult1 = detail::axis_multiplicities(detail::axis_pairs(L, {}));
  std::vector<std::vector<std::pair<long, std::uint64_t>>> mult(d, mult1);
  auto g = [mu](double x) {
    double y = kPi * mu * x;
    return std::abs(y) < 1e-8 ? 1.0 : std::pow(std::sin(y) / y, 2);
  };
  double total = 0;
  std::function<void(int, double, double)> rec = [&](int i, double s, double m) {
    if (i == d) {
      total += m * g(s);
      return;
    }
    for (auto& [w, c] : mult[i]) rec(i + 1, s + beta[i] * static_cast<double>(w), m * static_cast<double>(c));
  };
  rec(0, 0.0, 1.0);
  return total - std::pow(L + 1.0, d);  // p = q terms, g(0) = 1
}

struct LadderRow {
  double L = 0;
  double a = 0, b = 0;
  std::uint64_t count = 0;
  double continuum = 0, rel_error = 0, seconds = 0;
  bool converged = true;
};

struct WeightedRow {
  double L = 0, mu = 0, sum = 0, continuum = 0, rel_error = 0;
};

struct EquidistributionReport {
  std::vector<double> beta;
  std::vector<LadderRow> rows;
  std::vector<WeightedRow> weighted;
  bool decreasing = false;
  bool weighted_decreasing = true;

  nlohmann::json to_json() const {
    nlohmann::json j{{"beta", beta}, {"decreasing", decreasing}, {"weighted_decreasing", weighted_decreasing}};
    for (auto& r : rows)
      j["rows"].push_back({{"L", r.L}, {"window", {r.a, r.b}}, {"count", r.count}, {"continuum", r.continuum},
                           {"rel_error", r.rel_error}, {"seconds", r.seconds}, {"converged", r.converged}});
    for (auto& w : weighted)
      j["weighted"].push_back({{"L", w.L}, {"mu", w.mu}, {"sum", w.sum}, {"continuum", w.continuum},
                               {"rel_error", w.rel_error}});
    return j;
  }
};

struct WindowLaw {
  double coef = 1.0, exponent = 1.0;  // b - a = coef L^exponent
  double center_frac = 0.0;           // centre at center_frac L^2
  double width(double L) const { return coef * std::pow(L, exponent); }
  double center(double L) const { return center_frac * L * L; }
};

// R_Z counts against slab volumes across an L ladder; optionally the
// sinc^2-weighted sums at mu = t L^{-2}.
inline EquidistributionReport equidistribution_report(int d, const std::vector<double>& beta,
                                                      const std::vector<int>& ladder, const WindowLaw& law,
                                                      const std::vector<double>& mus = {}) {
  require(static_cast<int>(beta.size()) == d, "beta must have d entries");
  for (std::size_t i = 1; i < ladder.size(); ++i) require(ladder[i] > ladder[i - 1], "L ladder must increase");
  EquidistributionReport rep;
  rep.beta = beta;
  for (int L : ladder) {
    double w = law.width(L);
    CountQuery q{TorusSpec(d, L, beta, 0.0)};
    q.a = law.center(L) - 0.5 * w;
    q.b = law.center(L) + 0.5 * w;
    CountResult c = count_fast(q);
    rep.rows.push_back({double(L), q.a, q.b, c.count, c.continuum, c.rel_error, c.seconds, c.continuum_converged});
    for (double mu : mus) {
      double s = rz_weighted_sum(beta, L, mu);
      Volume v = rz_weighted_continuum(beta, L, mu);
      rep.weighted.push_back({double(L), mu, s, v.value, std::abs(s - v.value) / std::max(std::abs(v.value), 1.0)});
    }
  }
  rep.decreasing = true;
  for (std::size_t i = 1; i < rep.rows.size(); ++i)
    rep.decreasing = rep.decreasing && rep.rows[i].rel_error < rep.rows[i - 1].rel_error;
  for (std::size_t i = 0; i < rep.weighted.size(); ++i)
    for (std::size_t j = i + 1; j < rep.weighted.size(); ++j)
      if (rep.weighted[j].mu == rep.weighted[i].mu && rep.weighted[j].L > rep.weighted[i].L)
        rep.weighted_decreasing = rep.weighted_decreasing && rep.weighted[j].rel_error <= rep.weighted[i].rel_error;
  return rep;
}

// max/mean of window counts over shifted centres.
inline double concentration_ratio(const std::vector<double>& sorted_values, const std::vector<double>& centers,
                                  double width) {
  require(!centers.empty() && width > 0, "concentration needs centres and a positive width");
  double mx = 0, sum = 0;
  for (double c : centers) {
    double n = static_cast<double>(count_sorted(sorted_values, c - 0.5 * width, c + 0.5 * width));
    mx = std::max(mx, n);
    sum += n;
  }
  const double mean = sum / static_cast<double>(centers.size());
  return mean > 0 ? mx / mean : std::numeric_limits<double>::infinity();
}

struct AuditRow {
  double L = 0, lhs = 0, shape = 0, c = 0;
};

struct AuditReport {
  std::vector<AuditRow> rows;
  double growth_exponent = 0.1;
  double slack = 0.25;
  bool ok = true;

  nlohmann::json to_json() const {
    nlohmann::json j{{"growth_exponent", growth_exponent}, {"slack", slack}, {"ok", ok}};
    for (auto& r : rows) j["rows"].push_back({{"L", r.L}, {"lhs", r.lhs}, {"shape", r.shape}, {"c", r.c}});
    return j;
  }
};

inline void judge(AuditReport& rep) {
  rep.ok = true;
  for (std::size_t i = 1; i < rep.rows.size(); ++i) {
    double allowed = std::pow(rep.rows[i].L / rep.rows[i - 1].L, rep.growth_exponent) * (1 + rep.slack);
    rep.ok = rep.ok && rep.rows[i].c <= allowed * rep.rows[i - 1].c;
  }
}

// #R_Z against L^{2(d-1)}(b-a) + L^{d-1}; with refined = true (|a|, |b| <= 1)
// the second term is L^{d-2}.
inline AuditReport bound_audit(int d, const std::vector<double>& beta, const std::vector<int>& ladder, double a,
                               double b, bool refined = false, double slack = 0.25) {
  if (refined) require(std::abs(a) <= 1 && std::abs(b) <= 1, "refined bound needs |a|, |b| <= 1");
  AuditReport rep;
  rep.slack = slack;
  for (int L : ladder) {
    CountQuery q{TorusSpec(d, L, beta, 0.0)};
    q.a = a;
    q.b = b;
    double lhs = static_cast<double>(count_fast(q, false).count);
    double shape = std::pow(L, 2.0 * (d - 1)) * (b - a) + std::pow(L, refined ? d - 2.0 : d - 1.0);
    rep.rows.push_back({double(L), lhs, shape, lhs / shape});
  }
  judge(rep);
  return rep;
}

// sum over p != q in [0,L]^{2d} with |Q(p,q)| >= a of 1/Q^2, against L^{2d-2}/a.
inline AuditReport tail_sum_audit(int d, const std::vector<double>& beta, const std::vector<int>& ladder, double a,
                                  double slack = 0.25) {
  require(a > 0, "tail sum needs a > 0");
  AuditReport rep;
  rep.slack = slack;
  for (int L : ladder) {
    auto mult1 = detail::axis_multiplicities(detail::axis_pairs(L, {}));
    double lhs = 0;
    std::function<void(int, double, double)> rec = [&](int i, double s, double m) {
      if (i == d) {
        if (std::abs(s) >= a) lhs += m / (s * s);
        return;
      }
      for (auto& [w, c] : mult1) rec(i + 1, s + beta[i] * static_cast<double>(w), m * static_cast<double>(c));
    };
    rec(0, 0.0, 1.0);
    double shape = std::pow(L, 2.0 * d - 2) / a;
    rep.rows.push_back({double(L), lhs, shape, lhs / shape});
  }
  judge(rep);
  return rep;
}

// #{n in Z^d: |n_i| <= M, beta . n in [a, b]} by meet in the middle.
inline std::uint64_t linear_form_count(const std::vector<double>& beta, int M, double a, double b) {
  require(M >= 0 && a <= b, "linear form count needs M >= 0 and a <= b");
  const int d = static_cast<int>(beta.size()), h = detail::split_of(d);
  std::vector<std::pair<long, std::uint64_t>> axis;
  for (int n = -M; n <= M; ++n) axis.push_back({n, 1});
  std::vector<std::vector<std::pair<long, std::uint64_t>>> mult(d, axis);
  std::vector<double> bs;
  detail::for_each_half_value(beta, h, d, mult, [&](double s, std::uint64_t) { bs.push_back(s); });
  std::sort(bs.begin(), bs.end());
  std::uint64_t n = 0;
  detail::for_each_half_value(beta, 0, h, mult, [&](double sa, std::uint64_t) {
    auto lo = std::partition_point(bs.begin(), bs.end(), [&](double v) { return sa + v < a; });
    auto hi = std::partition_point(lo, bs.end(), [&](double v) { return sa + v <= b; });
    n += static_cast<std::uint64_t>(hi - lo);
  });
  return n;
}

inline AuditReport linear_form_audit(const std::vector<double>& beta, const std::vector<int>& Ms, double a, double b,
                                     double slack = 0.25) {
  const int d = static_cast<int>(beta.size());
  AuditReport rep;
  rep.slack = slack;
  rep.growth_exponent = 0.0;
  for (int M : Ms) {
    double lhs = static_cast<double>(linear_form_count(beta, M, a, b));
    double shape = std::pow(M, d - 1 + 0.1) * (b - a) + 1;
    rep.rows.push_back({double(M), lhs, shape, lhs / shape});
  }
  judge(rep);
  return rep;
}

inline void write_ladder_csv(const std::string& path, const std::vector<LadderRow>& rows) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out.precision(17);
  out << "L,count,continuum,rel_error,seconds\n";
  for (auto& r : rows) out << r.L << "," << r.count << "," << r.continuum << "," << r.rel_error << "," << r.seconds << "\n";
}

}  // namespace wke
