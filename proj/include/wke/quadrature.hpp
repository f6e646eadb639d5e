#pragma once

#include <gsl/gsl_integration.h>
#include <gsl/gsl_sf_legendre.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <vector>

#include "wke/core.hpp"

namespace wke {

struct Rule {
  std::vector<double> x, w;
  std::size_t size() const { return x.size(); }
};

// Gauss-Legendre nodes on [-1,1], ascending. Tables are cached per order.
inline const Rule& gauss_legendre_ref(int n) {
  static std::mutex mu;
  static std::map<int, Rule> cache;
  std::lock_guard<std::mutex> lk(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  require(n >= 1, "quadrature order must be positive");
  gsl_integration_glfixed_table* t = gsl_integration_glfixed_table_alloc(static_cast<std::size_t>(n));
  Rule r;
  r.x.resize(n);
  r.w.resize(n);
  std::vector<std::pair<double, double>> pts(n);
  for (int i = 0; i < n; ++i) gsl_integration_glfixed_point(-1.0, 1.0, i, &pts[i].first, &pts[i].second, t);
  gsl_integration_glfixed_table_free(t);
  std::sort(pts.begin(), pts.end());
  for (int i = 0; i < n; ++i) {
    r.x[i] = pts[i].first;
    r.w[i] = pts[i].second;
  }
  return cache.emplace(n, std::move(r)).first->second;
}

inline Rule gauss_legendre(int n, double a, double b) {
  const Rule& ref = gauss_legendre_ref(n);
  Rule r = ref;
  double h = 0.5 * (b - a), c = 0.5 * (a + b);
  for (int i = 0; i < n; ++i) {
    r.x[i] = c + h * ref.x[i];
    r.w[i] = h * ref.w[i];
  }
  return r;
}

// n-point Gauss-Legendre on each panel between consecutive breakpoints.
inline Rule composite_gauss(int n, const std::vector<double>& breaks) {
  Rule r;
  for (std::size_t p = 0; p + 1 < breaks.size(); ++p) {
    if (breaks[p + 1] <= breaks[p]) continue;
    Rule s = gauss_legendre(n, breaks[p], breaks[p + 1]);
    r.x.insert(r.x.end(), s.x.begin(), s.x.end());
    r.w.insert(r.w.end(), s.w.begin(), s.w.end());
  }
  return r;
}

// S[j][m] = integral from -1 to x_j of the m-th Lagrange basis polynomial on
// the Gauss nodes (spectral integration matrix on the reference panel).
inline std::vector<std::vector<double>> gauss_integration_matrix(int n) {
  const Rule& g = gauss_legendre_ref(n);
  std::vector<double> Pm(n + 1), Pj(n + 2);
  std::vector<std::vector<double>> S(n, std::vector<double>(n, 0.0));
  for (int m = 0; m < n; ++m) {
    gsl_sf_legendre_Pl_array(n, g.x[m], Pm.data());
    for (int j = 0; j < n; ++j) {
      gsl_sf_legendre_Pl_array(n + 1, g.x[j], Pj.data());
      double s = 0.5 * (g.x[j] + 1.0);  // l = 0 term
      for (int l = 1; l < n; ++l) s += 0.5 * Pm[l] * (Pj[l + 1] - Pj[l - 1]);
      S[j][m] = g.w[m] * s;
    }
  }
  return S;
}

// Barycentric Lagrange interpolation on arbitrary distinct nodes.
class Barycentric {
 public:
  Barycentric() = default;
  explicit Barycentric(std::vector<double> nodes) : x_(std::move(nodes)), lam_(x_.size(), 1.0) {
    const std::size_t n = x_.size();
    double scale = n > 1 ? (x_.back() - x_.front()) / 4.0 : 1.0;
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t l = 0; l < n; ++l)
        if (l != j) lam_[j] /= (x_[j] - x_[l]) / scale;
  }

  const std::vector<double>& nodes() const { return x_; }

  // Weights c_j such that p(x) = sum c_j f_j.
  void weights(double x, double* c) const {
    const std::size_t n = x_.size();
    for (std::size_t j = 0; j < n; ++j) {
      if (x == x_[j]) {
        std::fill(c, c + n, 0.0);
        c[j] = 1.0;
        return;
      }
    }
    double den = 0;
    for (std::size_t j = 0; j < n; ++j) {
      c[j] = lam_[j] / (x - x_[j]);
      den += c[j];
    }
    for (std::size_t j = 0; j < n; ++j) c[j] /= den;
  }

  double operator()(double x, const double* f) const {
    const std::size_t n = x_.size();
    double num = 0, den = 0;
    for (std::size_t j = 0; j < n; ++j) {
      double dx = x - x_[j];
      if (dx == 0) return f[j];
      double c = lam_[j] / dx;
      num += c * f[j];
      den += c;
    }
    return num / den;
  }

 private:
  std::vector<double> x_;
  std::vector<double> lam_;
};

// |sin(pi t w)/(pi w)|^2 with the limit t^2 at w = 0.
inline double sinc2(double t, double w) {
  double x = kPi * t * w;
  if (std::abs(x) < 1e-4) return t * t * (1.0 - x * x / 3.0);
  double s = std::sin(x) / (kPi * w);
  return s * s;
}

}  // namespace wke
