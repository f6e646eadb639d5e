#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "wke/core.hpp"

namespace wke {

enum class CutoffShape { ball, box };

// Truncated frequency lattice Z^d_L with the diagonal form Q(k) = sum beta_i k_i^2.
// Modes are integer vectors K = L k kept in lexicographic order.
class TorusSpec {
 public:
  TorusSpec(int d, double L, std::vector<double> beta, double cutoff,
            CutoffShape shape = CutoffShape::ball,
            std::optional<std::uint64_t> beta_seed = std::nullopt)
      : d_(d), L_(L), beta_(std::move(beta)), cutoff_(cutoff), shape_(shape), seed_(beta_seed) {
    require(d_ >= 1 && d_ <= kMaxDim, "dimension must be in 1..4");
    require(L_ > 0 && std::isfinite(L_), "box size L must be positive");
    require(static_cast<int>(beta_.size()) == d_, "beta must have d entries");
    for (double b : beta_) require(b >= 1.0 && b <= 2.0, "beta entries must lie in [1,2]");
    require(cutoff_ >= 0 && std::isfinite(cutoff_), "cutoff must be nonnegative");
    build();
  }

  // beta drawn uniformly from [1,2]^d with a recorded seed.
  static TorusSpec generic(int d, double L, double cutoff, std::uint64_t seed,
                           CutoffShape shape = CutoffShape::ball) {
    std::mt19937_64 gen(seed);
    std::vector<double> beta(d);
    for (auto& b : beta) b = 1.0 + static_cast<double>(gen() >> 11) * 0x1.0p-53;
    return TorusSpec(d, L, beta, cutoff, shape, seed);
  }

  static TorusSpec rational(int d, double L, double cutoff,
                            CutoffShape shape = CutoffShape::ball) {
    return TorusSpec(d, L, std::vector<double>(d, 1.0), cutoff, shape);
  }

  int d() const { return d_; }
  double L() const { return L_; }
  const std::vector<double>& beta() const { return beta_; }
  double cutoff() const { return cutoff_; }
  CutoffShape shape() const { return shape_; }
  std::optional<std::uint64_t> beta_seed() const { return seed_; }
  std::size_t size() const { return modes_.size(); }
  int kmax() const { return kmax_; }
  const std::vector<IVec>& modes() const { return modes_; }
  const IVec& mode(std::size_t r) const { return modes_[r]; }
  double q(std::size_t r) const { return q_[r]; }
  const std::vector<double>& q_values() const { return q_; }
  double Ld() const { return std::pow(L_, d_); }

  bool contains(const IVec& K) const { return rank(K) >= 0; }

  // Rank of K in canonical order, or -1 if K is outside the cutoff.
  long rank(const IVec& K) const {
    std::size_t idx = 0;
    for (int i = 0; i < d_; ++i) {
      int c = K[i] + kmax_;
      if (c < 0 || c > 2 * kmax_) return -1;
      idx = idx * static_cast<std::size_t>(2 * kmax_ + 1) + static_cast<std::size_t>(c);
    }
    for (int i = d_; i < kMaxDim; ++i)
      if (K[i] != 0) return -1;
    return table_[idx];
  }

  RVec k_of(const IVec& K) const {
    RVec k{};
    for (int i = 0; i < d_; ++i) k[i] = K[i] / L_;
    return k;
  }

  double q_form(const IVec& K) const {
    double s = 0;
    for (int i = 0; i < d_; ++i) {
      double ki = K[i] / L_;
      s += beta_[i] * ki * ki;
    }
    return s;
  }

  double q_form(const RVec& k) const {
    double s = 0;
    for (int i = 0; i < d_; ++i) s += beta_[i] * k[i] * k[i];
    return s;
  }

  double omega(std::size_t k, std::size_t k1, std::size_t k2, std::size_t k3) const {
    return q_[k] - q_[k1] + q_[k2] - q_[k3];
  }

  double omega(const IVec& k, const IVec& k1, const IVec& k2, const IVec& k3) const {
    return q_form(k) - q_form(k1) + q_form(k2) - q_form(k3);
  }

  // Calls f(k1, k2, k3) for every admissible triple with k - k1 + k2 - k3 = 0.
  template <class F>
  void for_each_triple(std::size_t k, F&& f) const {
    const IVec& K = modes_[k];
    const std::size_t n = modes_.size();
    for (std::size_t a = 0; a < n; ++a) {
      IVec base = K - modes_[a];
      for (std::size_t b = 0; b < n; ++b) {
        long c = rank(base + modes_[b]);
        if (c >= 0) f(a, b, static_cast<std::size_t>(c));
      }
    }
  }

  std::vector<std::array<std::size_t, 3>> sigma_zero_triples(std::size_t k) const {
    std::vector<std::array<std::size_t, 3>> out;
    for_each_triple(k, [&](std::size_t a, std::size_t b, std::size_t c) { out.push_back({a, b, c}); });
    return out;
  }

  // Largest |Omega| over admissible quadruples (upper bound, used for step sizes).
  double omega_bound() const {
    double qmax = 0;
    for (double v : q_) qmax = std::max(qmax, v);
    return 2.0 * qmax;
  }

  nlohmann::json to_json() const {
    nlohmann::json j{{"d", d_}, {"L", L_}, {"beta", beta_}, {"cutoff", cutoff_},
                     {"shape", shape_ == CutoffShape::ball ? "ball" : "box"}};
    if (seed_) j["beta_seed"] = *seed_;
    return j;
  }

  // Accepts {d, L, beta, cutoff, beta_seed?, shape?}; beta may be "generic" or
  // "rational" instead of an explicit list.
  static TorusSpec from_json(const nlohmann::json& j) {
    try {
      int d = j.at("d").get<int>();
      double L = j.at("L").get<double>();
      double cutoff = j.value("cutoff", 1.0);
      CutoffShape shape = CutoffShape::ball;
      if (j.contains("shape")) {
        auto s = j.at("shape").get<std::string>();
        require(s == "ball" || s == "box", "shape must be ball or box");
        shape = s == "ball" ? CutoffShape::ball : CutoffShape::box;
      }
      std::optional<std::uint64_t> seed;
      if (j.contains("beta_seed")) seed = j.at("beta_seed").get<std::uint64_t>();
      const auto& b = j.at("beta");
      if (b.is_string()) {
        auto kind = b.get<std::string>();
        if (kind == "rational") return rational(d, L, cutoff, shape);
        require(kind == "generic", "beta must be a list, \"generic\" or \"rational\"");
        return generic(d, L, cutoff, seed.value_or(0), shape);
      }
      return TorusSpec(d, L, b.get<std::vector<double>>(), cutoff, shape, seed);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("torus spec: ") + e.what());
    }
  }

 private:
  void build() {
    kmax_ = static_cast<int>(std::floor(cutoff_ * L_ + 1e-9));
    const std::size_t side = static_cast<std::size_t>(2 * kmax_ + 1);
    std::size_t total = 1;
    for (int i = 0; i < d_; ++i) total *= side;
    require(total <= (std::size_t{1} << 28), "lattice too large for this cutoff and L");
    table_.assign(total, -1);
    IVec K{};
    for (int i = 0; i < d_; ++i) K[i] = -kmax_;
    // lexicographic walk over the enclosing box
    for (std::size_t idx = 0; idx < total; ++idx) {
      if (inside(K)) {
        table_[idx] = static_cast<long>(modes_.size());
        modes_.push_back(K);
        q_.push_back(q_form(K));
      }
      for (int i = d_ - 1; i >= 0; --i) {
        if (++K[i] <= kmax_) break;
        K[i] = -kmax_;
      }
    }
  }

  bool inside(const IVec& K) const {
    const double tol = 1e-12 * (1.0 + cutoff_ * cutoff_);
    if (shape_ == CutoffShape::box) {
      for (int i = 0; i < d_; ++i)
        if (std::abs(K[i] / L_) > cutoff_ + tol) return false;
      return true;
    }
    double r2 = 0;
    for (int i = 0; i < d_; ++i) r2 += (K[i] / L_) * (K[i] / L_);
    return r2 <= cutoff_ * cutoff_ + tol;
  }

  int d_;
  double L_;
  std::vector<double> beta_;
  double cutoff_;
  CutoffShape shape_;
  std::optional<std::uint64_t> seed_;
  int kmax_ = 0;
  std::vector<IVec> modes_;
  std::vector<double> q_;
  std::vector<long> table_;
};

}  // namespace wke
