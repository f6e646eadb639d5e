#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include "wke/core.hpp"
#include "wke/lattice.hpp"
#include "wke/quadrature.hpp"
#include "wke/spectra.hpp"

namespace wke {

inline constexpr int kDefaultMaxDepth = 4;
inline constexpr double kDefaultTreeBudget = 5e8;

// ---------------------------------------------------------------------------
// Divided differences of exp and the oscillatory simplex integral

namespace detail {

inline constexpr int kSeriesDegree = 24;
inline constexpr std::size_t kMaxNodes = 32;

inline const std::array<double, kSeriesDegree + kMaxNodes + 1>& inverse_factorials() {
  static const auto table = [] {
    std::array<double, kSeriesDegree + kMaxNodes + 1> t{};
    double f = 1;
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (i > 0) f *= static_cast<double>(i);
      t[i] = 1.0 / f;
    }
    return t;
  }();
  return table;
}

}  // namespace detail

// e[x_0, ..., x_n] for f = exp, in place on x (reordered). Sub-ranges whose
// spread is at most 1 use a Taylor series about their mean, truncated once
// spread^p/p! drops below 1e-18; wider ranges use the recurrence, whose
// divisors are then at least 1.
inline cplx exp_divided_difference(cplx* x, std::size_t n) {
  require(n >= 1 && n <= detail::kMaxNodes, "divided difference needs 1..32 nodes");
  std::sort(x, x + n, [](const cplx& a, const cplx& b) {
    return a.imag() != b.imag() ? a.imag() < b.imag() : a.real() < b.real();
  });
  constexpr double kThreshold = 1.0;
  const auto& inv_fact = detail::inverse_factorials();
  auto spread = [&](std::size_t i, std::size_t j) {
    double s = 0;
    for (std::size_t a = i; a <= j; ++a)
      for (std::size_t b = a + 1; b <= j; ++b) s = std::max(s, std::abs(x[a] - x[b]));
    return s;
  };
  auto series = [&](std::size_t i, std::size_t j, double width) {
    cplx mu{};
    for (std::size_t a = i; a <= j; ++a) mu += x[a];
    mu /= static_cast<double>(j - i + 1);
    int degree = 0;
    for (double term = 1; degree < detail::kSeriesDegree && term > 1e-18;) {
      ++degree;
      term *= width / degree;
    }
    cplx h[detail::kSeriesDegree + 1] = {1.0};
    for (std::size_t a = i; a <= j; ++a) {
      cplx y = x[a] - mu;
      for (int p = 1; p <= degree; ++p) h[p] += y * h[p - 1];
    }
    const std::size_t order = j - i;
    cplx s{};
    for (int p = 0; p <= degree; ++p) s += h[p] * inv_fact[order + p];
    return (mu == cplx{} ? 1.0 : std::exp(mu)) * s;
  };
  // D[i] holds e[x_i .. x_{i+len}] for the current len
  cplx D[detail::kMaxNodes];
  for (std::size_t i = 0; i < n; ++i) D[i] = std::exp(x[i]);
  for (std::size_t len = 1; len < n; ++len) {
    for (std::size_t i = 0; i + len < n; ++i) {
      std::size_t j = i + len;
      double w = spread(i, j);
      if (w <= kThreshold)
        D[i] = series(i, j, w);
      else
        D[i] = (D[i + 1] - D[i]) / (x[j] - x[i]);
    }
  }
  return D[0];
}

inline cplx exp_divided_difference(std::vector<cplx> x) { return exp_divided_difference(x.data(), x.size()); }

// int over s in R_+^{n+1}, sum s = t, of prod_m exp(-2 pi i t_m(s) Omega_m) with
// t_m = s_0 + ... + s_{m-1}. With nodes c_j = Omega_{j+1} + ... + Omega_n this
// is t^n e[-2 pi i c_0 t, ..., -2 pi i c_n t].
inline cplx simplex_oscillatory_integral(const std::vector<double>& omega, double t) {
  require(t >= 0, "simplex integral needs t >= 0");
  const std::size_t n = omega.size();
  if (n == 0) return 1.0;
  if (t == 0) return 0.0;
  require(n < detail::kMaxNodes, "simplex integral supports at most 31 levels");
  cplx x[detail::kMaxNodes];
  double c = 0;
  x[n] = 0;
  for (std::size_t j = n; j-- > 0;) {
    c += omega[j];
    x[j] = cplx(0.0, -kTwoPi * c * t);
  }
  return std::pow(t, static_cast<double>(n)) * exp_divided_difference(x, n + 1);
}

// ---------------------------------------------------------------------------
// Tree indices

struct TreeIndex {
  int n = 0;
  std::vector<int> ell;  // ell[j-1] = l_j in {1, ..., 2(n-j)+1}

  int signature() const {
    int s = 1;
    for (int l : ell)
      if (l % 2 == 0) s = -s;
    return s;
  }

  std::string label() const {
    std::string s = "(";
    for (std::size_t i = 0; i < ell.size(); ++i) s += (i ? "," : "") + std::to_string(ell[i]);
    return s + ")";
  }

  void validate() const {
    require(n >= 0 && static_cast<int>(ell.size()) == n, "tree index length must equal its depth");
    for (int j = 1; j <= n; ++j)
      require(ell[j - 1] >= 1 && ell[j - 1] <= 2 * (n - j) + 1, "tree index component out of range");
  }
};

inline std::vector<TreeIndex> enumerate_indices(int n, int max_depth = kDefaultMaxDepth) {
  require(n >= 0, "tree depth must be nonnegative");
  if (n > max_depth)
    throw BudgetExceeded("tree depth " + std::to_string(n) + " exceeds the configured maximum",
                         static_cast<double>(n), static_cast<double>(max_depth));
  std::vector<TreeIndex> out;
  TreeIndex cur;
  cur.n = n;
  cur.ell.assign(n, 1);
  while (true) {
    out.push_back(cur);
    int j = n;
    while (j >= 1) {
      if (cur.ell[j - 1] < 2 * (n - j) + 1) {
        ++cur.ell[j - 1];
        break;
      }
      cur.ell[j - 1] = 1;
      --j;
    }
    if (j < 1) break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Leaf assignments

enum class AssignmentFilter { all, all_degenerate };

struct Assignment {
  const std::vector<std::vector<std::size_t>>& levels;  // levels[j], j = 0..n; levels[n] = {k}
  const std::vector<double>& omega;                     // omega[j-1] for the transition j -> j-1
  int multiplicity;  // product over levels of the number of ways the level degenerates
  bool all_degenerate;
};

// Signed leaf multiplicities: +1 for every leaf a_q, -1 for every conj(a_q).
using ChargeMap = std::map<std::size_t, int>;

inline double assignment_work(const TorusSpec& spec, int n, AssignmentFilter f, bool targeted = false) {
  const double N = static_cast<double>(spec.size());
  if (f == AssignmentFilter::all_degenerate) return std::pow(2.0 * N, n);
  if (targeted && n >= 1) return std::pow(N, 2.0 * (n - 1)) * (N + 8.0);
  return std::pow(N, 2.0 * n);
}

// Walks every admissible assignment of the tree rooted at mode k, top level
// first. Every level expands the momentum at position l_j into a triple with
// k_{j,l} = k_{j-1,l} - k_{j-1,l+1} + k_{j-1,l+2}, all inside the cutoff.
//
// With a target, only assignments whose leaf charge equals it are visited.
// The last level then solves {p1} + {p3} - {p2} = R for the residual R left
// by the other leaves: either p2 is distinct from p1 and p3, so all three come
// from the support of R, or p2 cancels p1 or p3 and R must be the parent alone.
template <class F>
void for_each_assignment(const TorusSpec& spec, const TreeIndex& idx, std::size_t k, AssignmentFilter filter,
                         F&& visit, double budget = kDefaultTreeBudget, const ChargeMap* target = nullptr) {
  idx.validate();
  const bool targeted = target != nullptr && filter == AssignmentFilter::all;
  check_budget(assignment_work(spec, idx.n, filter, targeted), budget,
               "tree enumeration for n=" + std::to_string(idx.n));
  const int n = idx.n;
  std::vector<std::vector<std::size_t>> levels(n + 1);
  std::vector<double> omega(n, 0.0);
  levels[n] = {k};
  std::vector<int> ways(n + 1, 1);
  std::vector<char> deg(n + 1, 1);

  auto descend = [&](auto&& self, int j) -> void {
    if (j == 0) {
      int mult = 1;
      bool all = true;
      for (int l = 1; l <= n; ++l) {
        mult *= ways[l];
        all = all && deg[l];
      }
      visit(Assignment{levels, omega, all ? mult : 0, all});
      return;
    }
    const auto& up = levels[j];
    const std::size_t pos = static_cast<std::size_t>(idx.ell[j - 1] - 1);
    const std::size_t m = up[pos];
    const double sigma = pos % 2 == 0 ? 1.0 : -1.0;
    auto& down = levels[j - 1];
    down.resize(up.size() + 2);
    for (std::size_t i = 0; i < pos; ++i) down[i] = up[i];
    for (std::size_t i = pos + 1; i < up.size(); ++i) down[i + 2] = up[i];
    auto take = [&](std::size_t a, std::size_t b, std::size_t c) {
      down[pos] = a;
      down[pos + 1] = b;
      down[pos + 2] = c;
      omega[j - 1] = sigma * (spec.q(m) - spec.q(a) + spec.q(b) - spec.q(c));
      ways[j] = static_cast<int>(m == a) + static_cast<int>(m == c);
      deg[j] = ways[j] > 0;
      self(self, j - 1);
    };
    if (targeted && j == 1) {
      ChargeMap rest = *target;
      for (std::size_t i = 0; i < up.size(); ++i)
        if (i != pos) rest[up[i]] -= (i % 2 == 0) ? 1 : -1;
      std::vector<std::size_t> plus, minus;
      for (auto& [mode, c] : rest) {
        int v = static_cast<int>(sigma) * c;
        for (int r = 0; r < v; ++r) plus.push_back(mode);
        for (int r = 0; r < -v; ++r) minus.push_back(mode);
      }
      if (plus.size() == 2 && minus.size() == 1) {
        const IVec want = spec.mode(plus[0]) - spec.mode(minus[0]) + spec.mode(plus[1]);
        if (want == spec.mode(m)) {
          take(plus[0], minus[0], plus[1]);
          if (plus[1] != plus[0]) take(plus[1], minus[0], plus[0]);
        }
      } else if (plus.size() == 1 && minus.empty() && plus[0] == m) {
        for (std::size_t q = 0; q < spec.size(); ++q) {
          take(q, q, m);
          if (q != m) take(m, q, q);
        }
      }
    } else if (filter == AssignmentFilter::all) {
      spec.for_each_triple(m, take);
    } else {
      for (std::size_t q = 0; q < spec.size(); ++q) {
        take(m, q, q);
        if (q != m) take(q, q, m);
      }
    }
  };
  descend(descend, n);
}

inline cplx tree_prefactor(const TorusSpec& spec, int n, double lambda) {
  const cplx ic(0.0, lambda * lambda / (spec.Ld() * spec.Ld()));
  return std::pow(ic, n);
}

inline cplx leaf_product(const std::vector<std::size_t>& leaves, const Field& a0) {
  cplx p = 1.0;
  for (std::size_t m = 0; m < leaves.size(); ++m) p *= (m % 2 == 0) ? a0[leaves[m]] : std::conj(a0[leaves[m]]);
  return p;
}

// J_{n,l}(t, k) for the data a0.
inline cplx evaluate_J(const TorusSpec& spec, const TreeIndex& idx, double t, std::size_t k, const Field& a0,
                       double lambda, double budget = kDefaultTreeBudget) {
  require(a0.size() == spec.size(), "field length does not match the lattice");
  if (idx.n == 0) return a0[k];
  cplx acc{};
  for_each_assignment(
      spec, idx, k, AssignmentFilter::all,
      [&](const Assignment& as) { acc += leaf_product(as.levels[0], a0) * simplex_oscillatory_integral(as.omega, t); },
      budget);
  return tree_prefactor(spec, idx.n, lambda) * static_cast<double>(idx.signature()) * acc;
}

// sum over all trees of depth n
inline cplx evaluate_J_level(const TorusSpec& spec, int n, double t, std::size_t k, const Field& a0, double lambda,
                             double budget = kDefaultTreeBudget) {
  cplx s{};
  for (auto& idx : enumerate_indices(n)) s += evaluate_J(spec, idx, t, k, a0, lambda, budget);
  return s;
}

// Degenerate transition: the expanded momentum equals its first or third child.
inline bool is_degenerate(const Assignment& as) { return as.all_degenerate; }

inline bool is_degenerate_transition(std::size_t parent, std::size_t c1, std::size_t c3) {
  return parent == c1 || parent == c3;
}

// 2^n (t^n/n!) (i lambda^2/L^{2d})^n sigma a_k (sum_q |a_q|^2)^n
inline cplx evaluate_D(const TorusSpec& spec, const TreeIndex& idx, double t, std::size_t k, const Field& a0,
                       double lambda) {
  idx.validate();
  double s = 0;
  for (auto& v : a0) s += std::norm(v);
  const int n = idx.n;
  double scalar = std::pow(2.0 * t * s, n) / std::tgamma(n + 1.0);
  return tree_prefactor(spec, n, lambda) * static_cast<double>(idx.signature()) * scalar * a0[k];
}

// ---------------------------------------------------------------------------
// Exact expectations of tree products

namespace detail {

inline constexpr std::size_t kMaxTreeLeaves = 64;

struct VecHash {
  std::size_t operator()(const std::vector<int>& v) const {
    std::uint64_t h = 1469598103934665603ULL;
    for (int x : v) {
      h ^= static_cast<std::uint32_t>(x);
      h *= 1099511628211ULL;
    }
    return static_cast<std::size_t>(h);
  }
};

// Net signed multiplicity per mode, as sorted (mode, count) pairs.
inline std::vector<int> charge_key(const std::vector<std::size_t>& leaves) {
  std::array<std::pair<int, int>, 2 * kMaxTreeLeaves> buf;
  const std::size_t n = leaves.size();
  require(n <= buf.size(), "tree too deep for charge bookkeeping");
  for (std::size_t m = 0; m < n; ++m) buf[m] = {static_cast<int>(leaves[m]), (m % 2 == 0) ? 1 : -1};
  std::sort(buf.begin(), buf.begin() + n);
  std::vector<int> key;
  for (std::size_t i = 0; i < n;) {
    int mode = buf[i].first, cnt = 0;
    for (; i < n && buf[i].first == mode; ++i) cnt += buf[i].second;
    if (cnt != 0) {
      key.push_back(mode);
      key.push_back(cnt);
    }
  }
  return key;
}

// plus-leaves sorted, separator, minus-leaves sorted
inline std::vector<int> monomial_key(const std::vector<std::size_t>& leaves) {
  std::vector<int> p, m;
  for (std::size_t i = 0; i < leaves.size(); ++i) (i % 2 == 0 ? p : m).push_back(static_cast<int>(leaves[i]));
  std::sort(p.begin(), p.end());
  std::sort(m.begin(), m.end());
  p.push_back(-1);
  p.insert(p.end(), m.begin(), m.end());
  return p;
}

}  // namespace detail

// A tree term written as sum over monomials in the data, grouped by net charge.
// Under uniform phases E[mono_A conj(mono_B)] = [charge_A = charge_B] prod sqrt(phi)
// over the leaves of both, so each charge class collapses to one number.
struct TreeExpansion {
  int n = 0;
  PhaseModel model = PhaseModel::uniform;
  std::unordered_map<std::vector<int>, cplx, detail::VecHash> by_charge;  // uniform
  std::unordered_map<std::vector<int>, std::unordered_map<std::vector<int>, cplx, detail::VecHash>, detail::VecHash>
      monomials;  // gaussian: charge -> monomial -> coefficient
};

inline TreeExpansion expand_tree(const TorusSpec& spec, const TreeIndex& idx, double t, std::size_t k,
                                 const std::vector<double>& phi, double lambda, PhaseModel model,
                                 AssignmentFilter filter = AssignmentFilter::all,
                                 double budget = kDefaultTreeBudget, const ChargeMap* target = nullptr) {
  require(phi.size() == spec.size(), "profile length does not match the lattice");
  TreeExpansion ex;
  ex.n = idx.n;
  ex.model = model;
  const cplx pre = tree_prefactor(spec, idx.n, lambda) * static_cast<double>(idx.signature());
  std::vector<double> root(phi.size());
  for (std::size_t i = 0; i < phi.size(); ++i) root[i] = std::sqrt(phi[i]);
  auto add = [&](const std::vector<std::size_t>& leaves, cplx coef) {
    if (model == PhaseModel::uniform) {
      double w = 1;
      for (auto l : leaves) w *= root[l];
      if (w == 0) return;
      ex.by_charge[detail::charge_key(leaves)] += coef * w;
    } else {
      ex.monomials[detail::charge_key(leaves)][detail::monomial_key(leaves)] += coef;
    }
  };
  if (idx.n == 0) {
    add({k}, 1.0);
    return ex;
  }
  for_each_assignment(
      spec, idx, k, filter,
      [&](const Assignment& as) {
        double mult = filter == AssignmentFilter::all_degenerate ? as.multiplicity : 1.0;
        add(as.levels[0], mult * pre * simplex_oscillatory_integral(as.omega, t));
      },
      budget, target);
  return ex;
}

// E(A conj(B)) for two expansions.
inline cplx expectation(const TreeExpansion& A, const TreeExpansion& B, const std::vector<double>& phi) {
  require(A.model == B.model, "expansions use different phase models");
  cplx s{};
  if (A.model == PhaseModel::uniform) {
    for (auto& [key, va] : A.by_charge) {
      auto it = B.by_charge.find(key);
      if (it != B.by_charge.end()) s += va * std::conj(it->second);
    }
    return s;
  }
  auto counts = [](const std::vector<int>& mono, bool plus_side, std::map<std::size_t, int>& plus,
                   std::map<std::size_t, int>& minus) {
    bool first = true;
    for (int v : mono) {
      if (v < 0) {
        first = false;
        continue;
      }
      bool is_plus = first == plus_side;
      (is_plus ? plus : minus)[static_cast<std::size_t>(v)] += 1;
    }
  };
  for (auto& [key, ma] : A.monomials) {
    auto it = B.monomials.find(key);
    if (it == B.monomials.end()) continue;
    for (auto& [mono_a, ca] : ma)
      for (auto& [mono_b, cb] : it->second) {
        std::map<std::size_t, int> plus, minus;
        counts(mono_a, true, plus, minus);
        counts(mono_b, false, plus, minus);  // conj(B): its plus leaves become minus
        s += ca * std::conj(cb) * moment_expectation(plus, minus, phi, PhaseModel::gaussian);
      }
  }
  return s;
}

inline double correlation_work(const TorusSpec& spec, int n, int np) {
  return assignment_work(spec, n, AssignmentFilter::all) + assignment_work(spec, np, AssignmentFilter::all);
}

// E(J_{n,l}(t,k) conj(J_{n',l'}(t,k))) for random-phase data with |a_k|^2 = phi_k.
// A depth-0 partner is a_k itself, so the other tree only needs its charge-{k}
// assignments.
inline cplx correlation(const TorusSpec& spec, const TreeIndex& a, const TreeIndex& b, double t, std::size_t k,
                        const std::vector<double>& phi, double lambda, PhaseModel model = PhaseModel::uniform,
                        int max_order = 4, double budget = kDefaultTreeBudget) {
  if (a.n + b.n > max_order)
    throw BudgetExceeded("correlation order n+n' exceeds the configured maximum", a.n + b.n, max_order);
  const ChargeMap root{{k, 1}};
  const ChargeMap* ta = b.n == 0 ? &root : nullptr;
  const ChargeMap* tb = a.n == 0 ? &root : nullptr;
  auto A = expand_tree(spec, a, t, k, phi, lambda, model, AssignmentFilter::all, budget, ta);
  auto B = expand_tree(spec, b, t, k, phi, lambda, model, AssignmentFilter::all, budget, tb);
  return expectation(A, B, phi);
}

struct CorrelationRow {
  TreeIndex a, b;
  cplx value;
};

// All E(J_{n,l} conj(J_{n',l'})) with n + n' in [lo, hi].
inline std::vector<CorrelationRow> correlation_table(const TorusSpec& spec, int lo, int hi, double t, std::size_t k,
                                                     const std::vector<double>& phi, double lambda,
                                                     PhaseModel model = PhaseModel::uniform,
                                                     double budget = kDefaultTreeBudget) {
  require(lo >= 0 && lo <= hi, "bad correlation order range");
  // a tree whose only partner in range is depth 0 needs just its charge-{k} part
  const ChargeMap root{{k, 1}};
  std::vector<std::pair<TreeIndex, TreeExpansion>> ex;
  for (int n = 0; n <= hi; ++n) {
    const ChargeMap* target = n >= 1 && n + 1 > hi ? &root : nullptr;
    for (auto& idx : enumerate_indices(n))
      ex.emplace_back(idx, expand_tree(spec, idx, t, k, phi, lambda, model, AssignmentFilter::all, budget, target));
  }
  std::vector<CorrelationRow> rows;
  for (auto& [ia, ea] : ex)
    for (auto& [ib, eb] : ex) {
      int s = ia.n + ib.n;
      if (s < lo || s > hi) continue;
      rows.push_back({ia, ib, expectation(ea, eb, phi)});
    }
  return rows;
}

// phi_k + sum over 1 <= n + n' <= 2 of the exact tree correlations. The
// n + n' = 1 terms are purely imaginary pairs and cancel in the sum; they are
// kept so the value is the complete lambda^4 truncation.
inline double second_moment_expansion(const TorusSpec& spec, double t, std::size_t k, const std::vector<double>& phi,
                                      double lambda, int order, PhaseModel model = PhaseModel::uniform,
                                      double budget = kDefaultTreeBudget) {
  require(order == 0 || order == 2, "second moment order must be 0 or 2");
  double base = phi[k];
  if (model == PhaseModel::gaussian) base = phi[k];
  if (order == 0 || t == 0 || lambda == 0) return base;
  cplx s{};
  for (auto& row : correlation_table(spec, 1, 2, t, k, phi, lambda, model, budget)) s += row.value;
  return base + s.real();
}

// phi_k + (2 lambda^4/L^{4d}) sum phi phi phi phi [1/phi - 1/phi1 + 1/phi2 - 1/phi3] sinc^2
inline double second_moment_leading(const TorusSpec& spec, double t, std::size_t k, const std::vector<double>& phi,
                                    double lambda) {
  const double c = lambda * lambda / (spec.Ld() * spec.Ld());
  double s = 0;
  const double p0 = phi[k];
  spec.for_each_triple(k, [&](std::size_t a, std::size_t b, std::size_t cc) {
    const double p1 = phi[a], p2 = phi[b], p3 = phi[cc];
    double g = p1 * p2 * p3 - p0 * p2 * p3 + p0 * p1 * p3 - p0 * p1 * p2;
    if (g != 0) s += g * sinc2(t, spec.omega(k, a, b, cc));
  });
  return p0 + 2.0 * c * c * s;
}

struct CancellationResult {
  cplx sum;
  double scale;  // sum of |E(D D')| over the individual pairs
  std::vector<CorrelationRow> rows;
};

// sum_{n+n'=S} sum_{l,l'} E(D_{n,l} conj(D_{n',l'})) with every D_{n,l} built
// from its all-degenerate assignments, each weighted by the number of ways its
// levels degenerate.
inline CancellationResult degenerate_cancellation(int S, const TorusSpec& spec, const std::vector<double>& phi,
                                                  double t, std::size_t k, double lambda,
                                                  int max_depth = kDefaultMaxDepth,
                                                  double budget = kDefaultTreeBudget) {
  require(S >= 1, "cancellation order must be at least 1");
  if (S > max_depth) throw BudgetExceeded("cancellation order exceeds the depth budget", S, max_depth);
  std::vector<std::pair<TreeIndex, TreeExpansion>> ex;
  for (int n = 0; n <= S; ++n)
    for (auto& idx : enumerate_indices(n, max_depth))
      ex.emplace_back(idx, expand_tree(spec, idx, t, k, phi, lambda, PhaseModel::uniform,
                                       AssignmentFilter::all_degenerate, budget));
  CancellationResult res{0.0, 0.0, {}};
  for (auto& [ia, ea] : ex)
    for (auto& [ib, eb] : ex) {
      if (ia.n + ib.n != S) continue;
      cplx v = expectation(ea, eb, phi);
      res.sum += v;
      res.scale += std::abs(v);
      res.rows.push_back({ia, ib, v});
    }
  return res;
}

// ---------------------------------------------------------------------------
// Pairings

using Pairing = std::vector<int>;  // psi[j-1] = psi(j), leaves numbered 1..2n+2n'+2

inline int combined_parity(int n, int j) {
  int first = 2 * n + 1;
  if (j <= first) return (j % 2 == 1) ? 1 : -1;
  int jp = j - first;
  return (jp % 2 == 1) ? -1 : 1;
}

inline std::vector<Pairing> enumerate_pairings(int n, int np, double budget = 1e7) {
  require(n >= 0 && np >= 0, "tree depths must be nonnegative");
  const int total = 2 * n + 2 * np + 2;
  std::vector<int> plus, minus;
  for (int j = 1; j <= total; ++j) (combined_parity(n, j) > 0 ? plus : minus).push_back(j);
  check_budget(std::tgamma(plus.size() + 1.0), budget, "pairing enumeration");
  std::vector<Pairing> out;
  std::vector<int> perm(minus.size());
  std::iota(perm.begin(), perm.end(), 0);
  do {
    Pairing psi(total, 0);
    for (std::size_t i = 0; i < plus.size(); ++i) {
      psi[plus[i] - 1] = minus[perm[i]];
      psi[minus[perm[i]] - 1] = plus[i];
    }
    out.push_back(std::move(psi));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return out;
}

inline void write_correlation_csv(const std::string& path, const std::vector<CorrelationRow>& rows) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out.precision(17);
  out << "n,ell,n_prime,ell_prime,re,im\n";
  for (auto& r : rows)
    out << r.a.n << ",\"" << r.a.label() << "\"," << r.b.n << ",\"" << r.b.label() << "\"," << r.value.real() << ","
        << r.value.imag() << "\n";
}

}  // namespace wke
