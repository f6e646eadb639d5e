#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "wke/core.hpp"
#include "wke/lattice.hpp"
#include "wke/quadrature.hpp"
#include "wke/spectra.hpp"
#include "wke/transform.hpp"

namespace wke {

enum class NonlinearityPath { direct_convolution, padded_transform };
enum class Integrator { exponential_rk4, picard };

struct SolverConfig {
  double dt = 0;  // 0 selects the default step
  Integrator integrator = Integrator::exponential_rk4;
  NonlinearityPath path = NonlinearityPath::direct_convolution;
  std::vector<double> snapshots;  // extra output times inside (0, t_end)
  int picard_order = 8;
  int threads = 1;  // data-parallel loop over modes in the direct path

  nlohmann::json to_json() const {
    return {{"dt", dt},
            {"integrator", integrator == Integrator::picard ? "picard" : "exponential_rk4"},
            {"path", path == NonlinearityPath::padded_transform ? "padded_transform" : "direct_convolution"},
            {"picard_order", picard_order}};
  }

  static SolverConfig from_json(const nlohmann::json& j) {
    SolverConfig c;
    c.dt = j.value("dt", 0.0);
    require(c.dt >= 0, "dt must be positive (or 0 for the default)");
    auto integ = j.value("integrator", std::string("exponential_rk4"));
    require(integ == "exponential_rk4" || integ == "picard", "unknown integrator " + integ);
    c.integrator = integ == "picard" ? Integrator::picard : Integrator::exponential_rk4;
    auto path = j.value("path", std::string("direct_convolution"));
    require(path == "direct_convolution" || path == "padded_transform", "unknown nonlinearity path " + path);
    c.path = path == "padded_transform" ? NonlinearityPath::padded_transform : NonlinearityPath::direct_convolution;
    c.picard_order = j.value("picard_order", 8);
    require(c.picard_order >= 0, "picard_order must be nonnegative");
    return c;
  }
};

inline double mass(const TorusSpec& spec, const Field& a) {
  double s = 0;
  for (auto& v : a) s += std::norm(v);
  return s / spec.Ld();
}

// Right-hand side of the interaction-picture system
//   d/dt a_k = i (lambda/L^d)^2 sum_{k-k1+k2-k3=0} a_k1 conj(a_k2) a_k3 e^{-2 pi i t Omega}.
// Both paths move to u_k = a_k e^{2 pi i t Q(k)}, where the phase factors out of
// the sum; the direct path then sums over triples, the transform path multiplies
// on the padded grid.
class Nonlinearity {
 public:
  Nonlinearity(const TorusSpec& spec, double lambda, NonlinearityPath path, int threads = 1)
      : spec_(spec), path_(path), threads_(std::max(1, threads)) {
    coupling_ = lambda * lambda / (spec.Ld() * spec.Ld());
    if (path_ == NonlinearityPath::padded_transform) grid_ = std::make_unique<PaddedGrid>(spec);
    u_.resize(spec.size());
    s_.resize(spec.size());
    phase_.resize(spec.size());
  }

  void operator()(const Field& a, double t, Field& out) {
    const std::size_t n = spec_.size();
    out.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
      double th = kTwoPi * t * spec_.q(r);
      phase_[r] = cplx(std::cos(th), std::sin(th));
      u_[r] = a[r] * phase_[r];
    }
    if (path_ == NonlinearityPath::padded_transform) {
      grid_->cubic(u_.data(), s_.data());
    } else {
      parallel_for(n, static_cast<std::size_t>(threads_), [&](std::size_t r) { s_[r] = direct_sum(r); });
    }
    const cplx ic(0.0, coupling_);
    for (std::size_t r = 0; r < n; ++r) out[r] = ic * std::conj(phase_[r]) * s_[r];
  }

 private:
  cplx direct_sum(std::size_t k) const {
    const IVec& K = spec_.mode(k);
    const std::size_t n = spec_.size();
    cplx acc{};
    for (std::size_t a = 0; a < n; ++a) {
      IVec base = K - spec_.mode(a);
      cplx inner{};
      for (std::size_t b = 0; b < n; ++b) {
        long c = spec_.rank(base + spec_.mode(b));
        if (c >= 0) inner += std::conj(u_[b]) * u_[static_cast<std::size_t>(c)];
      }
      acc += u_[a] * inner;
    }
    return acc;
  }

  const TorusSpec& spec_;
  NonlinearityPath path_;
  int threads_;
  double coupling_;
  std::unique_ptr<PaddedGrid> grid_;
  Field u_, s_, phase_;
};

inline SpectralField rhs(const TorusSpec& spec, const SpectralField& field, double lambda,
                         NonlinearityPath path = NonlinearityPath::direct_convolution) {
  require(field.amps.size() == spec.size(), "field length does not match the lattice");
  Nonlinearity nl(spec, lambda, path);
  SpectralField out;
  out.time = field.time;
  nl(field.amps, field.time, out.amps);
  return out;
}

// min(0.1, 0.1 L^{2d}/(lambda^2 N max|a|^2), 0.25/(2 pi max|Omega|)); the last
// term keeps the oscillating factors e^{-2 pi i t Omega} resolved.
inline double default_dt(const TorusSpec& spec, const Field& a0, double lambda) {
  double amax = 0;
  for (auto& v : a0) amax = std::max(amax, std::norm(v));
  double dt = 0.1;
  double denom = lambda * lambda * static_cast<double>(spec.size()) * amax;
  if (denom > 0) dt = std::min(dt, 0.1 * spec.Ld() * spec.Ld() / denom);
  double wb = spec.omega_bound();
  if (wb > 0) dt = std::min(dt, 0.25 / (kTwoPi * wb));
  return dt;
}

struct Trajectory {
  std::vector<double> times;
  std::vector<Field> fields;
  std::vector<double> mass;

  double mass_drift() const {
    double m0 = mass.empty() ? 0 : mass.front();
    double worst = 0;
    for (double m : mass) worst = std::max(worst, std::abs(m - m0));
    return m0 > 0 ? worst / m0 : worst;
  }
};

Field picard_iterate(const TorusSpec& spec, const Field& a0, double lambda, double t_end, int N,
                     NonlinearityPath path = NonlinearityPath::direct_convolution);

// Fixed-step RK4 on the interaction variables, equivalently the integrating-factor
// (Lawson) RK4 in u-variables, with the linear phase carried exactly.
inline Trajectory evolve(const TorusSpec& spec, const Field& a0, double lambda, double t_end,
                         const SolverConfig& config = {}) {
  require(a0.size() == spec.size(), "field length does not match the lattice");
  require(t_end > 0, "t_end must be positive");
  require(lambda >= 0, "lambda must be nonnegative");
  std::vector<double> outs;
  for (double s : config.snapshots)
    if (s > 0 && s < t_end) outs.push_back(s);
  outs.push_back(t_end);
  std::sort(outs.begin(), outs.end());
  outs.erase(std::unique(outs.begin(), outs.end()), outs.end());

  Trajectory tr;
  tr.times.push_back(0);
  tr.fields.push_back(a0);
  tr.mass.push_back(mass(spec, a0));

  if (config.integrator == Integrator::picard) {
    for (double t : outs) {
      tr.times.push_back(t);
      tr.fields.push_back(picard_iterate(spec, a0, lambda, t, config.picard_order, config.path));
      tr.mass.push_back(mass(spec, tr.fields.back()));
    }
    return tr;
  }

  const double dt = config.dt > 0 ? config.dt : default_dt(spec, a0, lambda);
  Nonlinearity f(spec, lambda, config.path, config.threads);
  const std::size_t n = spec.size();
  Field a = a0, k1(n), k2(n), k3(n), k4(n), tmp(n);
  double t = 0;
  long step = 0;
  for (double target : outs) {
    long steps = std::max(1L, static_cast<long>(std::ceil((target - t) / dt - 1e-9)));
    double h = (target - t) / static_cast<double>(steps);
    for (long s = 0; s < steps; ++s, ++step) {
      f(a, t, k1);
      for (std::size_t r = 0; r < n; ++r) tmp[r] = a[r] + 0.5 * h * k1[r];
      f(tmp, t + 0.5 * h, k2);
      for (std::size_t r = 0; r < n; ++r) tmp[r] = a[r] + 0.5 * h * k2[r];
      f(tmp, t + 0.5 * h, k3);
      for (std::size_t r = 0; r < n; ++r) tmp[r] = a[r] + h * k3[r];
      f(tmp, t + h, k4);
      for (std::size_t r = 0; r < n; ++r) {
        a[r] += h / 6.0 * (k1[r] + 2.0 * k2[r] + 2.0 * k3[r] + k4[r]);
        if (!std::isfinite(a[r].real()) || !std::isfinite(a[r].imag()))
          throw NumericalFailure("non-finite amplitude at step " + std::to_string(step) + ", mode " +
                                 std::to_string(r));
      }
      t = (s + 1 == steps) ? target : t + h;
    }
    tr.times.push_back(target);
    tr.fields.push_back(a);
    tr.mass.push_back(mass(spec, a));
  }
  return tr;
}

// N-th Picard iterate of the Duhamel map
//   Phi(a)(t) = a0 + int_0^t N(a(s), s) ds
// on fixed Gauss panels; a spectral integration matrix gives the running
// integral at every node.
inline Field picard_iterate(const TorusSpec& spec, const Field& a0, double lambda, double t_end, int N,
                            NonlinearityPath path) {
  require(N >= 0, "Picard order must be nonnegative");
  require(t_end >= 0, "t_end must be nonnegative");
  require(a0.size() == spec.size(), "field length does not match the lattice");
  if (N == 0 || t_end == 0) return a0;
  constexpr int G = 16;
  double width = 0.5;
  double wb = spec.omega_bound();
  if (wb > 0) width = std::min(width, 4.0 / (kTwoPi * wb));
  const int panels = std::max(1, static_cast<int>(std::ceil(t_end / width)));
  const double h = t_end / panels;
  const Rule& ref = gauss_legendre_ref(G);
  static thread_local std::map<int, std::vector<std::vector<double>>> smat_cache;
  auto it = smat_cache.find(G);
  if (it == smat_cache.end()) it = smat_cache.emplace(G, gauss_integration_matrix(G)).first;
  const auto& S = it->second;

  const std::size_t n = spec.size();
  const std::size_t nodes = static_cast<std::size_t>(panels) * G;
  std::vector<double> s(nodes);
  for (int p = 0; p < panels; ++p)
    for (int g = 0; g < G; ++g) s[p * G + g] = h * (p + 0.5 * (ref.x[g] + 1.0));

  Nonlinearity f(spec, lambda, path);
  std::vector<Field> cur(nodes, a0), rate(nodes, Field(n));
  Field end = a0;
  for (int it_n = 0; it_n < N; ++it_n) {
    for (std::size_t i = 0; i < nodes; ++i) f(cur[i], s[i], rate[i]);
    Field base = a0;
    for (int p = 0; p < panels; ++p) {
      for (int g = 0; g < G; ++g) {
        Field& dst = cur[p * G + g];
        for (std::size_t r = 0; r < n; ++r) {
          cplx acc{};
          for (int m = 0; m < G; ++m) acc += S[g][m] * rate[p * G + m][r];
          dst[r] = base[r] + 0.5 * h * acc;
        }
      }
      for (std::size_t r = 0; r < n; ++r) {
        cplx acc{};
        for (int m = 0; m < G; ++m) acc += ref.w[m] * rate[p * G + m][r];
        base[r] += 0.5 * h * acc;
      }
    }
    end = base;
  }
  return end;
}

// Discrete Z^s norm: blocks B_j are unit cubes in k centred at integer j; each
// block's space-time L^4 norm uses the exact padded-grid spatial average and
// the trapezoid rule over snapshot times.
inline double zs_norm(const TorusSpec& spec, const Trajectory& tr, double s) {
  require(tr.times.size() >= 2, "zs_norm needs at least two snapshots");
  std::map<IVec, std::vector<std::size_t>> blocks;
  for (std::size_t r = 0; r < spec.size(); ++r) {
    IVec j{};
    RVec k = spec.k_of(spec.mode(r));
    for (int i = 0; i < spec.d(); ++i) j[i] = static_cast<int>(std::floor(k[i] + 0.5));
    blocks[j].push_back(r);
  }
  PaddedGrid grid(spec);
  const double Ld = spec.Ld();
  Field u(spec.size());
  double total = 0;
  for (auto& [j, members] : blocks) {
    std::vector<double> vals(tr.times.size());
    for (std::size_t i = 0; i < tr.times.size(); ++i) {
      std::fill(u.begin(), u.end(), cplx{});
      for (std::size_t r : members) {
        double th = kTwoPi * tr.times[i] * spec.q(r);
        u[r] = tr.fields[i][r] * cplx(std::cos(th), std::sin(th)) / Ld;
      }
      vals[i] = Ld * grid.mean_abs4(u.data());
    }
    double integral = 0;
    for (std::size_t i = 0; i + 1 < vals.size(); ++i)
      integral += 0.5 * (vals[i] + vals[i + 1]) * (tr.times[i + 1] - tr.times[i]);
    double jj = 0;
    for (int i = 0; i < spec.d(); ++i) jj += static_cast<double>(j[i]) * j[i];
    total += std::pow(1.0 + jj, s) * std::sqrt(integral);
  }
  return std::sqrt(total);
}

inline void write_trajectory(const std::string& csv_path, const std::string& json_path, const TorusSpec& spec,
                             const Trajectory& tr, const nlohmann::json& provenance) {
  std::ofstream out(csv_path);
  if (!out) throw ValidationError("cannot write " + csv_path);
  out.precision(17);
  out << "t";
  for (int i = 0; i < spec.d(); ++i) out << ",K" << i;
  out << ",re,im\n";
  for (std::size_t s = 0; s < tr.times.size(); ++s)
    for (std::size_t r = 0; r < spec.size(); ++r) {
      out << tr.times[s];
      for (int i = 0; i < spec.d(); ++i) out << "," << spec.mode(r)[i];
      out << "," << tr.fields[s][r].real() << "," << tr.fields[s][r].imag() << "\n";
    }
  nlohmann::json side = provenance;
  side["config_hash"] = hex64(fnv1a(provenance.dump()));
  side["times"] = tr.times;
  side["mass"] = tr.mass;
  side["mass_drift"] = tr.mass_drift();
  std::ofstream js(json_path);
  if (!js) throw ValidationError("cannot write " + json_path);
  js << side.dump(2) << "\n";
}

}  // namespace wke
