#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "wke/core.hpp"
#include "wke/lattice.hpp"

namespace wke {

// Deterministic spectral density phi.
struct Profile {
  enum class Kind { gaussian, bump, table };
  Kind kind = Kind::gaussian;
  double width = 1.0;   // gaussian: exp(-pi |k|^2 / width^2)
  double radius = 1.0;  // bump: exp(1 - 1/(1 - |k/radius|^2)), phi(0) = 1
  std::map<IVec, double> table;

  static Profile gaussian(double w = 1.0) {
    Profile p;
    p.width = w;
    return p;
  }
  static Profile bump(double r = 1.0) {
    Profile p;
    p.kind = Kind::bump;
    p.radius = r;
    return p;
  }

  // Continuum evaluation; table profiles only exist on lattice points.
  double operator()(const RVec& k, int d) const {
    double r2 = 0;
    for (int i = 0; i < d; ++i) r2 += k[i] * k[i];
    switch (kind) {
      case Kind::gaussian:
        return std::exp(-kPi * r2 / (width * width));
      case Kind::bump: {
        double s = r2 / (radius * radius);
        return s < 1.0 ? std::exp(1.0 - 1.0 / (1.0 - s)) : 0.0;
      }
      case Kind::table:
        break;
    }
    throw ValidationError("table profile has no continuum evaluation");
  }

  double on_mode(const TorusSpec& spec, std::size_t r) const {
    if (kind == Kind::table) {
      auto it = table.find(spec.mode(r));
      return it == table.end() ? 0.0 : it->second;
    }
    return (*this)(spec.k_of(spec.mode(r)), spec.d());
  }

  // Radius beyond which phi is below 1e-16 (or exactly zero).
  double support_radius() const {
    switch (kind) {
      case Kind::gaussian:
        return width * std::sqrt(16.0 * std::log(10.0) / kPi);
      case Kind::bump:
        return radius;
      case Kind::table:
        break;
    }
    throw ValidationError("table profile has no continuum support");
  }

  nlohmann::json to_json() const {
    switch (kind) {
      case Kind::gaussian:
        return {{"kind", "gaussian"}, {"params", {{"width", width}}}};
      case Kind::bump:
        return {{"kind", "bump"}, {"params", {{"radius", radius}}}};
      case Kind::table: {
        nlohmann::json rows = nlohmann::json::array();
        for (auto& [K, v] : table) rows.push_back({{"K", K}, {"value", v}});
        return {{"kind", "table"}, {"params", {{"values", rows}}}};
      }
    }
    return {};
  }

  static Profile from_json(const nlohmann::json& j) {
    try {
      auto kind = j.at("kind").get<std::string>();
      nlohmann::json params = j.value("params", nlohmann::json::object());
      if (kind == "gaussian") {
        double w = params.value("width", 1.0);
        require(w > 0, "gaussian width must be positive");
        return gaussian(w);
      }
      if (kind == "bump") {
        double r = params.value("radius", 1.0);
        require(r > 0, "bump radius must be positive");
        return bump(r);
      }
      require(kind == "table", "profile kind must be gaussian, bump or table");
      Profile p;
      p.kind = Kind::table;
      for (auto& row : params.at("values")) {
        auto kv = row.at("K").get<std::vector<int>>();
        require(kv.size() <= kMaxDim, "table entry has too many components");
        IVec K{};
        for (std::size_t i = 0; i < kv.size(); ++i) K[i] = kv[i];
        double v = row.at("value").get<double>();
        require(v >= 0 && std::isfinite(v), "profile values must be nonnegative");
        p.table[K] = v;
      }
      return p;
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("profile: ") + e.what());
    }
  }
};

// phi on every mode of spec, in canonical order.
inline std::vector<double> profile_values(const TorusSpec& spec, const Profile& profile) {
  std::vector<double> phi(spec.size());
  for (std::size_t r = 0; r < spec.size(); ++r) {
    phi[r] = profile.on_mode(spec, r);
    if (!(phi[r] >= 0) || !std::isfinite(phi[r])) throw ValidationError("profile is negative or non-finite");
  }
  return phi;
}

enum class PhaseModel { uniform, gaussian };

// Counter-based randomness: every (root_seed, sample_index) pair owns an
// independent stream, and draws inside a sample follow mode rank.
struct SeedPlan {
  std::uint64_t root_seed = 0;
  PhaseModel model = PhaseModel::uniform;

  std::mt19937_64 stream(std::uint64_t sample_index) const {
    std::seed_seq seq{static_cast<std::uint32_t>(root_seed), static_cast<std::uint32_t>(root_seed >> 32),
                      static_cast<std::uint32_t>(sample_index),
                      static_cast<std::uint32_t>(sample_index >> 32), 0x5eedu};
    return std::mt19937_64(seq);
  }

  static double unit(std::mt19937_64& g) { return static_cast<double>(g() >> 11) * 0x1.0p-53; }
};

struct SpectralField {
  Field amps;
  double time = 0;
};

inline SpectralField sample_initial(const TorusSpec& spec, const std::vector<double>& phi,
                                    const SeedPlan& plan, std::uint64_t sample_index) {
  require(phi.size() == spec.size(), "profile length does not match the lattice");
  auto g = plan.stream(sample_index);
  SpectralField f;
  f.amps.resize(spec.size());
  for (std::size_t r = 0; r < spec.size(); ++r) {
    if (phi[r] < 0) throw ValidationError("negative profile value");
    if (plan.model == PhaseModel::uniform) {
      double th = kTwoPi * SeedPlan::unit(g);
      f.amps[r] = std::sqrt(phi[r]) * cplx(std::cos(th), std::sin(th));
    } else {
      // Box-Muller; E|a|^2 = phi
      double u1 = 1.0 - SeedPlan::unit(g), u2 = SeedPlan::unit(g);
      double rad = std::sqrt(-std::log(u1));
      f.amps[r] = std::sqrt(phi[r]) * rad * cplx(std::cos(kTwoPi * u2), std::sin(kTwoPi * u2));
    }
  }
  return f;
}

inline SpectralField sample_initial(const TorusSpec& spec, const Profile& profile, const SeedPlan& plan,
                                    std::uint64_t sample_index) {
  return sample_initial(spec, profile_values(spec, profile), plan, sample_index);
}

// E prod_k e^{i m_k theta_k} for independent uniform phases.
template <class Map>
double phase_expectation(const Map& exponents) {
  for (auto& kv : exponents)
    if (kv.second != 0) return 0.0;
  return 1.0;
}

// E prod_k a_k^{p_k} conj(a_k)^{m_k} for a_k = sqrt(phi_k) x_k, x_k uniform
// phase or standard complex Gaussian (Wick/Isserlis: p_k! phi^p_k).
template <class Counts>
double moment_expectation(const Counts& plus, const Counts& minus, const std::vector<double>& phi,
                          PhaseModel model) {
  double v = 1.0;
  auto ip = plus.begin();
  auto im = minus.begin();
  for (; ip != plus.end() && im != minus.end(); ++ip, ++im) {
    if (ip->first != im->first || ip->second != im->second) return 0.0;
    int p = ip->second;
    v *= std::pow(phi[ip->first], p);
    if (model == PhaseModel::gaussian) v *= std::tgamma(p + 1.0);
  }
  if (ip != plus.end() || im != minus.end()) return 0.0;
  return v;
}

inline void write_field_csv(const std::string& path, const TorusSpec& spec, const Field& a) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out.precision(17);
  for (int i = 0; i < spec.d(); ++i) out << "K" << i << ",";
  out << "re,im\n";
  for (std::size_t r = 0; r < spec.size(); ++r) {
    for (int i = 0; i < spec.d(); ++i) out << spec.mode(r)[i] << ",";
    out << a[r].real() << "," << a[r].imag() << "\n";
  }
}

}  // namespace wke
