#pragma once

#include <algorithm>
#include <array>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace wke {

inline constexpr int kMaxDim = 4;
inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;
inline constexpr const char* kVersion = "0.1.0";

using cplx = std::complex<double>;
using IVec = std::array<int, kMaxDim>;
using RVec = std::array<double, kMaxDim>;
using Field = std::vector<cplx>;

// Bad input: configs, specs, out-of-range parameters.
struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A requested enumeration would exceed its work budget.
struct BudgetExceeded : std::runtime_error {
  double estimate;
  double budget;
  BudgetExceeded(const std::string& what, double est, double cap)
      : std::runtime_error(what + " (estimated cost " + std::to_string(est) +
                           ", budget " + std::to_string(cap) + ")"),
        estimate(est),
        budget(cap) {}
};

// NaN/overflow or another numerical breakdown.
struct NumericalFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

inline void check_budget(double estimate, double budget, const std::string& what) {
  if (budget > 0 && estimate > budget) throw BudgetExceeded(what, estimate, budget);
}

inline IVec operator+(const IVec& a, const IVec& b) {
  IVec r{};
  for (int i = 0; i < kMaxDim; ++i) r[i] = a[i] + b[i];
  return r;
}

inline IVec operator-(const IVec& a, const IVec& b) {
  IVec r{};
  for (int i = 0; i < kMaxDim; ++i) r[i] = a[i] - b[i];
  return r;
}

inline std::size_t default_workers() {
  unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : n;
}

// Runs fn(i) for i in [0, n). Each index is handled exactly once, so results
// written to per-index slots do not depend on the worker count.
inline void parallel_for(std::size_t n, std::size_t workers,
                         const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  workers = std::min(workers, n);
  std::exception_ptr err;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lk(err_mu);
          if (!err) err = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

// 64-bit FNV-1a, used for config hashes in provenance records.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = digits[v & 0xF];
  return s;
}

}  // namespace wke
