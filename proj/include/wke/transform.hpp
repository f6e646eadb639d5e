#pragma once

#include <fftw3.h>

#include <mutex>
#include <vector>

#include "wke/core.hpp"
#include "wke/lattice.hpp"

namespace wke {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex mu;
  return mu;
}

// Zero-padded grid of side 2(2 kmax + 1) per axis. Every product of up to four
// lattice fields is represented without aliasing, so cubic convolutions and
// spatial L^4 integrals are exact on it.
class PaddedGrid {
 public:
  explicit PaddedGrid(const TorusSpec& spec) : spec_(&spec), d_(spec.d()) {
    side_ = 2 * (2 * spec.kmax() + 1);
    total_ = 1;
    for (int i = 0; i < d_; ++i) total_ *= static_cast<std::size_t>(side_);
    buf_ = fftw_alloc_complex(total_);
    std::vector<int> n(d_, side_);
    std::lock_guard<std::mutex> lk(fftw_planner_mutex());
    to_phys_ = fftw_plan_dft(d_, n.data(), buf_, buf_, FFTW_BACKWARD, FFTW_ESTIMATE);
    to_freq_ = fftw_plan_dft(d_, n.data(), buf_, buf_, FFTW_FORWARD, FFTW_ESTIMATE);
    slot_.resize(spec.size());
    for (std::size_t r = 0; r < spec.size(); ++r) {
      std::size_t idx = 0;
      for (int i = 0; i < d_; ++i) {
        int c = spec.mode(r)[i];
        if (c < 0) c += side_;
        idx = idx * static_cast<std::size_t>(side_) + static_cast<std::size_t>(c);
      }
      slot_[r] = idx;
    }
  }

  PaddedGrid(const PaddedGrid&) = delete;
  PaddedGrid& operator=(const PaddedGrid&) = delete;

  ~PaddedGrid() {
    std::lock_guard<std::mutex> lk(fftw_planner_mutex());
    fftw_destroy_plan(to_phys_);
    fftw_destroy_plan(to_freq_);
    fftw_free(buf_);
  }

  std::size_t points() const { return total_; }
  int side() const { return side_; }

  // Physical values U(g) = sum_K u_K e^{2 pi i K.g/side}; the result stays in
  // the internal buffer.
  const cplx* synthesize(const cplx* u) {
    cplx* b = reinterpret_cast<cplx*>(buf_);
    std::fill(b, b + total_, cplx{});
    for (std::size_t r = 0; r < slot_.size(); ++r) b[slot_[r]] = u[r];
    fftw_execute(to_phys_);
    return b;
  }

  // out_k = sum_{k1-k2+k3=k} u_k1 conj(u_k2) u_k3 over lattice modes.
  void cubic(const cplx* u, cplx* out) {
    synthesize(u);
    cplx* b = reinterpret_cast<cplx*>(buf_);
    for (std::size_t i = 0; i < total_; ++i) b[i] *= std::norm(b[i]);
    fftw_execute(to_freq_);
    const double inv = 1.0 / static_cast<double>(total_);
    for (std::size_t r = 0; r < slot_.size(); ++r) out[r] = b[slot_[r]] * inv;
  }

  // Mean over the grid of |U|^4 (exact torus average of |U|^4).
  double mean_abs4(const cplx* u) {
    const cplx* b = synthesize(u);
    double s = 0;
    for (std::size_t i = 0; i < total_; ++i) {
      double m = std::norm(b[i]);
      s += m * m;
    }
    return s / static_cast<double>(total_);
  }

 private:
  const TorusSpec* spec_;
  int d_;
  int side_ = 0;
  std::size_t total_ = 0;
  fftw_complex* buf_ = nullptr;
  fftw_plan to_phys_{};
  fftw_plan to_freq_{};
  std::vector<std::size_t> slot_;
};

}  // namespace wke
