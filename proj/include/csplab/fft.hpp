#pragma once

// Thin wrapper over FFTW for complex transforms on n^dim periodic boxes.
// Plans are created once per (dim, n, direction), cached process-wide and
// only ever executed through the new-array interface, which FFTW documents
// as thread-safe. Planning is serialized by a mutex.

#include <fftw3.h>

#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <tuple>
#include <vector>

namespace csplab::fft {

using cplx = std::complex<double>;

enum class Direction { Forward, Inverse };

class Plan {
 public:
  Plan(int dim, int n, Direction dir) : dim_(dim), n_(n) {
    std::size_t total = 1;
    for (int i = 0; i < dim; ++i) total *= static_cast<std::size_t>(n);
    std::vector<cplx> scratch(total);
    auto* buf = reinterpret_cast<fftw_complex*>(scratch.data());
    const int sign = dir == Direction::Forward ? FFTW_FORWARD : FFTW_BACKWARD;
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    if (dim == 1) {
      plan_ = fftw_plan_dft_1d(n, buf, buf, sign, flags);
    } else if (dim == 2) {
      plan_ = fftw_plan_dft_2d(n, n, buf, buf, sign, flags);
    } else {
      throw std::invalid_argument("fft: only 1-d and 2-d boxes are supported");
    }
    if (plan_ == nullptr) throw std::runtime_error("fft: planning failed");
  }
  Plan(const Plan&) = delete;
  Plan& operator=(const Plan&) = delete;
  ~Plan() { fftw_destroy_plan(plan_); }

  // In-place, unnormalized.
  void execute(std::span<cplx> data) const {
    auto* buf = reinterpret_cast<fftw_complex*>(data.data());
    fftw_execute_dft(plan_, buf, buf);
  }

  int dim() const { return dim_; }
  int n() const { return n_; }

 private:
  int dim_;
  int n_;
  fftw_plan plan_{};
};

inline const Plan& plan_for(int dim, int n, Direction dir) {
  static std::mutex mutex;
  static std::map<std::tuple<int, int, int>, std::unique_ptr<Plan>> cache;
  std::lock_guard lock(mutex);
  auto key = std::make_tuple(dim, n, static_cast<int>(dir));
  auto it = cache.find(key);
  if (it == cache.end()) {
    it = cache.emplace(key, std::make_unique<Plan>(dim, n, dir)).first;
  }
  return *it->second;
}

/// Unnormalized forward transform: X_k = sum_j x_j exp(-2 pi i j.k / n).
inline void forward(std::span<cplx> data, int dim, int n) {
  plan_for(dim, n, Direction::Forward).execute(data);
}

/// Unnormalized inverse transform (no 1/N factor).
inline void inverse(std::span<cplx> data, int dim, int n) {
  plan_for(dim, n, Direction::Inverse).execute(data);
}

/// Forward transform of a real array, returned as a complex vector.
inline std::vector<cplx> forward_real(std::span<const double> values, int dim,
                                      int n) {
  std::vector<cplx> out(values.begin(), values.end());
  forward(out, dim, n);
  return out;
}

}  // namespace csplab::fft
