#include "fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <new>
#include <utility>

namespace sa::dsp::detail {
namespace {

struct Plans {
  fftw_plan forward;
  fftw_plan inverse;
};

// FFTW's planner is not thread-safe; everything that touches it goes through
// this mutex. Plans live for the life of the process.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

Plans plans_for(std::size_t n) {
  static std::map<std::size_t, Plans> cache;
  std::lock_guard lock(planner_mutex());
  if (auto it = cache.find(n); it != cache.end()) return it->second;
  const int len = static_cast<int>(n);
  auto* t = fftw_alloc_real(n);
  auto* f = fftw_alloc_complex(n / 2 + 1);
  Plans p{fftw_plan_dft_r2c_1d(len, t, f, FFTW_ESTIMATE),
          fftw_plan_dft_c2r_1d(len, f, t, FFTW_ESTIMATE)};
  fftw_free(t);
  fftw_free(f);
  cache.emplace(n, p);
  return p;
}

}  // namespace

RealFft::RealFft(std::size_t n) : n_(n) {
  const Plans p = plans_for(n);
  forward_plan_ = p.forward;
  inverse_plan_ = p.inverse;
  time_ = fftw_alloc_real(n);
  freq_ = reinterpret_cast<std::complex<double>*>(fftw_alloc_complex(n / 2 + 1));
  if (time_ == nullptr || freq_ == nullptr) throw std::bad_alloc();
}

RealFft::~RealFft() {
  fftw_free(time_);
  fftw_free(freq_);
}

void RealFft::forward() {
  fftw_execute_dft_r2c(static_cast<fftw_plan>(forward_plan_), time_,
                       reinterpret_cast<fftw_complex*>(freq_));
}

void RealFft::inverse() {
  fftw_execute_dft_c2r(static_cast<fftw_plan>(inverse_plan_),
                       reinterpret_cast<fftw_complex*>(freq_), time_);
}

}  // namespace sa::dsp::detail
