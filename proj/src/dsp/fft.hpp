#pragma once

#include <complex>
#include <cstddef>

namespace sa::dsp::detail {

// Unnormalized real FFT of length n backed by FFTW. Plans are created once per
// length and shared; execution is thread-safe. Instances own aligned scratch
// buffers and are cheap to construct.
class RealFft {
 public:
  explicit RealFft(std::size_t n);
  ~RealFft();
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  std::size_t size() const { return n_; }

  double* time() { return time_; }
  std::complex<double>* freq() { return freq_; }

  // time() -> freq(), X_k = sum_n x_n exp(-2 pi i k n / N), k = 0..N/2
  void forward();
  // freq() -> time(), x_n = sum_{k=0}^{N-1} X_k exp(+2 pi i k n / N) with
  // Hermitian extension. Imaginary parts of DC and Nyquist are ignored.
  // Destroys the contents of freq().
  void inverse();

 private:
  std::size_t n_;
  void* forward_plan_;
  void* inverse_plan_;
  double* time_;
  std::complex<double>* freq_;
};

}  // namespace sa::dsp::detail
