#pragma once

#include <complex>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "saliency_audit/common.hpp"

namespace sa::dsp {

using ComplexMatrix =
    Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class WindowKind { hann };

struct StftConfig {
  double sample_rate = 16000.0;
  std::size_t win_length = 400;  // 25 ms
  std::size_t hop_length = 160;  // 10 ms
  std::size_t n_fft = 512;
  WindowKind window = WindowKind::hann;

  /// Throws InvalidInput unless hop <= win <= n_fft, sample_rate > 0 and the
  /// squared window overlap-adds to a strictly positive envelope.
  void validate() const;

  std::size_t freq_bins() const { return n_fft / 2 + 1; }
  /// Frames produced for a signal of `length` samples (no padding, no centering).
  std::size_t num_frames(std::size_t length) const;
  /// Natural overlap-add length of `frames` frames.
  std::size_t natural_length(std::size_t frames) const;
};

struct Waveform {
  std::vector<double> samples;
  double sample_rate = 16000.0;

  void validate() const;
};

/// Magnitude and phase are [frames x freq_bins].
struct Spectrogram {
  Matrix magnitude;
  Matrix phase;
  std::size_t source_length = 0;
};

/// Periodic window of cfg.win_length samples.
std::vector<double> make_window(const StftConfig& cfg);

ComplexMatrix stft_complex(std::span<const double> x, const StftConfig& cfg);
Spectrogram stft(const Waveform& x, const StftConfig& cfg);
Spectrogram polar(const ComplexMatrix& spec, std::size_t source_length);

/// Overlap-add resynthesis with squared-window normalization. With `length`
/// the output is trimmed or zero-padded to it; num_frames(length) must equal
/// the frame count.
std::vector<double> istft(const Matrix& magnitude, const Matrix& phase, const StftConfig& cfg,
                          std::optional<std::size_t> length = std::nullopt);

/// Transposed Jacobian of istft with respect to the magnitude, phase held
/// fixed. grad_wave.size() is the istft output length.
Matrix istft_vjp(std::span<const double> grad_wave, const Matrix& phase, const StftConfig& cfg);

/// Transposed Jacobian of |stft(x)| with respect to x, evaluated at the
/// complex spectrogram `spec` of x. Bins with zero modulus pass no gradient.
std::vector<double> stft_magnitude_vjp(const Matrix& grad_magnitude, const ComplexMatrix& spec,
                                       const StftConfig& cfg, std::size_t length);

}  // namespace sa::dsp
