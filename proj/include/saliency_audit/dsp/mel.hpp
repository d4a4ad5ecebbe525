#pragma once

#include <cstddef>
#include <vector>

#include "saliency_audit/common.hpp"
#include "saliency_audit/dsp/stft.hpp"

namespace sa::dsp {

struct MelConfig {
  std::size_t n_mels = 40;
  double f_min = 0.0;
  double f_max = 8000.0;
  double log_floor = 1e-10;  // added to mel power inside the log

  void validate(double sample_rate) const;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Centers (Hz) of the n_mels triangular filters.
std::vector<double> mel_centers(const MelConfig& mel);

/// [n_mels x freq_bins] triangular HTK-scale filterbank, peak weight 1.
Matrix mel_filterbank(const MelConfig& mel, const StftConfig& stft);

/// log(power . filterbank^T + log_floor), power = magnitude^2.
class LogMel {
 public:
  LogMel(const MelConfig& mel, const StftConfig& stft);

  Matrix apply(const Matrix& magnitude) const;
  Matrix vjp(const Matrix& grad, const Matrix& magnitude) const;

  const Matrix& filterbank() const { return filterbank_; }
  const MelConfig& config() const { return mel_; }

 private:
  MelConfig mel_;
  Matrix filterbank_;
};

Matrix log_mel(const Matrix& magnitude, const MelConfig& mel, const StftConfig& stft);

}  // namespace sa::dsp
