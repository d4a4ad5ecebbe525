#include "saliency_audit/dsp/mel.hpp"

#include <algorithm>
#include <cmath>

namespace sa::dsp {

void MelConfig::validate(double sample_rate) const {
  if (n_mels < 1) throw InvalidInput("mel: n_mels must be at least 1");
  if (!(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate / 2.0))
    throw InvalidInput("mel: require 0 <= f_min < f_max <= sample_rate/2");
  if (!(log_floor > 0.0)) throw InvalidInput("mel: log_floor must be positive");
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

std::vector<double> mel_edges(const MelConfig& mel) {
  const double lo = hz_to_mel(mel.f_min);
  const double hi = hz_to_mel(mel.f_max);
  std::vector<double> edges(mel.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) /
                                  static_cast<double>(mel.n_mels + 1));
  edges.front() = mel.f_min;
  edges.back() = mel.f_max;
  return edges;
}

}  // namespace

std::vector<double> mel_centers(const MelConfig& mel) {
  auto edges = mel_edges(mel);
  return {edges.begin() + 1, edges.end() - 1};
}

Matrix mel_filterbank(const MelConfig& mel, const StftConfig& stft) {
  mel.validate(stft.sample_rate);
  const auto edges = mel_edges(mel);
  const std::size_t bins = stft.freq_bins();
  Matrix fb = Matrix::Zero(mel.n_mels, bins);
  for (std::size_t m = 0; m < mel.n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * stft.sample_rate / static_cast<double>(stft.n_fft);
      const double up = (f - left) / (center - left);
      const double down = (right - f) / (right - center);
      fb(m, k) = std::max(0.0, std::min(up, down));
    }
  }
  return fb;
}

LogMel::LogMel(const MelConfig& mel, const StftConfig& stft)
    : mel_(mel), filterbank_(mel_filterbank(mel, stft)) {}

Matrix LogMel::apply(const Matrix& magnitude) const {
  if (magnitude.cols() != filterbank_.cols())
    throw InvalidInput("log_mel: magnitude bin count does not match the filterbank");
  const Matrix power = magnitude.array().square().matrix();
  return ((power * filterbank_.transpose()).array() + mel_.log_floor).log().matrix();
}

Matrix LogMel::vjp(const Matrix& grad, const Matrix& magnitude) const {
  if (magnitude.cols() != filterbank_.cols() || grad.rows() != magnitude.rows() ||
      grad.cols() != filterbank_.rows())
    throw InvalidInput("log_mel_vjp: shape mismatch");
  const Matrix power = magnitude.array().square().matrix();
  const Matrix mel_power = (power * filterbank_.transpose()).array() + mel_.log_floor;
  const Matrix grad_power = grad.cwiseQuotient(mel_power) * filterbank_;
  return (2.0 * magnitude.array() * grad_power.array()).matrix();
}

Matrix log_mel(const Matrix& magnitude, const MelConfig& mel, const StftConfig& stft) {
  return LogMel(mel, stft).apply(magnitude);
}

}  // namespace sa::dsp
