#include "saliency_audit/dsp/stft.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "fft.hpp"

namespace sa::dsp {
namespace {

// Squared-window envelope values below this are treated as uncovered samples.
constexpr double kEnvelopeFloor = 1e-10;

std::vector<double> squared_window_envelope(const std::vector<double>& window,
                                            std::size_t frames, std::size_t hop) {
  const std::size_t win = window.size();
  std::vector<double> env(frames == 0 ? 0 : (frames - 1) * hop + win, 0.0);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t n = 0; n < win; ++n) env[t * hop + n] += window[n] * window[n];
  return env;
}

// Hermitian weight of bin k in a length-n inverse real FFT.
double bin_multiplicity(std::size_t k, std::size_t n) {
  return (k == 0 || (n % 2 == 0 && k == n / 2)) ? 1.0 : 2.0;
}

}  // namespace

void StftConfig::validate() const {
  if (!(sample_rate > 0.0)) throw InvalidInput("stft: sample_rate must be positive");
  if (hop_length == 0) throw InvalidInput("stft: hop_length must be positive");
  if (!(hop_length <= win_length && win_length <= n_fft))
    throw InvalidInput("stft: require hop_length <= win_length <= n_fft");
  const auto w = make_window(*this);
  std::vector<double> steady(hop_length, 0.0);
  for (std::size_t n = 0; n < win_length; ++n) steady[n % hop_length] += w[n] * w[n];
  const auto [lo, hi] = std::minmax_element(steady.begin(), steady.end());
  if (!(*lo > 1e-3 * *hi))
    throw InvalidInput("stft: window/hop pair does not overlap-add to a positive envelope");
}

std::size_t StftConfig::num_frames(std::size_t length) const {
  if (length < win_length) return 0;
  return 1 + (length - win_length) / hop_length;
}

std::size_t StftConfig::natural_length(std::size_t frames) const {
  return frames == 0 ? 0 : (frames - 1) * hop_length + win_length;
}

void Waveform::validate() const {
  if (samples.empty()) throw InvalidInput("waveform is empty");
  if (!(sample_rate > 0.0)) throw InvalidInput("waveform sample_rate must be positive");
  for (double s : samples)
    if (!std::isfinite(s)) throw InvalidInput("waveform contains non-finite samples");
}

std::vector<double> make_window(const StftConfig& cfg) {
  std::vector<double> w(cfg.win_length);
  const double len = static_cast<double>(cfg.win_length);
  switch (cfg.window) {
    case WindowKind::hann:
      for (std::size_t n = 0; n < w.size(); ++n)
        w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / len);
      break;
  }
  return w;
}

ComplexMatrix stft_complex(std::span<const double> x, const StftConfig& cfg) {
  if (x.size() < cfg.win_length)
    throw InvalidInput("stft: signal of " + std::to_string(x.size()) +
                       " samples is shorter than one window (" +
                       std::to_string(cfg.win_length) + ")");
  const auto window = make_window(cfg);
  const std::size_t frames = cfg.num_frames(x.size());
  const std::size_t bins = cfg.freq_bins();
  ComplexMatrix spec(frames, bins);
  detail::RealFft fft(cfg.n_fft);
  for (std::size_t t = 0; t < frames; ++t) {
    double* buf = fft.time();
    const double* src = x.data() + t * cfg.hop_length;
    for (std::size_t n = 0; n < cfg.win_length; ++n) buf[n] = window[n] * src[n];
    std::fill(buf + cfg.win_length, buf + cfg.n_fft, 0.0);
    fft.forward();
    std::copy(fft.freq(), fft.freq() + bins, spec.row(t).data());
  }
  return spec;
}

Spectrogram polar(const ComplexMatrix& spec, std::size_t source_length) {
  Spectrogram out;
  out.magnitude = spec.cwiseAbs();
  out.phase = spec.unaryExpr([](const std::complex<double>& z) { return std::arg(z); });
  out.source_length = source_length;
  return out;
}

Spectrogram stft(const Waveform& x, const StftConfig& cfg) {
  x.validate();
  return polar(stft_complex(x.samples, cfg), x.samples.size());
}

std::vector<double> istft(const Matrix& magnitude, const Matrix& phase, const StftConfig& cfg,
                          std::optional<std::size_t> length) {
  if (magnitude.rows() != phase.rows() || magnitude.cols() != phase.cols())
    throw InvalidInput("istft: magnitude and phase shapes differ");
  if (static_cast<std::size_t>(magnitude.cols()) != cfg.freq_bins())
    throw InvalidInput("istft: bin count does not match n_fft/2+1");
  const std::size_t frames = magnitude.rows();
  if (frames == 0) throw InvalidInput("istft: no frames");
  if (length && cfg.num_frames(*length) != frames)
    throw InvalidInput("istft: requested length is inconsistent with the frame count");

  const auto window = make_window(cfg);
  const auto env = squared_window_envelope(window, frames, cfg.hop_length);
  std::vector<double> out(env.size(), 0.0);
  detail::RealFft fft(cfg.n_fft);
  const double scale = 1.0 / static_cast<double>(cfg.n_fft);
  for (std::size_t t = 0; t < frames; ++t) {
    auto* f = fft.freq();
    for (std::size_t k = 0; k < cfg.freq_bins(); ++k) {
      const double m = magnitude(t, k);
      const double p = phase(t, k);
      f[k] = {m * std::cos(p), m * std::sin(p)};
    }
    fft.inverse();
    const double* frame = fft.time();
    for (std::size_t n = 0; n < cfg.win_length; ++n)
      out[t * cfg.hop_length + n] += window[n] * frame[n] * scale;
  }
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = env[i] > kEnvelopeFloor ? out[i] / env[i] : 0.0;
  if (length) out.resize(*length, 0.0);
  return out;
}

Matrix istft_vjp(std::span<const double> grad_wave, const Matrix& phase, const StftConfig& cfg) {
  const std::size_t frames = phase.rows();
  if (static_cast<std::size_t>(phase.cols()) != cfg.freq_bins())
    throw InvalidInput("istft_vjp: bin count does not match n_fft/2+1");
  if (frames == 0 || cfg.num_frames(grad_wave.size()) != frames)
    throw InvalidInput("istft_vjp: gradient length does not match the istft output length");

  const auto window = make_window(cfg);
  const auto env = squared_window_envelope(window, frames, cfg.hop_length);
  const double inv_n = 1.0 / static_cast<double>(cfg.n_fft);
  Matrix grad(frames, cfg.freq_bins());
  detail::RealFft fft(cfg.n_fft);
  for (std::size_t t = 0; t < frames; ++t) {
    double* buf = fft.time();
    for (std::size_t n = 0; n < cfg.win_length; ++n) {
      const std::size_t i = t * cfg.hop_length + n;
      buf[n] = env[i] > kEnvelopeFloor ? window[n] * grad_wave[i] / env[i] : 0.0;
    }
    std::fill(buf + cfg.win_length, buf + cfg.n_fft, 0.0);
    fft.forward();
    const auto* u = fft.freq();
    for (std::size_t k = 0; k < cfg.freq_bins(); ++k) {
      const double p = phase(t, k);
      grad(t, k) = bin_multiplicity(k, cfg.n_fft) * inv_n *
                   (std::cos(p) * u[k].real() + std::sin(p) * u[k].imag());
    }
  }
  return grad;
}

std::vector<double> stft_magnitude_vjp(const Matrix& grad_magnitude, const ComplexMatrix& spec,
                                       const StftConfig& cfg, std::size_t length) {
  if (grad_magnitude.rows() != spec.rows() || grad_magnitude.cols() != spec.cols())
    throw InvalidInput("stft_magnitude_vjp: gradient and spectrogram shapes differ");
  const std::size_t frames = spec.rows();
  if (cfg.num_frames(length) != frames)
    throw InvalidInput("stft_magnitude_vjp: length is inconsistent with the frame count");

  const auto window = make_window(cfg);
  std::vector<double> grad(length, 0.0);
  detail::RealFft fft(cfg.n_fft);
  for (std::size_t t = 0; t < frames; ++t) {
    auto* f = fft.freq();
    for (std::size_t k = 0; k < cfg.freq_bins(); ++k) {
      const auto s = spec(t, k);
      const double mod = std::abs(s);
      const auto c = mod > 0.0 ? s * (grad_magnitude(t, k) / mod) : std::complex<double>{};
      f[k] = c / bin_multiplicity(k, cfg.n_fft);
    }
    fft.inverse();
    const double* frame = fft.time();
    for (std::size_t n = 0; n < cfg.win_length; ++n)
      grad[t * cfg.hop_length + n] += window[n] * frame[n];
  }
  return grad;
}

}  // namespace sa::dsp
