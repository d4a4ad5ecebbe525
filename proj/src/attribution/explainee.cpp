#include "saliency_audit/attribution/explainee.hpp"

#include <algorithm>
#include <cmath>

namespace sa::attribution {
namespace {

std::vector<double> as_vector(const nn::Tensor<double>& t) { return {t.data.begin(), t.data.end()}; }

Matrix as_matrix(const nn::Tensor<double>& t, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  std::copy(t.data.begin(), t.data.end(), m.data());
  return m;
}

}  // namespace

nn::LayerCapture<double> Explainee::capture(const Matrix&, std::size_t, std::size_t) const {
  throw InvalidInput("explainee has no conv layer to capture");
}

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::vector<double> softmax(const std::vector<double>& logits) { return nn::softmax<double>(logits); }

ResynthesisExplainee::ResynthesisExplainee(const nn::Classifier<double>& model, dsp::StftConfig stft,
                                           dsp::MelConfig mel, Matrix phase, std::size_t source_length)
    : model_(&model),
      stft_(stft),
      log_mel_(mel, stft),
      phase_(std::move(phase)),
      length_(source_length) {
  if (static_cast<std::size_t>(phase_.rows()) != stft_.num_frames(length_) ||
      static_cast<std::size_t>(phase_.cols()) != stft_.freq_bins())
    throw InvalidInput("explainee: phase shape does not match the source length");
  const auto& cfg = model.config();
  const std::size_t width = cfg.input_kind == nn::InputKind::log_mel ? mel.n_mels : stft_.freq_bins();
  if (cfg.input_height != static_cast<std::size_t>(phase_.rows()) || cfg.input_width != width)
    throw InvalidInput("explainee: model input [" + std::to_string(cfg.input_height) + "," +
                       std::to_string(cfg.input_width) + "] does not match the spectrogram features");
}

ResynthesisExplainee::Forward ResynthesisExplainee::run(const Matrix& x) const {
  if (x.rows() != phase_.rows() || x.cols() != phase_.cols())
    throw InvalidInput("explainee: X_f shape does not match the phase");
  Forward f;
  const auto wave = dsp::istft(x, phase_, stft_, length_);
  f.spec = dsp::stft_complex(wave, stft_);
  f.magnitude = f.spec.cwiseAbs();
  f.features = model_->config().input_kind == nn::InputKind::log_mel ? log_mel_.apply(f.magnitude) : f.magnitude;
  return f;
}

Matrix ResynthesisExplainee::features(const Matrix& x) const { return run(x).features; }

std::vector<double> ResynthesisExplainee::logits(const Matrix& x) const {
  return as_vector(model_->forward(nn::from_matrix(run(x).features)));
}

Matrix ResynthesisExplainee::gradient(const Matrix& x, std::size_t cls, nn::ReluMode mode) const {
  const auto f = run(x);
  const auto g = model_->grad_input(nn::from_matrix(f.features), cls, mode);
  Matrix g_mag = as_matrix(g, f.features.rows(), f.features.cols());
  if (model_->config().input_kind == nn::InputKind::log_mel) g_mag = log_mel_.vjp(g_mag, f.magnitude);
  const auto g_wave = dsp::stft_magnitude_vjp(g_mag, f.spec, stft_, length_);
  return dsp::istft_vjp(g_wave, phase_, stft_);
}

nn::LayerCapture<double> ResynthesisExplainee::capture(const Matrix& x, std::size_t cls, std::size_t layer) const {
  return model_->layer_capture(nn::from_matrix(run(x).features), layer, cls);
}

std::vector<double> DirectExplainee::logits(const Matrix& x) const {
  return as_vector(model_->forward(nn::from_matrix(x)));
}

Matrix DirectExplainee::gradient(const Matrix& x, std::size_t cls, nn::ReluMode mode) const {
  return as_matrix(model_->grad_input(nn::from_matrix(x), cls, mode), x.rows(), x.cols());
}

nn::LayerCapture<double> DirectExplainee::capture(const Matrix& x, std::size_t cls, std::size_t layer) const {
  return model_->layer_capture(nn::from_matrix(x), layer, cls);
}

}  // namespace sa::attribution
