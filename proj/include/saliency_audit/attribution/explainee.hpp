#pragma once

#include <cstddef>
#include <vector>

#include "saliency_audit/common.hpp"
#include "saliency_audit/dsp/mel.hpp"
#include "saliency_audit/dsp/stft.hpp"
#include "saliency_audit/nn/model.hpp"

namespace sa::attribution {

/// A differentiable scalar-per-class function of a magnitude spectrogram X_f.
/// Implementations must be safe to call concurrently.
class Explainee {
 public:
  virtual ~Explainee() = default;

  virtual std::size_t n_classes() const = 0;
  virtual std::vector<double> logits(const Matrix& x) const = 0;
  /// d logit[cls] / d x under the given ReLU backward rule.
  virtual Matrix gradient(const Matrix& x, std::size_t cls, nn::ReluMode mode) const = 0;
  /// Number of conv layers whose activations capture() can return.
  virtual std::size_t conv_layers() const { return 0; }
  virtual nn::LayerCapture<double> capture(const Matrix& x, std::size_t cls, std::size_t layer) const;
};

/// The classifier sees the waveform resynthesized from X_f with a fixed phase:
///   X_f -> istft(X_f, phase) -> |stft| -> [log-mel] -> model.
/// Gradients flow back through the same chain.
class ResynthesisExplainee final : public Explainee {
 public:
  ResynthesisExplainee(const nn::Classifier<double>& model, dsp::StftConfig stft, dsp::MelConfig mel,
                       Matrix phase, std::size_t source_length);

  std::size_t n_classes() const override { return model_->config().n_classes; }
  std::vector<double> logits(const Matrix& x) const override;
  Matrix gradient(const Matrix& x, std::size_t cls, nn::ReluMode mode) const override;
  std::size_t conv_layers() const override { return model_->config().conv.size(); }
  nn::LayerCapture<double> capture(const Matrix& x, std::size_t cls, std::size_t layer) const override;

  /// Model input for X_f: magnitude or log-mel of the resynthesized signal.
  Matrix features(const Matrix& x) const;
  const Matrix& phase() const { return phase_; }

 private:
  struct Forward {
    dsp::ComplexMatrix spec;
    Matrix magnitude;
    Matrix features;
  };
  Forward run(const Matrix& x) const;

  const nn::Classifier<double>* model_;
  dsp::StftConfig stft_;
  dsp::LogMel log_mel_;
  Matrix phase_;
  std::size_t length_;
};

/// The classifier consumes X_f as is.
class DirectExplainee final : public Explainee {
 public:
  explicit DirectExplainee(const nn::Classifier<double>& model) : model_(&model) {}

  std::size_t n_classes() const override { return model_->config().n_classes; }
  std::vector<double> logits(const Matrix& x) const override;
  Matrix gradient(const Matrix& x, std::size_t cls, nn::ReluMode mode) const override;
  std::size_t conv_layers() const override { return model_->config().conv.size(); }
  nn::LayerCapture<double> capture(const Matrix& x, std::size_t cls, std::size_t layer) const override;

 private:
  const nn::Classifier<double>* model_;
};

std::size_t argmax(const std::vector<double>& v);
std::vector<double> softmax(const std::vector<double>& logits);

}  // namespace sa::attribution
