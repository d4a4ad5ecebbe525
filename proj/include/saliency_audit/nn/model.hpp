#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "saliency_audit/nn/tape.hpp"
#include "saliency_audit/nn/tensor.hpp"

namespace sa::nn {

enum class InputKind { log_mel, magnitude };

std::string to_string(InputKind kind);
InputKind input_kind_from_string(const std::string& name);

struct ConvSpec {
  std::size_t channels = 16;
  std::size_t kernel = 3;
  std::size_t stride = 1;
};

/// Conv layers are conv(k x k, "same" padding) -> ReLU -> 2x2 max pool. The
/// stack is followed by a global mean pool, an optional ReLU hidden layer and
/// the output layer. With no conv layers the input is flattened instead, which
/// gives a plain linear model when hidden == 0.
struct ModelConfig {
  InputKind input_kind = InputKind::log_mel;
  std::size_t input_height = 0;  // frames
  std::size_t input_width = 0;   // mel bands or frequency bins
  std::vector<ConvSpec> conv{{16, 3, 1}, {32, 3, 1}};
  std::size_t hidden = 64;
  std::size_t n_classes = 2;
  // Subtract each sample's per-column mean over frames before standardizing.
  bool time_center = false;
  // Fixed input standardization (x - shift) * scale, part of the graph.
  double input_shift = 0.0;
  double input_scale = 1.0;

  void validate() const;
};

template <typename T>
struct LayerCapture {
  Tensor<T> activations;  // [C,H,W], post-ReLU output of the conv layer
  Tensor<T> gradients;    // d logit / d activations, same dims
};

template <typename T>
class Classifier {
 public:
  struct Graph {
    NodeId input;
    NodeId logits;
    std::vector<NodeId> params;
    std::vector<NodeId> conv_outputs;  // post-ReLU, one per conv layer
  };

  Classifier() = default;
  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for weights and biases.
  Classifier(ModelConfig cfg, std::uint64_t seed);
  /// All parameters zero.
  static Classifier zeros(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& mutable_config() { return cfg_; }
  std::vector<Tensor<T>>& parameters() { return params_; }
  const std::vector<Tensor<T>>& parameters() const { return params_; }
  std::vector<std::string> parameter_names() const;
  std::vector<Shape> parameter_shapes() const;

  /// Records the forward pass. `input` is [H,W] or a batch [N,H,W].
  Graph build(Tape<T>& tape, const Tensor<T>& input, bool input_grad, bool param_grad) const;

  /// Logits: [n_classes] for a single [H,W] input, [N,n_classes] for a batch.
  Tensor<T> forward(const Tensor<T>& input) const;
  std::vector<T> predict_proba(const Tensor<T>& input) const;
  /// d logit[class_index] / d input under the chosen ReLU backward rule.
  Tensor<T> grad_input(const Tensor<T>& input, std::size_t class_index,
                       ReluMode mode = ReluMode::standard) const;
  LayerCapture<T> layer_capture(const Tensor<T>& input, std::size_t layer_id,
                                std::size_t class_index) const;

  template <typename U>
  Classifier<U> cast() const {
    Classifier<U> out = Classifier<U>::zeros(cfg_);
    for (std::size_t i = 0; i < params_.size(); ++i) out.parameters()[i] = params_[i].template cast<U>();
    return out;
  }

 private:
  void check_input(const Tensor<T>& input) const;

  ModelConfig cfg_;
  std::vector<Tensor<T>> params_;
};

extern template class Classifier<float>;
extern template class Classifier<double>;

}  // namespace sa::nn
