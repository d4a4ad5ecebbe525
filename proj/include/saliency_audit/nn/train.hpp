#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "saliency_audit/nn/model.hpp"

namespace sa::nn {

struct TrainConfig {
  std::size_t batch_size = 32;
  double learning_rate = 0.002;
  std::size_t epochs = 50;
  std::uint64_t seed = 0;
  double momentum = 0.9;

  void validate() const;
};

template <typename T>
struct Dataset {
  std::vector<Tensor<T>> inputs;  // each [H,W]
  std::vector<std::size_t> labels;

  std::size_t size() const { return inputs.size(); }
};

struct EpochStats {
  std::size_t epoch = 0;  // 0 is the untrained model
  double loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = -1.0;  // -1 when no validation set was given
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Minibatch SGD with momentum on mean softmax cross-entropy. The shuffle
/// order is drawn from cfg.seed. Throws NumericalFailure on a non-finite loss.
template <typename T>
std::vector<EpochStats> train(Classifier<T>& model, const Dataset<T>& data, const TrainConfig& cfg,
                              const Dataset<T>* validation = nullptr,
                              const EpochCallback& on_epoch = {});

/// Argmax predictions, evaluated in chunks of `batch` inputs.
template <typename T>
std::vector<std::size_t> predict(const Classifier<T>& model, std::span<const Tensor<T>> inputs,
                                 std::size_t batch = 32);

template <typename T>
double mean_loss(const Classifier<T>& model, const Dataset<T>& data, std::size_t batch = 32);

double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels);

/// Sets input_shift/input_scale to standardize `inputs` (global mean and
/// std). With center == false only the scale is fitted. With
/// cfg.time_center the statistics are taken after per-sample time centering,
/// which needs cfg.input_width.
template <typename T>
void fit_input_normalization(ModelConfig& cfg, std::span<const Tensor<T>> inputs, bool center = true);

}  // namespace sa::nn
