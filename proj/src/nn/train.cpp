#include "saliency_audit/nn/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace sa::nn {
namespace {

template <typename T>
Tensor<T> stack(std::span<const Tensor<T>> inputs, std::span<const std::size_t> order) {
  const auto& d = inputs[order[0]].dims;
  Tensor<T> batch({order.size(), d[0], d[1]});
  const std::size_t each = d[0] * d[1];
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& src = inputs[order[i]];
    if (src.dims != d) throw InvalidInput("train: inputs have inconsistent shapes");
    std::copy(src.data.begin(), src.data.end(), batch.data.begin() + i * each);
  }
  return batch;
}

std::size_t argmax_row(const auto* row, std::size_t n) {
  return static_cast<std::size_t>(std::max_element(row, row + n) - row);
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0) throw InvalidInput("train: batch_size must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw InvalidInput("train: learning_rate must be finite and non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidInput("train: momentum must be in [0,1)");
}

double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels) {
  if (predictions.size() != labels.size()) throw InvalidInput("accuracy: size mismatch");
  if (labels.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predictions[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

template <typename T>
std::vector<std::size_t> predict(const Classifier<T>& model, std::span<const Tensor<T>> inputs,
                                 std::size_t batch) {
  std::vector<std::size_t> out;
  out.reserve(inputs.size());
  const std::size_t c = model.config().n_classes;
  std::vector<std::size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t start = 0; start < inputs.size(); start += batch) {
    const std::size_t n = std::min(batch, inputs.size() - start);
    const auto logits = model.forward(stack(inputs, std::span(order).subspan(start, n)));
    for (std::size_t r = 0; r < n; ++r) out.push_back(argmax_row(logits.data.data() + r * c, c));
  }
  return out;
}

template <typename T>
double mean_loss(const Classifier<T>& model, const Dataset<T>& data, std::size_t batch) {
  double total = 0.0;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t start = 0; start < data.size(); start += batch) {
    const std::size_t n = std::min(batch, data.size() - start);
    const auto idx = std::span(order).subspan(start, n);
    Tape<T> tape;
    const auto g = model.build(tape, stack(std::span(data.inputs), idx), false, false);
    const auto loss = tape.softmax_cross_entropy(g.logits, std::span(data.labels).subspan(start, n));
    total += static_cast<double>(tape.value(loss).data[0]) * static_cast<double>(n);
  }
  return data.size() ? total / static_cast<double>(data.size()) : 0.0;
}

template <typename T>
std::vector<EpochStats> train(Classifier<T>& model, const Dataset<T>& data, const TrainConfig& cfg,
                              const Dataset<T>* validation, const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.size() == 0) throw InvalidInput("train: empty dataset");
  if (data.labels.size() != data.inputs.size()) throw InvalidInput("train: one label per input required");
  for (auto y : data.labels)
    if (y >= model.config().n_classes) throw InvalidInput("train: label out of range");

  auto val_accuracy = [&] {
    if (validation == nullptr || validation->size() == 0) return -1.0;
    return accuracy(predict(model, std::span(validation->inputs)), validation->labels);
  };

  std::vector<EpochStats> history;
  {
    EpochStats s;
    s.loss = mean_loss(model, data, cfg.batch_size);
    s.train_accuracy = accuracy(predict(model, std::span(data.inputs)), data.labels);
    s.val_accuracy = val_accuracy();
    history.push_back(s);
    if (on_epoch) on_epoch(s);
  }

  auto& params = model.parameters();
  std::vector<Tensor<T>> velocity;
  for (const auto& p : params) velocity.emplace_back(p.dims);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t c = model.config().n_classes;
  const T lr = static_cast<T>(cfg.learning_rate);
  const T mu = static_cast<T>(cfg.momentum);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      const auto idx = std::span(order).subspan(start, n);
      std::vector<std::size_t> labels(n);
      for (std::size_t i = 0; i < n; ++i) labels[i] = data.labels[idx[i]];

      Tape<T> tape;
      const auto g = model.build(tape, stack(std::span(data.inputs), idx), false, true);
      const auto loss = tape.softmax_cross_entropy(g.logits, labels);
      const double lv = tape.value(loss).data[0];
      if (!std::isfinite(lv))
        throw NumericalFailure("train: non-finite loss at epoch " + std::to_string(epoch) +
                               ", batch starting at " + std::to_string(start));
      loss_sum += lv * static_cast<double>(n);
      const auto& logits = tape.value(g.logits);
      for (std::size_t r = 0; r < n; ++r)
        correct += argmax_row(logits.data.data() + r * c, c) == labels[r];

      tape.backward(loss);
      for (std::size_t p = 0; p < params.size(); ++p) {
        const auto& grad = tape.grad(g.params[p]);
        if (grad.size() != params[p].size()) continue;
        auto& v = velocity[p].data;
        auto& w = params[p].data;
        for (std::size_t i = 0; i < w.size(); ++i) {
          v[i] = mu * v[i] + grad.data[i];
          w[i] -= lr * v[i];
        }
      }
    }
    EpochStats s;
    s.epoch = epoch;
    s.loss = loss_sum / static_cast<double>(data.size());
    s.train_accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    s.val_accuracy = val_accuracy();
    history.push_back(s);
    if (on_epoch) on_epoch(s);
  }
  return history;
}

template <typename T>
void fit_input_normalization(ModelConfig& cfg, std::span<const Tensor<T>> inputs, bool center) {
  double sum = 0.0, sq = 0.0;
  std::size_t count = 0;
  std::vector<double> col;
  for (const auto& t : inputs) {
    const std::size_t w = cfg.time_center ? cfg.input_width : t.size();
    if (cfg.time_center && (w == 0 || t.size() % w != 0))
      throw InvalidInput("fit_input_normalization: input size does not match input_width");
    const std::size_t h = t.size() / w;
    col.assign(w, 0.0);
    if (cfg.time_center)
      for (std::size_t i = 0; i < t.size(); ++i) col[i % w] += static_cast<double>(t.data[i]) / static_cast<double>(h);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double v = static_cast<double>(t.data[i]) - col[i % w];
      sum += v;
      sq += v * v;
      ++count;
    }
  }
  if (count == 0) throw InvalidInput("fit_input_normalization: no data");
  const double mean = sum / static_cast<double>(count);
  const double ref = center ? mean : 0.0;
  const double var = sq / static_cast<double>(count) - 2.0 * ref * mean + ref * ref;
  const double sd = std::sqrt(std::max(var, 0.0));
  cfg.input_shift = ref;
  cfg.input_scale = sd > 1e-12 ? 1.0 / sd : 1.0;
}

#define SA_INSTANTIATE(T)                                                                         \
  template std::vector<EpochStats> train(Classifier<T>&, const Dataset<T>&, const TrainConfig&, \
                                         const Dataset<T>*, const EpochCallback&);               \
  template std::vector<std::size_t> predict(const Classifier<T>&, std::span<const Tensor<T>>,   \
                                            std::size_t);                                        \
  template double mean_loss(const Classifier<T>&, const Dataset<T>&, std::size_t);              \
  template void fit_input_normalization(ModelConfig&, std::span<const Tensor<T>>, bool);
SA_INSTANTIATE(float)
SA_INSTANTIATE(double)
#undef SA_INSTANTIATE

}  // namespace sa::nn
