#include "saliency_audit/nn/model.hpp"

#include <cmath>
#include <random>

namespace sa::nn {

std::string to_string(InputKind kind) {
  return kind == InputKind::log_mel ? "log_mel" : "magnitude";
}

InputKind input_kind_from_string(const std::string& name) {
  if (name == "log_mel") return InputKind::log_mel;
  if (name == "magnitude") return InputKind::magnitude;
  throw InvalidInput("unknown input kind '" + name + "' (expected log_mel or magnitude)");
}

void ModelConfig::validate() const {
  if (n_classes < 2) throw InvalidInput("model: n_classes must be at least 2");
  if (input_height == 0 || input_width == 0) throw InvalidInput("model: input dims must be set");
  if (!std::isfinite(input_shift) || !std::isfinite(input_scale) || input_scale == 0.0)
    throw InvalidInput("model: input normalization must be finite with nonzero scale");
  std::size_t h = input_height, w = input_width;
  for (const auto& c : conv) {
    if (c.channels == 0 || c.kernel == 0 || c.stride == 0)
      throw InvalidInput("model: conv channels, kernel and stride must be positive");
    const std::size_t pad = c.kernel / 2;
    if (h + 2 * pad < c.kernel || w + 2 * pad < c.kernel)
      throw InvalidInput("model: input too small for the conv stack");
    h = (h + 2 * pad - c.kernel) / c.stride + 1;
    w = (w + 2 * pad - c.kernel) / c.stride + 1;
    if (h < 2 || w < 2) throw InvalidInput("model: input too small for the conv stack");
    h /= 2;
    w /= 2;
  }
}

template <typename T>
std::vector<Shape> Classifier<T>::parameter_shapes() const {
  std::vector<Shape> shapes;
  std::size_t in_c = 1;
  for (const auto& c : cfg_.conv) {
    shapes.push_back({c.channels, in_c, c.kernel, c.kernel});
    shapes.push_back({c.channels});
    in_c = c.channels;
  }
  std::size_t features = cfg_.conv.empty() ? cfg_.input_height * cfg_.input_width : in_c;
  if (cfg_.hidden > 0) {
    shapes.push_back({cfg_.hidden, features});
    shapes.push_back({cfg_.hidden});
    features = cfg_.hidden;
  }
  shapes.push_back({cfg_.n_classes, features});
  shapes.push_back({cfg_.n_classes});
  return shapes;
}

template <typename T>
std::vector<std::string> Classifier<T>::parameter_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < cfg_.conv.size(); ++i) {
    names.push_back("conv" + std::to_string(i) + ".weight");
    names.push_back("conv" + std::to_string(i) + ".bias");
  }
  if (cfg_.hidden > 0) {
    names.push_back("hidden.weight");
    names.push_back("hidden.bias");
  }
  names.push_back("output.weight");
  names.push_back("output.bias");
  return names;
}

template <typename T>
Classifier<T> Classifier<T>::zeros(ModelConfig cfg) {
  cfg.validate();
  Classifier m;
  m.cfg_ = std::move(cfg);
  for (auto& s : m.parameter_shapes()) m.params_.emplace_back(s);
  return m;
}

template <typename T>
Classifier<T>::Classifier(ModelConfig cfg, std::uint64_t seed) {
  *this = zeros(std::move(cfg));
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < params_.size(); i += 2) {
    const auto& wd = params_[i].dims;
    const std::size_t fan_in = element_count(wd) / wd[0];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& v : params_[i].data) v = static_cast<T>(u(rng));
    for (auto& v : params_[i + 1].data) v = static_cast<T>(u(rng));
  }
}

template <typename T>
void Classifier<T>::check_input(const Tensor<T>& input) const {
  const auto& d = input.dims;
  const bool single = d.size() == 2 && d[0] == cfg_.input_height && d[1] == cfg_.input_width;
  const bool batch = d.size() == 3 && d[1] == cfg_.input_height && d[2] == cfg_.input_width;
  if (!single && !batch)
    throw InvalidInput("model input " + shape_string(d) + " does not match configured [" +
                       std::to_string(cfg_.input_height) + "," + std::to_string(cfg_.input_width) + "]");
}

template <typename T>
typename Classifier<T>::Graph Classifier<T>::build(Tape<T>& tape, const Tensor<T>& input,
                                                   bool input_grad, bool param_grad) const {
  check_input(input);
  const std::size_t n = input.rank() == 3 ? input.dims[0] : 1;
  Graph g;
  g.input = tape.leaf(input, input_grad);
  for (const auto& p : params_) g.params.push_back(tape.leaf(p, param_grad));

  NodeId x = tape.reshape(g.input, {n, 1, cfg_.input_height, cfg_.input_width});
  if (cfg_.time_center) x = tape.center_rows(x);
  x = tape.affine(x, static_cast<T>(cfg_.input_scale), static_cast<T>(cfg_.input_shift));
  std::size_t p = 0;
  for (const auto& c : cfg_.conv) {
    x = tape.conv2d(x, g.params[p], g.params[p + 1], c.stride, c.kernel / 2);
    x = tape.relu(x);
    g.conv_outputs.push_back(x);
    x = tape.maxpool2d(x, 2);
    p += 2;
  }
  x = cfg_.conv.empty() ? tape.flatten(x) : tape.mean_pool(x);
  if (cfg_.hidden > 0) {
    x = tape.relu(tape.dense(x, g.params[p], g.params[p + 1]));
    p += 2;
  }
  g.logits = tape.dense(x, g.params[p], g.params[p + 1]);
  return g;
}

template <typename T>
Tensor<T> Classifier<T>::forward(const Tensor<T>& input) const {
  Tape<T> tape;
  const auto g = build(tape, input, false, false);
  Tensor<T> logits = tape.value(g.logits);
  if (input.rank() == 2) logits.dims = {cfg_.n_classes};
  return logits;
}

template <typename T>
std::vector<T> Classifier<T>::predict_proba(const Tensor<T>& input) const {
  if (input.rank() != 2) throw InvalidInput("predict_proba: expected a single [H,W] input");
  const auto logits = forward(input);
  return softmax<T>(logits.data);
}

template <typename T>
Tensor<T> Classifier<T>::grad_input(const Tensor<T>& input, std::size_t class_index,
                                    ReluMode mode) const {
  if (class_index >= cfg_.n_classes)
    throw InvalidInput("grad_input: class index " + std::to_string(class_index) + " out of range");
  if (input.rank() != 2) throw InvalidInput("grad_input: expected a single [H,W] input");
  Tape<T> tape(mode);
  const auto g = build(tape, input, true, false);
  Tensor<T> seed(tape.value(g.logits).dims);
  seed.data[class_index] = T(1);
  tape.backward(g.logits, seed);
  return tape.grad(g.input);
}

template <typename T>
LayerCapture<T> Classifier<T>::layer_capture(const Tensor<T>& input, std::size_t layer_id,
                                             std::size_t class_index) const {
  if (layer_id >= cfg_.conv.size())
    throw InvalidInput("layer_capture: layer " + std::to_string(layer_id) + " is not a conv layer");
  if (class_index >= cfg_.n_classes) throw InvalidInput("layer_capture: class index out of range");
  if (input.rank() != 2) throw InvalidInput("layer_capture: expected a single [H,W] input");
  Tape<T> tape;
  // Parameters are marked so that every conv output carries a gradient.
  const auto g = build(tape, input, false, true);
  Tensor<T> seed(tape.value(g.logits).dims);
  seed.data[class_index] = T(1);
  tape.backward(g.logits, seed);
  const NodeId at = g.conv_outputs[layer_id];
  LayerCapture<T> cap{tape.value(at), tape.grad(at)};
  if (cap.gradients.size() != cap.activations.size()) cap.gradients = Tensor<T>(cap.activations.dims);
  const Shape d = cap.activations.dims;
  cap.activations.dims = {d[1], d[2], d[3]};
  cap.gradients.dims = {d[1], d[2], d[3]};
  return cap;
}

template class Classifier<float>;
template class Classifier<double>;

}  // namespace sa::nn
