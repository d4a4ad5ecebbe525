#include "saliency_audit/attribution/methods.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

namespace sa::attribution {
namespace {

constexpr std::array<const char*, 6> kNames{"saliency",        "smoothgrad",     "ig",
                                             "guided_backprop", "guided_gradcam", "gradient_shap"};

// Stream ids for derive_seed, one per stochastic method.
constexpr std::uint64_t kSmoothGradStream = 1;
constexpr std::uint64_t kShapStream = 2;

// Incremental mean. Exact when every term is equal, so averaging a constant
// gradient returns it bit for bit.
struct RunningMean {
  Matrix mean;
  std::size_t count = 0;

  void add(const Matrix& v) {
    if (count++ == 0) {
      mean = v;
      return;
    }
    mean.array() += (v - mean).array() / static_cast<double>(count);
  }
};

double dynamic_range(const Matrix& x) { return x.size() ? x.maxCoeff() - x.minCoeff() : 0.0; }

void add_noise(Matrix& m, double sigma, std::mt19937_64& rng) {
  if (sigma <= 0.0) return;
  std::normal_distribution<double> n(0.0, sigma);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += n(rng);
}

void check_class(const Explainee& f, std::size_t cls) {
  if (cls >= f.n_classes())
    throw InvalidInput("attribution: class " + std::to_string(cls) + " out of range for " +
                       std::to_string(f.n_classes()) + " classes");
}

void check_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InvalidInput(std::string("attribution: ") + what + " shape does not match X_f");
}

Matrix ig_baseline(const Matrix& x, const AttributionConfig& cfg) {
  if (!cfg.ig_baseline) return Matrix::Zero(x.rows(), x.cols());
  check_shape(*cfg.ig_baseline, x, "IG baseline");
  return *cfg.ig_baseline;
}

}  // namespace

std::string to_string(Method m) { return kNames[static_cast<std::size_t>(m)]; }

Method method_from_string(const std::string& name) {
  for (std::size_t i = 0; i < kNames.size(); ++i)
    if (name == kNames[i]) return static_cast<Method>(i);
  std::string valid;
  for (auto n : kNames) valid += (valid.empty() ? "" : ", ") + std::string(n);
  throw InvalidInput("unknown attribution method '" + name + "' (valid: " + valid + ")");
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> methods{Method::saliency,        Method::smoothgrad,     Method::ig,
                                           Method::guided_backprop, Method::guided_gradcam, Method::gradient_shap};
  return methods;
}

std::vector<Method> parse_methods(const std::string& list) {
  if (list == "all") return all_methods();
  std::vector<Method> out;
  std::size_t start = 0;
  while (start <= list.size()) {
    const auto end = std::min(list.find(',', start), list.size());
    const auto name = list.substr(start, end - start);
    if (!name.empty()) {
      const auto m = method_from_string(name);
      if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
    }
    start = end + 1;
  }
  if (out.empty()) throw InvalidInput("no attribution methods given");
  return out;
}

void AttributionConfig::validate() const {
  if (ig_steps < 1 || sg_samples < 1 || shap_samples < 1)
    throw InvalidInput("attribution: ig_steps, sg_samples and shap_samples must be at least 1");
  if (!(sg_sigma_rel >= 0.0) || !(shap_sigma_rel >= 0.0))
    throw InvalidInput("attribution: noise levels must be non-negative");
}

Matrix normalize(const Matrix& raw) {
  Matrix a = raw.cwiseAbs();
  if (a.size() == 0) return a;
  const double lo = a.minCoeff(), hi = a.maxCoeff();
  if (!(hi > lo)) return Matrix::Zero(a.rows(), a.cols());
  return ((a.array() - lo) / (hi - lo)).matrix();
}

std::size_t predicted_class(const Explainee& f, const Matrix& x) { return argmax(f.logits(x)); }

Matrix saliency(const Explainee& f, const Matrix& x, std::size_t cls) {
  check_class(f, cls);
  return f.gradient(x, cls, nn::ReluMode::standard);
}

Matrix smoothgrad(const Explainee& f, const Matrix& x, std::size_t cls, const AttributionConfig& cfg) {
  check_class(f, cls);
  const double sigma = cfg.sg_sigma_rel * dynamic_range(x);
  RunningMean acc;
  for (std::size_t s = 0; s < cfg.sg_samples; ++s) {
    std::mt19937_64 rng(derive_seed(cfg.seed, kSmoothGradStream, s));
    Matrix noisy = x;
    add_noise(noisy, sigma, rng);
    acc.add(f.gradient(noisy, cls, nn::ReluMode::standard));
  }
  return acc.mean;
}

Matrix integrated_gradients(const Explainee& f, const Matrix& x, std::size_t cls, const AttributionConfig& cfg,
                            std::size_t steps) {
  check_class(f, cls);
  if (steps < 1) throw InvalidInput("integrated gradients: steps must be at least 1");
  const Matrix b = ig_baseline(x, cfg);
  const Matrix delta = x - b;
  RunningMean acc;
  for (std::size_t k = 1; k <= steps; ++k) {
    const double alpha = static_cast<double>(k) / static_cast<double>(steps);
    acc.add(f.gradient(b + alpha * delta, cls, nn::ReluMode::standard));
  }
  return delta.cwiseProduct(acc.mean);
}

Matrix guided_backprop(const Explainee& f, const Matrix& x, std::size_t cls) {
  check_class(f, cls);
  return f.gradient(x, cls, nn::ReluMode::guided);
}

Matrix gradcam_coarse(const nn::LayerCapture<double>& cap) {
  const auto& d = cap.activations.dims;
  if (d.size() != 3 || cap.gradients.dims != d)
    throw InvalidInput("gradcam: layer capture must be [C,H,W] with matching gradients");
  const std::size_t c = d[0], plane = d[1] * d[2];
  Matrix coarse = Matrix::Zero(d[1], d[2]);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double alpha = 0.0;
    for (std::size_t i = 0; i < plane; ++i) alpha += cap.gradients[ch * plane + i];
    alpha /= static_cast<double>(plane);
    for (std::size_t i = 0; i < plane; ++i) coarse.data()[i] += alpha * cap.activations[ch * plane + i];
  }
  return coarse.cwiseMax(0.0);
}

Matrix upsample_bilinear(const Matrix& m, std::size_t rows, std::size_t cols) {
  if (m.size() == 0) throw InvalidInput("upsample: empty input");
  auto taps = [](std::size_t out, std::size_t in) {
    struct Tap {
      std::size_t i0, i1;
      double w;
    };
    std::vector<Tap> t(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
      const double src = std::clamp((static_cast<double>(o) + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(src));
      t[o] = {i0, std::min(i0 + 1, in - 1), src - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(rows, m.rows());
  const auto tx = taps(cols, m.cols());
  Matrix out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const auto& y = ty[r];
      const auto& x = tx[c];
      const double top = (1 - x.w) * m(y.i0, x.i0) + x.w * m(y.i0, x.i1);
      const double bottom = (1 - x.w) * m(y.i1, x.i0) + x.w * m(y.i1, x.i1);
      out(r, c) = (1 - y.w) * top + y.w * bottom;
    }
  return out;
}

Matrix guided_gradcam(const Explainee& f, const Matrix& x, std::size_t cls, std::optional<std::size_t> layer) {
  check_class(f, cls);
  if (f.conv_layers() == 0) throw InvalidInput("guided gradcam: model has no conv layer");
  const std::size_t l = layer.value_or(f.conv_layers() - 1);
  if (l >= f.conv_layers()) throw InvalidInput("guided gradcam: layer " + std::to_string(l) + " is not a conv layer");
  const Matrix coarse = gradcam_coarse(f.capture(x, cls, l));
  return upsample_bilinear(coarse, x.rows(), x.cols()).cwiseProduct(guided_backprop(f, x, cls));
}

Matrix gradient_shap(const Explainee& f, const Matrix& x, std::size_t cls, const AttributionConfig& cfg) {
  check_class(f, cls);
  std::vector<Matrix> zero;
  const auto* baselines = &cfg.shap_baselines;
  if (baselines->empty()) {
    zero.push_back(Matrix::Zero(x.rows(), x.cols()));
    baselines = &zero;
  }
  for (const auto& b : *baselines) check_shape(b, x, "SHAP baseline");
  const double sigma = cfg.shap_sigma_rel * dynamic_range(x);
  RunningMean acc;
  for (std::size_t s = 0; s < cfg.shap_samples; ++s) {
    std::mt19937_64 rng(derive_seed(cfg.seed, kShapStream, s));
    const auto& b = (*baselines)[std::uniform_int_distribution<std::size_t>(0, baselines->size() - 1)(rng)];
    const double alpha = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    Matrix point = b + alpha * (x - b);
    add_noise(point, sigma, rng);
    acc.add((x - b).cwiseProduct(f.gradient(point, cls, nn::ReluMode::standard)));
  }
  return acc.mean;
}

AttributionMap attribute(const Explainee& f, const Matrix& x, Method method, const AttributionConfig& cfg,
                         std::optional<std::size_t> cls) {
  cfg.validate();
  AttributionMap out;
  out.method = method;
  out.target_class = cls ? *cls : predicted_class(f, x);
  switch (method) {
    case Method::saliency: out.raw = saliency(f, x, out.target_class); break;
    case Method::smoothgrad: out.raw = smoothgrad(f, x, out.target_class, cfg); break;
    case Method::ig: out.raw = integrated_gradients(f, x, out.target_class, cfg, cfg.ig_steps); break;
    case Method::guided_backprop: out.raw = guided_backprop(f, x, out.target_class); break;
    case Method::guided_gradcam: out.raw = guided_gradcam(f, x, out.target_class, cfg.gradcam_layer); break;
    case Method::gradient_shap: out.raw = gradient_shap(f, x, out.target_class, cfg); break;
  }
  if (!out.raw.allFinite())
    throw NumericalFailure(to_string(method) + ": attribution contains NaN or Inf");
  out.normalized = normalize(out.raw);
  return out;
}

double ig_completeness_residual(const Explainee& f, const Matrix& x, const Matrix& raw, std::size_t cls,
                                const AttributionConfig& cfg) {
  const double fx = f.logits(x).at(cls);
  const double fb = f.logits(ig_baseline(x, cfg)).at(cls);
  return raw.sum() - (fx - fb);
}

}  // namespace sa::attribution
