#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "saliency_audit/attribution/explainee.hpp"

namespace sa::attribution {

enum class Method { saliency, smoothgrad, ig, guided_backprop, guided_gradcam, gradient_shap };

std::string to_string(Method m);
/// Throws InvalidInput listing the valid names.
Method method_from_string(const std::string& name);
const std::vector<Method>& all_methods();
/// Parses "all" or a comma-separated list.
std::vector<Method> parse_methods(const std::string& list);

struct AttributionConfig {
  std::size_t ig_steps = 64;
  std::optional<Matrix> ig_baseline;  // zero when unset
  std::size_t sg_samples = 25;
  double sg_sigma_rel = 0.1;  // noise std as a fraction of max - min of X_f
  std::size_t shap_samples = 25;
  std::vector<Matrix> shap_baselines;  // {zero} when empty
  double shap_sigma_rel = 0.0;
  std::optional<std::size_t> gradcam_layer;  // last conv layer when unset
  std::uint64_t seed = 0;

  void validate() const;
};

struct AttributionMap {
  Matrix raw;
  Matrix normalized;
  Method method = Method::saliency;
  std::size_t target_class = 0;
};

/// minmax(|raw|); all zeros when |raw| is constant.
Matrix normalize(const Matrix& raw);

/// Argmax of the logits at x.
std::size_t predicted_class(const Explainee& f, const Matrix& x);

Matrix saliency(const Explainee& f, const Matrix& x, std::size_t cls);
Matrix smoothgrad(const Explainee& f, const Matrix& x, std::size_t cls, const AttributionConfig& cfg);
Matrix integrated_gradients(const Explainee& f, const Matrix& x, std::size_t cls, const AttributionConfig& cfg,
                            std::size_t steps);
Matrix guided_backprop(const Explainee& f, const Matrix& x, std::size_t cls);
/// relu(sum_c alpha_c A_c), alpha_c the spatial mean of dlogit/dA_c.
Matrix gradcam_coarse(const nn::LayerCapture<double>& cap);
/// Bilinear resize with half-pixel centers (corners not aligned).
Matrix upsample_bilinear(const Matrix& m, std::size_t rows, std::size_t cols);
Matrix guided_gradcam(const Explainee& f, const Matrix& x, std::size_t cls, std::optional<std::size_t> layer);
Matrix gradient_shap(const Explainee& f, const Matrix& x, std::size_t cls, const AttributionConfig& cfg);

/// Runs one method. The target is the predicted class unless `cls` is given.
/// Throws NumericalFailure if the map is not finite.
AttributionMap attribute(const Explainee& f, const Matrix& x, Method method, const AttributionConfig& cfg,
                         std::optional<std::size_t> cls = std::nullopt);

/// sum(raw) - (logit_cls(x) - logit_cls(baseline)) for an IG map.
double ig_completeness_residual(const Explainee& f, const Matrix& x, const Matrix& raw, std::size_t cls,
                                const AttributionConfig& cfg);

}  // namespace sa::attribution
