#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "saliency_audit/attribution/methods.hpp"

using namespace sa;
using namespace sa::attribution;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double lo = 0, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// logit_c = <W_c, x> + b_c
class LinearFake final : public Explainee {
 public:
  LinearFake(std::vector<Matrix> w, std::vector<double> b) : w_(std::move(w)), b_(std::move(b)) {}
  std::size_t n_classes() const override { return w_.size(); }
  std::vector<double> logits(const Matrix& x) const override {
    std::vector<double> out;
    for (std::size_t c = 0; c < w_.size(); ++c) out.push_back(w_[c].cwiseProduct(x).sum() + b_[c]);
    return out;
  }
  Matrix gradient(const Matrix&, std::size_t cls, nn::ReluMode) const override { return w_[cls]; }

 private:
  std::vector<Matrix> w_;
  std::vector<double> b_;
};

// Single-bin f(x) = x^2.
class SquareFake final : public Explainee {
 public:
  std::size_t n_classes() const override { return 1; }
  std::vector<double> logits(const Matrix& x) const override { return {x(0, 0) * x(0, 0)}; }
  Matrix gradient(const Matrix& x, std::size_t, nn::ReluMode) const override { return 2.0 * x; }
};

nn::ModelConfig small_model(std::size_t h, std::size_t w, nn::InputKind kind = nn::InputKind::magnitude) {
  nn::ModelConfig cfg;
  cfg.input_kind = kind;
  cfg.input_height = h;
  cfg.input_width = w;
  cfg.conv = {{3, 3, 1}, {4, 3, 1}};
  cfg.hidden = 6;
  cfg.n_classes = 2;
  return cfg;
}

double rel_l2(const Matrix& a, const Matrix& b) { return (a - b).norm() / b.norm(); }

std::vector<double> flat(const Matrix& m) { return {m.data(), m.data() + m.size()}; }

}  // namespace

TEST_CASE("normalize takes min-max of the absolute value") {
  Matrix raw(1, 3);
  raw << -2, 0, 2;
  Matrix want(1, 3);
  want << 1, 0, 1;
  CHECK(normalize(raw) == want);
  CHECK(normalize(Matrix::Constant(3, 4, -1.5)).cwiseAbs().maxCoeff() == 0.0);
  const Matrix unit = random_matrix(4, 5, 1);
  Matrix u = unit;
  u(0, 0) = 0.0;
  u(1, 1) = 1.0;
  CHECK((normalize(u) - u).cwiseAbs().maxCoeff() <= 1e-15);
  const auto n = normalize(random_matrix(6, 7, 2, -5, 5));
  CHECK(n.minCoeff() == 0.0);
  CHECK(n.maxCoeff() == 1.0);
}

TEST_CASE("method names round trip and unknown names are rejected") {
  for (auto m : all_methods()) CHECK(method_from_string(to_string(m)) == m);
  CHECK_THROWS_AS(method_from_string("lime"), InvalidInput);
  CHECK(parse_methods("all").size() == 6);
  CHECK(parse_methods("ig,saliency,ig") == std::vector<Method>{Method::ig, Method::saliency});
  CHECK_THROWS_AS(parse_methods(""), InvalidInput);
}

TEST_CASE("linear models give the closed-form identities") {
  const Matrix x = random_matrix(5, 7, 3, 0, 2);
  const LinearFake f({random_matrix(5, 7, 4, -1, 1), random_matrix(5, 7, 5, -1, 1)}, {0.3, -0.2});
  AttributionConfig cfg;
  cfg.seed = 17;
  for (std::size_t cls : {0, 1}) {
    const Matrix s = saliency(f, x, cls);
    CHECK(smoothgrad(f, x, cls, cfg) == s);
    CHECK(guided_backprop(f, x, cls) == s);
    const Matrix wx = s.cwiseProduct(x);
    CHECK((integrated_gradients(f, x, cls, cfg, 64) - wx).cwiseAbs().maxCoeff() <= 1e-12);
    for (std::size_t n : {1, 7, 25}) {
      cfg.shap_samples = n;
      CHECK((gradient_shap(f, x, cls, cfg) - wx).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
}

TEST_CASE("linear classifier through the model code path") {
  nn::ModelConfig cfg = small_model(6, 5);
  cfg.conv.clear();
  cfg.hidden = 0;
  const nn::Classifier<double> model(cfg, 8);
  const DirectExplainee f(model);
  const Matrix x = random_matrix(6, 5, 9);
  const AttributionConfig acfg;
  const std::size_t cls = predicted_class(f, x);
  const Matrix s = saliency(f, x, cls);
  for (Eigen::Index i = 0; i < s.size(); ++i) CHECK(s.data()[i] == model.parameters()[0][cls * 30 + i]);
  CHECK(smoothgrad(f, x, cls, acfg) == s);
  CHECK(guided_backprop(f, x, cls) == s);
  CHECK((integrated_gradients(f, x, cls, acfg, 256) - s.cwiseProduct(x)).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK((gradient_shap(f, x, cls, acfg) - s.cwiseProduct(x)).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK_THROWS_AS(guided_gradcam(f, x, cls, std::nullopt), InvalidInput);
}

TEST_CASE("integrated gradients of x^2 from zero converges to x^2") {
  const SquareFake f;
  const Matrix x = Matrix::Constant(1, 1, 2.0);
  AttributionConfig cfg;
  // Right Riemann sum of 2*alpha*x^2: x^2 (n + 1) / n.
  for (std::size_t n : {1, 4, 100, 10000}) {
    const double got = integrated_gradients(f, x, 0, cfg, n)(0, 0);
    CHECK(got == doctest::Approx(4.0 * (n + 1) / n).epsilon(1e-12));
  }
  CHECK(std::abs(integrated_gradients(f, x, 0, cfg, 100000)(0, 0) - 4.0) < 1e-4);
  cfg.ig_baseline = Matrix::Constant(1, 1, 1.0);
  const Matrix raw = integrated_gradients(f, x, 0, cfg, 20000);
  CHECK(std::abs(ig_completeness_residual(f, x, raw, 0, cfg)) < 1e-3);
  cfg.ig_baseline = Matrix::Zero(2, 2);
  CHECK_THROWS_AS(integrated_gradients(f, x, 0, cfg, 4), InvalidInput);
}

TEST_CASE("smoothgrad variance shrinks with more samples") {
  const nn::Classifier<double> model(small_model(8, 6), 21);
  const DirectExplainee f(model);
  const Matrix x = random_matrix(8, 6, 22);
  auto spread = [&](std::size_t n) {
    std::vector<Matrix> maps;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      AttributionConfig cfg;
      cfg.sg_samples = n;
      cfg.sg_sigma_rel = 0.3;
      cfg.seed = seed;
      maps.push_back(smoothgrad(f, x, 1, cfg));
    }
    Matrix mean = Matrix::Zero(8, 6);
    for (const auto& m : maps) mean += m / 20.0;
    double var = 0;
    for (const auto& m : maps) var += (m - mean).squaredNorm() / 20.0;
    return std::sqrt(var);
  };
  CHECK(spread(8) / spread(64) > 2.0);
}

TEST_CASE("smoothgrad with zero noise or one sample equals saliency") {
  const nn::Classifier<double> model(small_model(8, 6), 23);
  const DirectExplainee f(model);
  const Matrix x = random_matrix(8, 6, 24);
  AttributionConfig cfg;
  cfg.sg_sigma_rel = 0.0;
  CHECK(smoothgrad(f, x, 0, cfg) == saliency(f, x, 0));
  cfg.sg_samples = 1;
  CHECK(smoothgrad(f, x, 0, cfg) == saliency(f, x, 0));
}

TEST_CASE("guided backprop on a ReLU-free model equals saliency") {
  auto cfg = small_model(6, 5);
  cfg.conv.clear();
  cfg.hidden = 0;
  const nn::Classifier<double> model(cfg, 25);
  const DirectExplainee f(model);
  const Matrix x = random_matrix(6, 5, 26);
  CHECK(guided_backprop(f, x, 1) == saliency(f, x, 1));
}

TEST_CASE("guided backprop agrees in sign with the gradient on a positive-weight net") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto cfg = small_model(8, 6);
    nn::Classifier<double> model(cfg, 30 + seed);
    for (auto& p : model.parameters())
      for (auto& v : p.data) v = std::abs(v);
    const DirectExplainee f(model);
    const Matrix x = random_matrix(8, 6, 40 + seed, -1, 1);
    const Matrix g = saliency(f, x, 0);
    const Matrix gb = guided_backprop(f, x, 0);
    for (Eigen::Index i = 0; i < g.size(); ++i)
      if (g.data()[i] != 0.0 && gb.data()[i] != 0.0) CHECK(g.data()[i] * gb.data()[i] > 0.0);
  }
}

TEST_CASE("bilinear upsampling uses half-pixel centers") {
  Matrix m(2, 2);
  m << 0, 1, 2, 3;
  const Matrix up = upsample_bilinear(m, 4, 4);
  Matrix row0(1, 4);
  row0 << 0, 0.25, 0.75, 1;
  CHECK((up.row(0) - row0).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(up(3, 3) == 3.0);
  CHECK(up(1, 0) == doctest::Approx(0.5));
  const Matrix r = random_matrix(5, 3, 50);
  CHECK(upsample_bilinear(r, 5, 3) == r);
}

TEST_CASE("gradcam matches a hand evaluation on a one-layer two-channel net") {
  nn::ModelConfig cfg;
  cfg.input_kind = nn::InputKind::magnitude;
  cfg.input_height = 6;
  cfg.input_width = 4;
  cfg.conv = {{2, 3, 1}};
  cfg.hidden = 0;
  cfg.n_classes = 2;
  const nn::Classifier<double> model(cfg, 60);
  const DirectExplainee f(model);
  const Matrix x = random_matrix(6, 4, 61, -1, 1);
  const auto& w = model.parameters()[0];  // [2,1,3,3]
  const auto& b = model.parameters()[1];
  const auto& wo = model.parameters()[2];  // [2,2]

  // Activations by direct convolution.
  std::vector<Matrix> act(2, Matrix::Zero(6, 4));
  for (int c = 0; c < 2; ++c)
    for (int r = 0; r < 6; ++r)
      for (int q = 0; q < 4; ++q) {
        double s = b[c];
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int rr = r + dy, qq = q + dx;
            if (rr >= 0 && rr < 6 && qq >= 0 && qq < 4) s += w[c * 9 + (dy + 1) * 3 + (dx + 1)] * x(rr, qq);
          }
        act[c](r, q) = std::max(s, 0.0);
      }
  // logit = sum_c wo[cls,c] * mean of the 6 pooled maxima. One entry per pooling
  // window gets wo/6, so the spatial mean of the gradient is wo[cls,c] / 24.
  const std::size_t cls = 1;
  Matrix coarse = Matrix::Zero(6, 4);
  for (int c = 0; c < 2; ++c) coarse += (wo[cls * 2 + c] / 24.0) * act[c];
  coarse = coarse.cwiseMax(0.0);

  const auto cap = f.capture(x, cls, 0);
  CHECK(cap.activations.dims == nn::Shape{2, 6, 4});
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 24; ++i) CHECK(cap.activations[c * 24 + i] == doctest::Approx(act[c].data()[i]).epsilon(1e-12));
  const Matrix got = gradcam_coarse(cap);
  CHECK((got - coarse).cwiseAbs().maxCoeff() < 1e-12);
  const Matrix ggc = guided_gradcam(f, x, cls, 0);
  CHECK((ggc - coarse.cwiseProduct(guided_backprop(f, x, cls))).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(normalize(ggc).minCoeff() >= 0.0);
  CHECK_THROWS_AS(guided_gradcam(f, x, cls, 1), InvalidInput);
}

TEST_CASE("gradcam of a zero-weight model is zero") {
  const auto model = nn::Classifier<double>::zeros(small_model(8, 6));
  const DirectExplainee f(model);
  const Matrix x = random_matrix(8, 6, 70);
  CHECK(guided_gradcam(f, x, 0, std::nullopt).cwiseAbs().maxCoeff() == 0.0);
  CHECK(normalize(guided_gradcam(f, x, 0, std::nullopt)).maxCoeff() == 0.0);
}

TEST_CASE("gradient shap with one zero baseline approaches IG") {
  const nn::Classifier<double> model(small_model(8, 6), 80);
  const DirectExplainee f(model);
  const Matrix x = random_matrix(8, 6, 81);
  AttributionConfig cfg;
  cfg.shap_samples = 512;
  cfg.seed = 3;
  const Matrix ig = integrated_gradients(f, x, 0, cfg, 512);
  CHECK(rel_l2(gradient_shap(f, x, 0, cfg), ig) <= 0.05);
}

TEST_CASE("seeded methods are reproducible and seed-dependent") {
  const nn::Classifier<double> model(small_model(8, 6), 90);
  const DirectExplainee f(model);
  const Matrix x = random_matrix(8, 6, 91);
  AttributionConfig a, b;
  a.seed = b.seed = 5;
  a.shap_sigma_rel = b.shap_sigma_rel = 0.05;
  CHECK(smoothgrad(f, x, 0, a) == smoothgrad(f, x, 0, b));
  CHECK(gradient_shap(f, x, 0, a) == gradient_shap(f, x, 0, b));
  b.seed = 6;
  CHECK(smoothgrad(f, x, 0, a) != smoothgrad(f, x, 0, b));
  CHECK(gradient_shap(f, x, 0, a) != gradient_shap(f, x, 0, b));
  for (auto m : all_methods()) {
    const auto r1 = attribute(f, x, m, a);
    const auto r2 = attribute(f, x, m, a);
    CHECK(r1.raw == r2.raw);
    CHECK(r1.target_class == predicted_class(f, x));
    CHECK(r1.normalized.minCoeff() >= 0.0);
    CHECK(r1.normalized.maxCoeff() <= 1.0);
    CHECK(r1.normalized.rows() == x.rows());
    CHECK(r1.normalized.cols() == x.cols());
  }
  CHECK_THROWS_AS(attribute(f, x, Method::saliency, a, 2), InvalidInput);
  a.ig_steps = 0;
  CHECK_THROWS_AS(attribute(f, x, Method::ig, a), InvalidInput);
}

TEST_CASE("dead ReLU regions get zero attribution") {
  auto cfg = small_model(6, 5);
  cfg.conv.clear();
  cfg.hidden = 4;
  nn::Classifier<double> model(cfg, 95);
  // Hidden unit biases far negative: every ReLU is off.
  for (auto& v : model.parameters()[1].data) v = -1e3;
  const DirectExplainee f(model);
  const Matrix x = random_matrix(6, 5, 96);
  CHECK(saliency(f, x, 0).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("resynthesis chain gradient matches finite differences") {
  dsp::StftConfig stft;
  stft.win_length = 12;
  stft.hop_length = 4;
  stft.n_fft = 16;
  const dsp::MelConfig mel{4, 0.0, 8000.0, 1e-3};
  const std::size_t len = 41;
  const auto wave = oracle::random_signal(len, 100);
  const auto spec = dsp::stft(dsp::Waveform{wave, 16000.0}, stft);
  for (auto kind : {nn::InputKind::magnitude, nn::InputKind::log_mel}) {
    auto cfg = small_model(8, kind == nn::InputKind::magnitude ? 9 : 4, kind);
    cfg.conv = {{2, 3, 1}};
    const nn::Classifier<double> model(cfg, 101);
    const ResynthesisExplainee f(model, stft, mel, spec.phase, len);
    const Matrix g = f.gradient(spec.magnitude, 1, nn::ReluMode::standard);
    auto fn = [&](const std::vector<double>& v) {
      const Matrix m = Eigen::Map<const Matrix>(v.data(), spec.magnitude.rows(), spec.magnitude.cols());
      return f.logits(m)[1];
    };
    double err = 0;
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      const double fd = oracle::central_difference(fn, flat(spec.magnitude), i, 1e-6);
      err = std::max(err, std::abs(fd - g.data()[i]) / std::max(1.0, std::abs(fd)));
    }
    CHECK(err <= 1e-5);
    // Saliency is exactly the model input gradient routed back through the chain.
    const Matrix feats = f.features(spec.magnitude);
    const auto gi = model.grad_input(nn::from_matrix(feats), 1);
    Matrix gm = Eigen::Map<const Matrix>(gi.data.data(), feats.rows(), feats.cols());
    const auto sp = dsp::stft_complex(dsp::istft(spec.magnitude, spec.phase, stft, len), stft);
    if (kind == nn::InputKind::log_mel) gm = dsp::LogMel(mel, stft).vjp(gm, sp.cwiseAbs());
    const Matrix manual = dsp::istft_vjp(dsp::stft_magnitude_vjp(gm, sp, stft, len), spec.phase, stft);
    CHECK(saliency(f, spec.magnitude, 1) == manual);
  }
}

TEST_CASE("resynthesis explainee checks shapes") {
  dsp::StftConfig stft;
  const auto cfg = small_model(98, 40, nn::InputKind::log_mel);
  const nn::Classifier<double> model(cfg, 1);
  CHECK_NOTHROW(ResynthesisExplainee(model, stft, dsp::MelConfig{}, Matrix::Zero(98, 257), 16000));
  CHECK_THROWS_AS(ResynthesisExplainee(model, stft, dsp::MelConfig{}, Matrix::Zero(97, 257), 16000), InvalidInput);
  CHECK_THROWS_AS(ResynthesisExplainee(model, stft, dsp::MelConfig{30, 0, 8000, 1e-10}, Matrix::Zero(98, 257), 16000),
                  InvalidInput);
  const ResynthesisExplainee f(model, stft, dsp::MelConfig{}, Matrix::Zero(98, 257), 16000);
  CHECK_THROWS_AS(f.logits(Matrix::Zero(98, 256)), InvalidInput);
}
