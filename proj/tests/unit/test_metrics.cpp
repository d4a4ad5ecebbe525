#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "saliency_audit/metrics/metrics.hpp"

using namespace sa;
using namespace sa::metrics;

namespace {

SampleOutcome outcome(double orig, double masked, double maskout = 0.5) {
  return {{orig, 1 - orig}, {masked, 1 - masked}, {maskout, 1 - maskout}};
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double lo = 0, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

struct Fixture {
  FrontEnd fe;
  nn::Classifier<double> model;
  std::vector<EvalSample> samples;

  Fixture() {
    nn::ModelConfig cfg;
    cfg.input_kind = nn::InputKind::log_mel;
    cfg.input_height = 6;
    cfg.input_width = 40;
    cfg.conv = {{4, 3, 1}};
    cfg.hidden = 5;
    cfg.input_shift = -10.0;
    cfg.input_scale = 0.2;
    model = nn::Classifier<double>(cfg, 3);
    for (std::uint64_t i = 0; i < 6; ++i) {
      const auto wave = oracle::random_signal(1200, 10 + i, 0.3);
      const auto spec = dsp::stft(dsp::Waveform{wave, 16000.0}, fe.stft);
      samples.push_back({"s" + std::to_string(i), spec.magnitude, spec.phase, 1200, i % 2,
                         random_matrix(spec.magnitude.rows(), spec.magnitude.cols(), 20 + i)});
    }
  }
};

}  // namespace

TEST_CASE("hand-evaluated confidence metrics") {
  const std::vector<SampleOutcome> two{outcome(0.8, 0.9), outcome(0.9, 0.6)};
  CHECK(average_increase(two) == doctest::Approx(50.0));
  const std::vector<SampleOutcome> drop{outcome(0.9, 0.6)};
  CHECK(average_decrease(drop) == doctest::Approx(100.0 / 3.0));
  CHECK(average_gain(drop) == 0.0);
  const std::vector<SampleOutcome> rise{outcome(0.8, 0.9)};
  CHECK(average_decrease(rise) == 0.0);
  CHECK(average_gain(rise) == doctest::Approx(50.0));
  const std::vector<SampleOutcome> ff{outcome(0.9, 0.9, 0.7)};
  CHECK(faithfulness(ff) == doctest::Approx(0.2));
  // Class 1 predicted originally: confidence is read at class 1.
  const std::vector<SampleOutcome> other{outcome(0.3, 0.1)};
  CHECK(average_increase(other) == 100.0);
  CHECK(average_gain(other) == doctest::Approx(100.0 * 0.2 / 0.3));
}

TEST_CASE("fid-in counts unchanged predictions and ignores class names") {
  std::vector<SampleOutcome> batch{outcome(0.8, 0.7), outcome(0.2, 0.3), outcome(0.9, 0.4), outcome(0.6, 0.55)};
  CHECK(fid_in(batch) == 75.0);
  for (auto& o : batch) {
    std::reverse(o.p_orig.begin(), o.p_orig.end());
    std::reverse(o.p_masked.begin(), o.p_masked.end());
  }
  CHECK(fid_in(batch) == 75.0);
}

TEST_CASE("degenerate masks") {
  const std::vector<SampleOutcome> same{outcome(0.8, 0.8, 0.8), outcome(0.3, 0.3, 0.3), outcome(0.6, 0.6, 0.6)};
  CHECK(average_increase(same) == 0.0);
  CHECK(average_decrease(same) == 0.0);
  CHECK(average_gain(same) == 0.0);
  CHECK(fid_in(same) == 100.0);
  CHECK(faithfulness(same) == 0.0);
  const std::vector<double> scores{1, 0, 1, 1};
  CHECK(selective_metric(scores, std::vector<double>(4, 1.0)) == 0.0);
  CHECK(selective_metric(scores, std::vector<double>(4, 0.0)) == 0.75);
}

TEST_CASE("sparseness and complexity closed forms") {
  CHECK(sparseness(Matrix::Ones(1, 4)) == 0.0);
  Matrix hot = Matrix::Zero(1, 4);
  hot(0, 3) = 1.0;
  CHECK(sparseness(hot) == 0.75);
  CHECK(sparseness(Matrix::Zero(3, 3)) == 0.0);
  const Matrix a = random_matrix(7, 9, 1);
  CHECK(sparseness(3.5 * a) == doctest::Approx(sparseness(a)).epsilon(1e-12));
  CHECK(std::abs(complexity(Matrix::Ones(1, 4)) - std::log(4.0)) <= 1e-9);
  for (int d : {1, 10, 1000, 25186}) CHECK(std::abs(complexity(Matrix::Constant(1, d, 0.3)) - std::log(d)) <= 1e-9);
  CHECK(complexity(hot) == 0.0);
  CHECK(complexity(Matrix::Zero(2, 2)) == 0.0);
  CHECK_THROWS_AS(sparseness(-hot), InvalidInput);
}

TEST_CASE("sparseness and complexity are permutation invariant") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = random_matrix(5, 8, 100 + trial);
    std::vector<double> v(a.data(), a.data() + a.size());
    std::shuffle(v.begin(), v.end(), rng);
    const Matrix b = Eigen::Map<const Matrix>(v.data(), 8, 5);
    CHECK(sparseness(b) == doctest::Approx(sparseness(a)).epsilon(1e-12));
    CHECK(complexity(b) == doctest::Approx(complexity(a)).epsilon(1e-12));
  }
}

TEST_CASE("selective metric matches the published arithmetic") {
  const std::vector<double> scores(50, 0.87), means(50, 0.017);
  CHECK(std::abs(selective_metric(scores, means) - 0.85521) <= 1e-10);
  CHECK_THROWS_AS(selective_metric(scores, std::vector<double>(3)), InvalidInput);
}

TEST_CASE("selective metric never exceeds the plain mean") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> s(10), m(10);
    for (auto& v : s) v = u(rng);
    for (auto& v : m) v = trial % 2 ? u(rng) : 0.0;
    double plain = 0;
    for (double v : s) plain += v / 10;
    const double sel = selective_metric(s, m);
    CHECK(sel <= plain + 1e-15);
    if (trial % 2 == 0) CHECK(sel == doctest::Approx(plain));
  }
}

TEST_CASE("classification metrics") {
  const std::vector<std::size_t> preds{1, 1, 0, 0}, labels{1, 0, 0, 0};
  const auto c = classification_metrics(preds, labels, 2);
  CHECK(c.accuracy == 0.75);
  CHECK(c.macro_f1 == doctest::Approx((0.8 + 2.0 / 3.0) / 2.0).epsilon(1e-12));
  CHECK(std::abs(c.macro_f1 - 0.733) < 5e-4);
  const auto perfect = classification_metrics(labels, labels, 2);
  CHECK(perfect.accuracy == 1.0);
  const std::vector<std::size_t> balanced{0, 1, 0, 1}, collapse{0, 0, 0, 0};
  CHECK(classification_metrics(collapse, balanced, 2).accuracy == 0.5);
  CHECK(classification_metrics(balanced, balanced, 2).macro_f1 == 1.0);
}

TEST_CASE("per-sample F1 scores average to macro F1") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::size_t> p(20), y(20);
    for (std::size_t i = 0; i < 20; ++i) {
      y[i] = i % 2;
      p[i] = rng() % 2;
    }
    const auto s = f1_scores(p, y, 2);
    double mean = 0;
    for (double v : s) {
      mean += v / 20;
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK(mean == doctest::Approx(classification_metrics(p, y, 2).macro_f1).epsilon(1e-12));
  }
}

TEST_CASE("confidence metric invariants on random outcomes") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  std::vector<SampleOutcome> batch;
  for (int i = 0; i < 500; ++i) batch.push_back(outcome(u(rng), u(rng), u(rng)));
  for (const auto& o : batch) {
    const std::vector<SampleOutcome> one{o};
    CHECK(!(average_decrease(one) > 0 && average_gain(one) > 0));
  }
  double not_increased = 0;
  for (const auto& o : batch) {
    const std::size_t c = o.p_orig[0] >= o.p_orig[1] ? 0 : 1;
    not_increased += o.p_masked[c] <= o.p_orig[c];
  }
  CHECK(average_increase(batch) + 100.0 * not_increased / 500 == doctest::Approx(100.0));
  for (double v : {average_increase(batch), average_decrease(batch), average_gain(batch), fid_in(batch)}) {
    CHECK(v >= 0.0);
    CHECK(v <= 100.0);
  }
}

TEST_CASE("masked prediction through the resynthesis path") {
  Fixture fx;
  for (auto s : fx.samples) {
    const auto plain = masked_predict(fx.model, fx.fe, s, false);
    CHECK(plain[0] + plain[1] == doctest::Approx(1.0).epsilon(1e-12));
    s.mask = Matrix::Ones(s.magnitude.rows(), s.magnitude.cols());
    const auto ones = masked_predict(fx.model, fx.fe, s, true);
    CHECK(std::abs(ones[0] - plain[0]) <= 1e-6);
    s.mask.setZero();
    const auto silent = masked_predict(fx.model, fx.fe, s, true);
    EvalSample silence = s;
    silence.magnitude.setZero();
    CHECK(silent == masked_predict(fx.model, fx.fe, silence, false));
    s.mask = Matrix::Ones(2, 2);
    CHECK_THROWS_AS(masked_predict(fx.model, fx.fe, s, true), InvalidInput);
  }
}

TEST_CASE("identity and zero masks through evaluate_sample") {
  Fixture fx;
  std::vector<SampleOutcome> ones, zeros;
  std::vector<Matrix> one_masks, zero_masks;
  for (auto s : fx.samples) {
    s.mask = Matrix::Ones(s.magnitude.rows(), s.magnitude.cols());
    ones.push_back(evaluate_sample(fx.model, fx.fe, s));
    one_masks.push_back(s.mask);
    s.mask.setZero();
    zeros.push_back(evaluate_sample(fx.model, fx.fe, s));
    zero_masks.push_back(s.mask);
  }
  const auto r = aggregate("saliency", "0", ones, one_masks);
  CHECK(r.ai == 0.0);
  CHECK(r.ad == 0.0);
  CHECK(r.ag == 0.0);
  CHECK(r.fid_in == 100.0);
  CHECK(r.mask_mean == 1.0);
  CHECK(r.mask_std == 0.0);
  CHECK(faithfulness(zeros) == 0.0);
}

TEST_CASE("metric CSV layout") {
  std::vector<MetricRow> rows{{"ig", "0", 50, 10, 5, 0.25, 75, 0.5, 2, 0.1, 0.2},
                              {"ig", "1", 100, 20, 15, 0.75, 25, 0.7, 4, 0.3, 0.4}};
  std::ostringstream out;
  write_metric_csv(out, rows);
  CHECK(out.str() ==
        "method,fold,AI,AD,AG,FF,Fid-In,SPS,COMP,mask_mean,mask_std\n"
        "ig,0,50,10,5,0.25,75,0.5,2,0.1,0.2\n"
        "ig,1,100,20,15,0.75,25,0.7,4,0.3,0.4\n"
        "ig,mean,75,15,10,0.5,50,0.6,3,0.2,0.30000000000000004\n"
        "ig,std,25,5,5,0.25,25,0.09999999999999998,1,0.09999999999999999,0.1\n");
}
