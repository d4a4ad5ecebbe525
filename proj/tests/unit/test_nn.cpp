#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "saliency_audit/nn/checkpoint.hpp"
#include "saliency_audit/nn/model.hpp"
#include "saliency_audit/nn/tape.hpp"
#include "saliency_audit/nn/train.hpp"

using namespace sa;
using namespace sa::nn;

namespace {

Tensor<double> random_tensor(Shape dims, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(std::move(dims));
  for (auto& v : t.data) v = u(rng);
  return t;
}

template <typename T>
std::vector<T> vec(const Tensor<T>& t) {
  return {t.data.begin(), t.data.end()};
}

// Builds a graph from `inputs`, reduces it to <out, probe>, and checks the
// tape gradient of every input against central differences.
using GraphFn = std::function<NodeId(Tape<double>&, const std::vector<NodeId>&)>;

double max_fd_error(const std::vector<Tensor<double>>& inputs, const GraphFn& fn, std::uint64_t seed = 1) {
  Tensor<double> probe;
  auto eval = [&](const std::vector<Tensor<double>>& in, std::vector<Tensor<double>>* grads) {
    Tape<double> tape;
    std::vector<NodeId> ids;
    for (const auto& t : in) ids.push_back(tape.leaf(t, true));
    const NodeId out = fn(tape, ids);
    if (probe.size() == 0) probe = random_tensor(tape.value(out).dims, seed);
    const NodeId p = tape.leaf(probe, false);
    const NodeId loss = tape.sum(tape.mul(out, p));
    if (grads) {
      tape.backward(loss);
      for (auto id : ids) grads->push_back(tape.grad(id));
    }
    return tape.value(loss)[0];
  };
  std::vector<Tensor<double>> grads;
  eval(inputs, &grads);
  double err = 0;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    for (std::size_t i = 0; i < inputs[a].size(); ++i) {
      auto f = [&](const std::vector<double>& flat) {
        auto in = inputs;
        in[a] = Tensor<double>(in[a].dims, flat);
        return eval(in, nullptr);
      };
      const double fd = oracle::central_difference(f, vec(inputs[a]), i, 1e-6);
      err = std::max(err, std::abs(fd - grads[a][i]));
    }
  }
  return err;
}

ModelConfig tiny_config(InputKind kind = InputKind::magnitude) {
  ModelConfig cfg;
  cfg.input_kind = kind;
  cfg.input_height = 8;
  cfg.input_width = 6;
  cfg.conv = {{3, 3, 1}, {4, 3, 1}};
  cfg.hidden = 5;
  cfg.n_classes = 3;
  cfg.input_shift = 0.2;
  cfg.input_scale = 1.5;
  return cfg;
}

// Two classes separated by which half of the input carries energy.
Dataset<float> toy_dataset(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0, 0.2f);
  Dataset<float> d;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = i % 2;
    Tensor<float> x({8, 6});
    for (std::size_t r = 0; r < 8; ++r)
      for (std::size_t c = 0; c < 6; ++c) x.data[r * 6 + c] = u(rng) + ((c < 3) == (y == 0) ? 1.0f : 0.0f);
    d.inputs.push_back(std::move(x));
    d.labels.push_back(y);
  }
  return d;
}

}  // namespace

TEST_CASE("conv2d gradients match finite differences") {
  for (std::size_t stride : {1, 2})
    for (std::size_t pad : {0, 1}) {
      const auto x = random_tensor({2, 2, 5, 6}, 1);
      const auto w = random_tensor({3, 2, 3, 3}, 2);
      const auto b = random_tensor({3}, 3);
      CHECK(max_fd_error({x, w, b}, [&](Tape<double>& t, const std::vector<NodeId>& id) {
              return t.conv2d(id[0], id[1], id[2], stride, pad);
            }) < 1e-7);
    }
}

TEST_CASE("conv2d of a delta kernel copies the input") {
  Tape<double> t;
  const auto x = random_tensor({1, 1, 4, 5}, 4);
  Tensor<double> w({1, 1, 3, 3});
  w.data[4] = 1.0;
  const auto y = t.conv2d(t.leaf(x, false), t.leaf(w, false), t.leaf(Tensor<double>({1}), false), 1, 1);
  CHECK(t.value(y).dims == Shape{1, 1, 4, 5});
  CHECK(t.value(y).data == x.data);
}

TEST_CASE("pooling, dense, matmul and elementwise ops match finite differences") {
  const auto x4 = random_tensor({2, 3, 5, 4}, 5);
  CHECK(max_fd_error({x4}, [](Tape<double>& t, const std::vector<NodeId>& id) { return t.maxpool2d(id[0], 2); }) < 1e-7);
  CHECK(max_fd_error({x4}, [](Tape<double>& t, const std::vector<NodeId>& id) { return t.mean_pool(id[0]); }) < 1e-7);
  CHECK(max_fd_error({x4}, [](Tape<double>& t, const std::vector<NodeId>& id) { return t.flatten(id[0]); }) < 1e-7);
  CHECK(max_fd_error({x4}, [](Tape<double>& t, const std::vector<NodeId>& id) {
          return t.mul(t.center_rows(id[0]), id[0]);
        }) < 1e-7);
  CHECK(max_fd_error({x4}, [](Tape<double>& t, const std::vector<NodeId>& id) {
          return t.affine(id[0], 1.7, 0.3);
        }) < 1e-7);
  const auto x = random_tensor({4, 6}, 6);
  const auto w = random_tensor({3, 6}, 7);
  const auto b = random_tensor({3}, 8);
  CHECK(max_fd_error({x, w, b}, [](Tape<double>& t, const std::vector<NodeId>& id) {
          return t.dense(id[0], id[1], id[2]);
        }) < 1e-7);
  const auto m = random_tensor({6, 2}, 9);
  CHECK(max_fd_error({x, m}, [](Tape<double>& t, const std::vector<NodeId>& id) { return t.matmul(id[0], id[1]); }) < 1e-7);
  const auto y = random_tensor({4, 6}, 10);
  CHECK(max_fd_error({x, y}, [](Tape<double>& t, const std::vector<NodeId>& id) {
          return t.mul(t.add(id[0], id[1]), id[1]);
        }) < 1e-7);
  CHECK(max_fd_error({x}, [](Tape<double>& t, const std::vector<NodeId>& id) { return t.relu(id[0]); }) < 1e-7);
}

TEST_CASE("softmax cross-entropy gradient matches finite differences and closed form") {
  const auto z = random_tensor({3, 4}, 11, -2, 2);
  const std::vector<std::size_t> labels{0, 3, 1};
  Tape<double> t;
  const auto zid = t.leaf(z, true);
  const auto loss = t.softmax_cross_entropy(zid, labels);
  t.backward(loss);
  double expected = 0;
  for (std::size_t n = 0; n < 3; ++n) {
    const auto p = softmax<double>(std::span(z.data).subspan(n * 4, 4));
    expected -= std::log(p[labels[n]]) / 3;
    for (std::size_t c = 0; c < 4; ++c)
      CHECK(t.grad(zid)[n * 4 + c] == doctest::Approx((p[c] - (c == labels[n])) / 3).epsilon(1e-12));
  }
  CHECK(t.value(loss)[0] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("softmax is stable and sums to one") {
  const std::vector<double> big{1000.0, 1001.0, 999.0};
  const auto p = softmax<double>(big);
  CHECK(p[0] + p[1] + p[2] == doctest::Approx(1.0));
  CHECK(std::all_of(p.begin(), p.end(), [](double v) { return std::isfinite(v); }));
  const auto q = softmax<double>(std::vector<double>{0.0, 0.0});
  CHECK(q[0] == doctest::Approx(0.5));
  const auto r = softmax<double>(std::vector<double>{std::log(3.0), 0.0});
  CHECK(r[0] == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(r[1] == doctest::Approx(0.25).epsilon(1e-12));
  double prev = 0;
  for (double z : {-2.0, -0.5, 0.0, 0.5, 2.0}) {
    const double p0 = softmax<double>(std::vector<double>{z, 0.3, -0.1})[0];
    CHECK(p0 > prev);
    prev = p0;
  }
}

TEST_CASE("confident correct logits give near-zero cross-entropy") {
  Tape<double> t;
  const std::vector<std::size_t> labels{1, 0};
  const auto z = t.leaf(Tensor<double>({2, 2}, std::vector<double>{-10.0, 10.0, 10.0, -10.0}), false);
  CHECK(t.value(t.softmax_cross_entropy(z, labels))[0] <= 1e-6);
}

TEST_CASE("guided relu also drops negative upstream gradient") {
  const Tensor<double> x({4}, std::vector<double>{-1.0, 2.0, 3.0, -4.0});
  const Tensor<double> g({4}, std::vector<double>{5.0, -6.0, 7.0, 8.0});
  for (auto mode : {ReluMode::standard, ReluMode::guided}) {
    Tape<double> t(mode);
    const auto xi = t.leaf(x, true);
    const auto y = t.relu(xi);
    t.backward(y, g);
    const std::vector<double> want =
        mode == ReluMode::standard ? std::vector<double>{0, -6, 7, 0} : std::vector<double>{0, 0, 7, 0};
    CHECK(vec(t.grad(xi)) == want);
  }
}

TEST_CASE("classifier input gradient matches finite differences, including layer captures") {
  for (auto hidden : {0, 5}) {
    auto cfg = tiny_config();
    cfg.hidden = hidden;
    cfg.time_center = hidden != 0;
    const Classifier<double> model(cfg, 42);
    const auto x = random_tensor({8, 6}, 12, 0, 1);
    for (std::size_t cls = 0; cls < 3; ++cls) {
      const auto g = model.grad_input(x, cls);
      double err = 0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        auto f = [&](const std::vector<double>& flat) { return model.forward(Tensor<double>(x.dims, flat))[cls]; };
        err = std::max(err, std::abs(oracle::central_difference(f, vec(x), i, 1e-6) - g[i]));
      }
      CHECK(err < 1e-7);
    }
    // Layer capture gradient: perturb the captured activation through the
    // remainder of the network, rebuilt by hand from the parameters.
    const auto cap = model.layer_capture(x, 1, 2);
    CHECK(cap.activations.dims == Shape{4, 4, 3});
    CHECK(cap.gradients.dims == cap.activations.dims);
    const auto& p = model.parameters();
    auto head = [&](const std::vector<double>& a) {
      Tape<double> t;
      auto h = t.mean_pool(t.maxpool2d(t.leaf(Tensor<double>({1, 4, 4, 3}, a), false), 2));
      std::size_t k = 4;
      if (hidden) {
        h = t.relu(t.dense(h, t.leaf(p[k], false), t.leaf(p[k + 1], false)));
        k += 2;
      }
      const auto out = t.dense(h, t.leaf(p[k], false), t.leaf(p[k + 1], false));
      return t.value(out)[2];
    };
    double err = 0;
    // Zero activations sit on ReLU/max-pool kinks where differences are one-sided.
    std::size_t checked = 0;
    for (std::size_t i = 0; i < cap.activations.size(); ++i) {
      if (cap.activations[i] <= 0) continue;
      err = std::max(err, std::abs(oracle::central_difference(head, vec(cap.activations), i, 1e-6) -
                                   cap.gradients[i]));
      ++checked;
    }
    CHECK(checked > 5);
    CHECK(err < 1e-7);
  }
}

TEST_CASE("linear model without conv layers has its weights as gradient") {
  ModelConfig cfg = tiny_config();
  cfg.conv.clear();
  cfg.hidden = 0;
  cfg.input_shift = 0.0;
  cfg.input_scale = 1.0;
  const Classifier<double> model(cfg, 3);
  const auto x = random_tensor({8, 6}, 13);
  const auto g = model.grad_input(x, 1);
  const auto& w = model.parameters()[0];
  REQUIRE(w.dims == Shape{3, 48});
  for (std::size_t i = 0; i < 48; ++i) CHECK(g[i] == doctest::Approx(w[48 + i]).epsilon(1e-14));
  const auto logits = model.forward(x);
  double manual = model.parameters()[1][1];
  for (std::size_t i = 0; i < 48; ++i) manual += w[48 + i] * x[i];
  CHECK(logits[1] == doctest::Approx(manual).epsilon(1e-12));
}

TEST_CASE("zero-weight model is uniform with zero input gradient") {
  const auto model = Classifier<double>::zeros(tiny_config());
  const auto x = random_tensor({8, 6}, 14);
  const auto p = model.predict_proba(x);
  for (double v : p) CHECK(v == doctest::Approx(1.0 / 3));
  const auto g = model.grad_input(x, 0);
  CHECK(std::all_of(g.data.begin(), g.data.end(), [](double v) { return v == 0.0; }));
}

TEST_CASE("batched forward agrees with single forward") {
  const Classifier<double> model(tiny_config(), 5);
  const auto a = random_tensor({8, 6}, 15);
  const auto b = random_tensor({8, 6}, 16);
  std::vector<double> both = vec(a);
  both.insert(both.end(), b.data.begin(), b.data.end());
  const auto batch = model.forward(Tensor<double>({2, 8, 6}, both));
  const auto la = model.forward(a);
  const auto lb = model.forward(b);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(batch[c] == doctest::Approx(la[c]).epsilon(1e-12));
    CHECK(batch[3 + c] == doctest::Approx(lb[c]).epsilon(1e-12));
  }
}

TEST_CASE("classifier rejects bad configs and inputs") {
  auto cfg = tiny_config();
  cfg.n_classes = 1;
  CHECK_THROWS_AS(cfg.validate(), InvalidInput);
  cfg = tiny_config();
  cfg.input_height = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidInput);
  cfg = tiny_config();
  cfg.input_scale = 0.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidInput);
  const Classifier<double> model(tiny_config(), 1);
  CHECK_THROWS_AS(model.forward(Tensor<double>({7, 6})), InvalidInput);
  CHECK_THROWS_AS(model.grad_input(Tensor<double>({8, 6}), 3), InvalidInput);
  CHECK_THROWS_AS(model.layer_capture(Tensor<double>({8, 6}), 2, 0), InvalidInput);
}

TEST_CASE("training is deterministic and learns a separable toy set") {
  const auto data = toy_dataset(64, 1);
  const auto val = toy_dataset(32, 2);
  auto cfg = tiny_config();
  cfg.n_classes = 2;
  cfg.input_shift = 0.0;
  cfg.input_scale = 1.0;
  TrainConfig tc;
  tc.epochs = 40;
  tc.learning_rate = 0.05;
  tc.batch_size = 8;
  tc.seed = 7;
  Classifier<float> a(cfg, 1), b(cfg, 1);
  const auto ha = train(a, data, tc, &val);
  const auto hb = train(b, data, tc, &val);
  CHECK(ha.size() == 41);
  CHECK(ha.front().epoch == 0);
  for (std::size_t i = 0; i < a.parameters().size(); ++i) CHECK(a.parameters()[i].data == b.parameters()[i].data);
  CHECK(ha.back().val_accuracy >= 0.99);
  CHECK(accuracy(predict(a, std::span<const Tensor<float>>(val.inputs)), val.labels) >= 0.99);
  CHECK(ha.back().loss < ha.front().loss);
}

TEST_CASE("zero learning rate or zero epochs leave parameters unchanged") {
  const auto data = toy_dataset(16, 3);
  auto cfg = tiny_config();
  cfg.n_classes = 2;
  const Classifier<float> init(cfg, 9);
  TrainConfig tc;
  tc.epochs = 3;
  tc.learning_rate = 0.0;
  auto m = init;
  const auto h = train(m, data, tc);
  CHECK(h.size() == 4);
  for (std::size_t i = 0; i < m.parameters().size(); ++i) CHECK(m.parameters()[i].data == init.parameters()[i].data);
  tc.epochs = 0;
  tc.learning_rate = 0.01;
  CHECK(train(m, data, tc).size() == 1);
  for (std::size_t i = 0; i < m.parameters().size(); ++i) CHECK(m.parameters()[i].data == init.parameters()[i].data);
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), InvalidInput);
}

TEST_CASE("input normalization standardizes the data") {
  const auto data = toy_dataset(20, 4);
  auto cfg = tiny_config();
  fit_input_normalization(cfg, std::span<const Tensor<float>>(data.inputs));
  double s = 0, s2 = 0, n = 0;
  for (const auto& x : data.inputs)
    for (float v : x.data) {
      const double z = (v - cfg.input_shift) * cfg.input_scale;
      s += z;
      s2 += z * z;
      ++n;
    }
  CHECK(s / n == doctest::Approx(0.0).epsilon(1e-6).scale(1.0));
  CHECK(s2 / n == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("center_rows removes the mean over frames of every column") {
  const auto x = random_tensor({2, 1, 5, 3}, 21);
  Tape<double> t;
  const auto y = t.value(t.center_rows(t.leaf(x, false)));
  for (std::size_t p = 0; p < 2; ++p)
    for (std::size_t c = 0; c < 3; ++c) {
      double m = 0;
      for (std::size_t r = 0; r < 5; ++r) m += x.data[p * 15 + r * 3 + c];
      m /= 5;
      for (std::size_t r = 0; r < 5; ++r)
        CHECK(y.data[p * 15 + r * 3 + c] == doctest::Approx(x.data[p * 15 + r * 3 + c] - m).epsilon(1e-12));
    }
}

TEST_CASE("time-centered normalization standardizes the centered data") {
  const auto data = toy_dataset(20, 4);
  auto cfg = tiny_config();
  cfg.time_center = true;
  fit_input_normalization(cfg, std::span<const Tensor<float>>(data.inputs));
  const std::size_t w = cfg.input_width, h = cfg.input_height;
  double s = 0, s2 = 0, n = 0;
  for (const auto& x : data.inputs)
    for (std::size_t c = 0; c < w; ++c) {
      double m = 0;
      for (std::size_t r = 0; r < h; ++r) m += x.data[r * w + c];
      m /= static_cast<double>(h);
      for (std::size_t r = 0; r < h; ++r) {
        const double z = (x.data[r * w + c] - m - cfg.input_shift) * cfg.input_scale;
        s += z;
        s2 += z * z;
        ++n;
      }
    }
  CHECK(s / n == doctest::Approx(0.0).epsilon(1e-6).scale(1.0));
  CHECK(s2 / n == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("checkpoints round trip exactly") {
  auto cfg = tiny_config(InputKind::log_mel);
  cfg.input_shift = -3.25;
  cfg.time_center = true;
  const Classifier<float> model(cfg, 77);
  std::stringstream buf;
  write_checkpoint(buf, model);
  CHECK(buf.str().substr(0, 4) == "SAMC");
  const auto back = read_checkpoint(buf);
  CHECK(back.config().input_kind == InputKind::log_mel);
  CHECK(back.config().input_shift == -3.25);
  CHECK(back.config().time_center);
  CHECK(back.config().conv.size() == 2);
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    CHECK(back.parameters()[i].dims == model.parameters()[i].dims);
    CHECK(back.parameters()[i].data == model.parameters()[i].data);
  }
  std::stringstream bad("SAMC\x05\x00\x00\x00{\"x\":1}");
  CHECK_THROWS_AS(read_checkpoint(bad), InvalidInput);
  Json j = cfg;
  j["extra"] = 1;
  ModelConfig parsed;
  CHECK_THROWS_AS(from_json(j, parsed), InvalidInput);
}
