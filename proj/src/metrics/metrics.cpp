#include "saliency_audit/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>

#include <fmt/format.h>

#include "saliency_audit/attribution/explainee.hpp"

namespace sa::metrics {
namespace {

std::size_t original_class(const SampleOutcome& o) { return attribution::argmax(o.p_orig); }

template <typename Term>
double mean_over(std::span<const SampleOutcome> batch, Term term) {
  if (batch.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& o : batch) acc += term(o, original_class(o));
  return acc / static_cast<double>(batch.size());
}

void check_pair(std::span<const std::size_t> preds, std::span<const std::size_t> labels) {
  if (preds.size() != labels.size()) throw InvalidInput("metrics: predictions and labels differ in length");
}

}  // namespace

std::vector<double> masked_predict(const nn::Classifier<double>& model, const FrontEnd& fe, const EvalSample& s,
                                   bool use_mask) {
  const attribution::ResynthesisExplainee f(model, fe.stft, fe.mel, s.phase, s.source_length);
  if (!use_mask) return attribution::softmax(f.logits(s.magnitude));
  if (s.mask.rows() != s.magnitude.rows() || s.mask.cols() != s.magnitude.cols())
    throw InvalidInput("masked_predict: mask shape does not match X_f for sample " + s.id);
  return attribution::softmax(f.logits(s.mask.cwiseProduct(s.magnitude)));
}

SampleOutcome evaluate_sample(const nn::Classifier<double>& model, const FrontEnd& fe, const EvalSample& s) {
  if (s.mask.rows() != s.magnitude.rows() || s.mask.cols() != s.magnitude.cols())
    throw InvalidInput("evaluate: mask shape does not match X_f for sample " + s.id);
  const attribution::ResynthesisExplainee f(model, fe.stft, fe.mel, s.phase, s.source_length);
  SampleOutcome o;
  o.p_orig = attribution::softmax(f.logits(s.magnitude));
  o.p_masked = attribution::softmax(f.logits(s.mask.cwiseProduct(s.magnitude)));
  const Matrix keep = (1.0 - s.mask.array()).matrix();
  o.p_maskout = attribution::softmax(f.logits(keep.cwiseProduct(s.magnitude)));
  return o;
}

double average_increase(std::span<const SampleOutcome> batch) {
  return 100.0 * mean_over(batch, [](const SampleOutcome& o, std::size_t c) {
           return o.p_masked[c] > o.p_orig[c] ? 1.0 : 0.0;
         });
}

double average_decrease(std::span<const SampleOutcome> batch) {
  return 100.0 * mean_over(batch, [](const SampleOutcome& o, std::size_t c) {
           return o.p_orig[c] > 0.0 ? std::max(0.0, o.p_orig[c] - o.p_masked[c]) / o.p_orig[c] : 0.0;
         });
}

double average_gain(std::span<const SampleOutcome> batch) {
  return 100.0 * mean_over(batch, [](const SampleOutcome& o, std::size_t c) {
           const double headroom = 1.0 - o.p_orig[c];
           return headroom > 0.0 ? std::max(0.0, o.p_masked[c] - o.p_orig[c]) / headroom : 0.0;
         });
}

double faithfulness(std::span<const SampleOutcome> batch) {
  return mean_over(batch, [](const SampleOutcome& o, std::size_t c) { return o.p_orig[c] - o.p_maskout[c]; });
}

double fid_in(std::span<const SampleOutcome> batch) {
  return 100.0 * mean_over(batch, [](const SampleOutcome& o, std::size_t c) {
           return attribution::argmax(o.p_masked) == c ? 1.0 : 0.0;
         });
}

double sparseness(const Matrix& a) {
  std::vector<double> v(a.data(), a.data() + a.size());
  if (v.empty()) return 0.0;
  if (*std::min_element(v.begin(), v.end()) < 0.0) throw InvalidInput("sparseness: map must be non-negative");
  std::sort(v.begin(), v.end());
  double total = 0.0, weighted = 0.0;
  const double n = static_cast<double>(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    total += v[i];
    weighted += (2.0 * static_cast<double>(i + 1) - n - 1.0) * v[i];
  }
  return total > 0.0 ? weighted / (n * total) : 0.0;
}

double complexity(const Matrix& a) {
  if (a.size() && a.minCoeff() < 0.0) throw InvalidInput("complexity: map must be non-negative");
  const double total = a.sum();
  if (!(total > 0.0)) return 0.0;
  double h = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double p = a.data()[i] / total;
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

double selective_metric(std::span<const double> scores, std::span<const double> mask_means) {
  if (scores.size() != mask_means.size()) throw InvalidInput("selective_metric: scores and mask means differ in length");
  if (scores.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) acc += scores[i] * (1.0 - mask_means[i]);
  return acc / static_cast<double>(scores.size());
}

Classification classification_metrics(std::span<const std::size_t> preds, std::span<const std::size_t> labels,
                                       std::size_t n_classes) {
  check_pair(preds, labels);
  Classification out;
  if (preds.empty()) return out;
  std::vector<double> tp(n_classes), fp(n_classes), fn(n_classes);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] >= n_classes || labels[i] >= n_classes) throw InvalidInput("metrics: class index out of range");
    if (preds[i] == labels[i]) {
      ++correct;
      ++tp[labels[i]];
    } else {
      ++fp[preds[i]];
      ++fn[labels[i]];
    }
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(preds.size());
  for (std::size_t c = 0; c < n_classes; ++c) {
    const double p = tp[c] + fp[c] > 0 ? tp[c] / (tp[c] + fp[c]) : 0.0;
    const double r = tp[c] + fn[c] > 0 ? tp[c] / (tp[c] + fn[c]) : 0.0;
    out.macro_f1 += p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
  out.macro_f1 /= static_cast<double>(n_classes);
  return out;
}

std::vector<double> accuracy_scores(std::span<const std::size_t> preds, std::span<const std::size_t> labels) {
  check_pair(preds, labels);
  std::vector<double> out(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) out[i] = preds[i] == labels[i] ? 1.0 : 0.0;
  return out;
}

std::vector<double> f1_scores(std::span<const std::size_t> preds, std::span<const std::size_t> labels,
                              std::size_t n_classes) {
  check_pair(preds, labels);
  std::vector<double> f1(n_classes), count(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      tp += preds[i] == c && labels[i] == c;
      fp += preds[i] == c && labels[i] != c;
      fn += preds[i] != c && labels[i] == c;
    }
    const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    f1[c] = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
  for (auto y : labels) {
    if (y >= n_classes) throw InvalidInput("metrics: class index out of range");
    ++count[y];
  }
  // A class absent from the labels has F1 0, so skipping it keeps the mean
  // equal to the macro F1.
  const double n = static_cast<double>(labels.size());
  std::vector<double> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    out[i] = f1[labels[i]] * n / (static_cast<double>(n_classes) * count[labels[i]]);
  return out;
}

std::pair<double, double> mean_std(std::span<const double> v) {
  if (v.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - m) * (x - m);
  return {m, std::sqrt(var / static_cast<double>(v.size()))};
}

std::pair<double, double> mask_stats(std::span<const Matrix> masks) {
  double sum = 0.0, count = 0.0;
  for (const auto& m : masks) {
    sum += m.sum();
    count += static_cast<double>(m.size());
  }
  if (count == 0) return {0.0, 0.0};
  const double mean = sum / count;
  double var = 0.0;
  for (const auto& m : masks) var += (m.array() - mean).square().sum();
  return {mean, std::sqrt(var / count)};
}

MetricRow aggregate(const std::string& method, const std::string& fold, std::span<const SampleOutcome> outcomes,
                    std::span<const Matrix> masks) {
  if (outcomes.size() != masks.size()) throw InvalidInput("aggregate: outcomes and masks differ in length");
  MetricRow r;
  r.method = method;
  r.fold = fold;
  r.ai = average_increase(outcomes);
  r.ad = average_decrease(outcomes);
  r.ag = average_gain(outcomes);
  r.ff = faithfulness(outcomes);
  r.fid_in = fid_in(outcomes);
  double sps = 0.0, comp = 0.0;
  for (const auto& m : masks) {
    sps += sparseness(m);
    comp += complexity(m);
  }
  if (!masks.empty()) {
    r.sps = sps / static_cast<double>(masks.size());
    r.comp = comp / static_cast<double>(masks.size());
  }
  std::tie(r.mask_mean, r.mask_std) = mask_stats(masks);
  return r;
}

std::string format_number(double v) {
  if (v == 0.0) return "0";  // folds -0
  return fmt::format("{}", v);
}

void write_metric_csv(std::ostream& out, std::span<const MetricRow> rows) {
  auto fields = [](const MetricRow& r) {
    return std::vector<double>{r.ai, r.ad, r.ag, r.ff, r.fid_in, r.sps, r.comp, r.mask_mean, r.mask_std};
  };
  auto line = [&](const std::string& method, const std::string& fold, const std::vector<double>& v) {
    out << method << ',' << fold;
    for (double x : v) out << ',' << format_number(x);
    out << '\n';
  };
  out << kMetricCsvHeader << '\n';
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::vector<double>>> by_method;
  for (const auto& r : rows) {
    line(r.method, r.fold, fields(r));
    if (!by_method.count(r.method)) order.push_back(r.method);
    by_method[r.method].push_back(fields(r));
  }
  for (const auto& m : order) {
    const auto& vals = by_method[m];
    std::vector<double> mean(vals[0].size()), sd(vals[0].size());
    for (std::size_t k = 0; k < mean.size(); ++k) {
      std::vector<double> col;
      for (const auto& v : vals) col.push_back(v[k]);
      std::tie(mean[k], sd[k]) = mean_std(col);
    }
    line(m, "mean", mean);
    line(m, "std", sd);
  }
}

}  // namespace sa::metrics
