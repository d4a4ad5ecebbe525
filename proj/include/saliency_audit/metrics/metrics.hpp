#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "saliency_audit/common.hpp"
#include "saliency_audit/dsp/mel.hpp"
#include "saliency_audit/dsp/stft.hpp"
#include "saliency_audit/nn/model.hpp"

namespace sa::metrics {

/// Front-end settings shared by every prediction on resynthesized audio.
struct FrontEnd {
  dsp::StftConfig stft;
  dsp::MelConfig mel;
};

struct EvalSample {
  std::string id;
  Matrix magnitude;  // X_f
  Matrix phase;
  std::size_t source_length = 0;
  std::size_t label = 0;
  Matrix mask;  // normalized attribution, same shape as X_f
};

/// Class probabilities on istft(mask ⊙ X_f, phase) when use_mask, otherwise
/// on istft(X_f, phase).
std::vector<double> masked_predict(const nn::Classifier<double>& model, const FrontEnd& fe, const EvalSample& s,
                                   bool use_mask);

/// Probabilities on the original, the masked and the masked-out input
/// ((1 - mask) ⊙ X_f).
struct SampleOutcome {
  std::vector<double> p_orig;
  std::vector<double> p_masked;
  std::vector<double> p_maskout;
};

SampleOutcome evaluate_sample(const nn::Classifier<double>& model, const FrontEnd& fe, const EvalSample& s);

// Confidences are read at the class predicted on the original input.
double average_increase(std::span<const SampleOutcome> batch);
double average_decrease(std::span<const SampleOutcome> batch);
double average_gain(std::span<const SampleOutcome> batch);
double faithfulness(std::span<const SampleOutcome> batch);
double fid_in(std::span<const SampleOutcome> batch);

/// Gini index of the flattened non-negative map.
double sparseness(const Matrix& a);
/// Entropy (nats) of a / sum(a).
double complexity(const Matrix& a);

/// mean_i score_i * (1 - mask_mean_i).
double selective_metric(std::span<const double> scores, std::span<const double> mask_means);

struct Classification {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

Classification classification_metrics(std::span<const std::size_t> preds, std::span<const std::size_t> labels,
                                       std::size_t n_classes);

/// Per-sample 0/1 correctness.
std::vector<double> accuracy_scores(std::span<const std::size_t> preds, std::span<const std::size_t> labels);
/// Per-sample share of macro F1: F1 of the sample's true class times
/// N / (C * n_class). Their mean is the macro F1.
std::vector<double> f1_scores(std::span<const std::size_t> preds, std::span<const std::size_t> labels,
                              std::size_t n_classes);

struct MetricRow {
  std::string method;
  std::string fold;
  double ai = 0, ad = 0, ag = 0, ff = 0, fid_in = 0, sps = 0, comp = 0, mask_mean = 0, mask_std = 0;
};

/// Aggregates one (method, fold) row from per-sample outcomes and masks.
MetricRow aggregate(const std::string& method, const std::string& fold, std::span<const SampleOutcome> outcomes,
                    std::span<const Matrix> masks);

/// Mean and (population) std of a list of values.
std::pair<double, double> mean_std(std::span<const double> v);

/// Mean of every pooled mask value, and their std.
std::pair<double, double> mask_stats(std::span<const Matrix> masks);

inline constexpr const char* kMetricCsvHeader = "method,fold,AI,AD,AG,FF,Fid-In,SPS,COMP,mask_mean,mask_std";

/// Rows in input order, then per method a "mean" and a "std" row over its folds.
void write_metric_csv(std::ostream& out, std::span<const MetricRow> rows);

/// Shortest decimal that round-trips, for stable CSV output.
std::string format_number(double v);

}  // namespace sa::metrics
