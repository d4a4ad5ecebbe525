#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "saliency_audit/metrics/metrics.hpp"

namespace sa::overlap {

using BinaryMask = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class CombineMode { intersection, union_ };

std::string to_string(CombineMode m);
CombineMode combine_mode_from_string(const std::string& name);

/// 1[a >= tau].
BinaryMask binarize(const Matrix& a, double tau);
/// Elementwise min (intersection) or max (union).
Matrix combine(const Matrix& a, const Matrix& b, CombineMode mode);
/// |a and b| / |a or b|; 1 when both are empty.
double iou(const BinaryMask& a, const BinaryMask& b);

struct StudySample {
  std::string id;
  Matrix magnitude;
  Matrix phase;
  std::size_t source_length = 0;
  std::map<std::string, Matrix> masks;  // method name -> normalized map
};

struct OverlapRecord {
  std::string sample_id;
  std::string method_a;
  std::string method_b;
  CombineMode mode = CombineMode::intersection;
  double iou = 0.0;
  double ad = 0.0;  // percent, on the combined map
  double ff = 0.0;
};

struct StudyConfig {
  double tau = 0.5;
  CombineMode mode = CombineMode::intersection;
  bool include_self = false;
  std::size_t jobs = 1;
};

/// One record per (sample, unordered method pair), in sample order and then
/// pair order; with include_self each method is also paired with itself.
std::vector<OverlapRecord> overlap_study(const nn::Classifier<double>& model, const metrics::FrontEnd& fe,
                                         std::span<const StudySample> samples, std::span<const std::string> methods,
                                         const StudyConfig& cfg);

/// Pearson correlation; NaN when either input is constant.
double pearson(std::span<const double> x, std::span<const double> y);

inline constexpr const char* kScatterCsvHeader = "sample_id,method_a,method_b,mode,iou,ad,ff";
inline constexpr const char* kSummaryCsvHeader =
    "method_a,method_b,mode,records,mean_iou,mean_ad,mean_ff,pearson_iou_ad,pearson_iou_ff";

void write_scatter_csv(std::ostream& out, std::span<const OverlapRecord> records);
/// One row per method pair plus an "all,all" row pooling every record.
void write_summary_csv(std::ostream& out, std::span<const OverlapRecord> records);

}  // namespace sa::overlap
