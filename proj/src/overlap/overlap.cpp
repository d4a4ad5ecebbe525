#include "saliency_audit/overlap/overlap.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <utility>

#include "saliency_audit/attribution/explainee.hpp"
#include "saliency_audit/parallel.hpp"

namespace sa::overlap {

using metrics::format_number;

std::string to_string(CombineMode m) { return m == CombineMode::intersection ? "intersection" : "union"; }

CombineMode combine_mode_from_string(const std::string& name) {
  if (name == "intersection") return CombineMode::intersection;
  if (name == "union") return CombineMode::union_;
  throw InvalidInput("unknown combine mode '" + name + "' (expected union or intersection)");
}

BinaryMask binarize(const Matrix& a, double tau) { return (a.array() >= tau).cast<std::uint8_t>().matrix(); }

Matrix combine(const Matrix& a, const Matrix& b, CombineMode mode) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InvalidInput("combine: maps differ in shape");
  if (mode == CombineMode::intersection) return a.cwiseMin(b);
  return a.cwiseMax(b);
}

double iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InvalidInput("iou: masks differ in shape");
  std::size_t inter = 0, uni = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const bool x = a.data()[i] != 0, y = b.data()[i] != 0;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<OverlapRecord> overlap_study(const nn::Classifier<double>& model, const metrics::FrontEnd& fe,
                                         std::span<const StudySample> samples, std::span<const std::string> methods,
                                         const StudyConfig& cfg) {
  if (methods.size() < 2) throw InvalidInput("overlap study needs at least 2 methods");
  std::vector<std::pair<std::string, std::string>> pairs;
  for (std::size_t i = 0; i < methods.size(); ++i)
    for (std::size_t j = cfg.include_self ? i : i + 1; j < methods.size(); ++j) pairs.emplace_back(methods[i], methods[j]);
  for (const auto& s : samples)
    for (const auto& m : methods)
      if (!s.masks.count(m)) throw InvalidInput("overlap study: sample " + s.id + " has no map for method " + m);

  std::vector<OverlapRecord> records(samples.size() * pairs.size());
  parallel_for(samples.size(), cfg.jobs, [&](std::size_t si) {
    const auto& s = samples[si];
    const attribution::ResynthesisExplainee f(model, fe.stft, fe.mel, s.phase, s.source_length);
    const auto p_orig = attribution::softmax(f.logits(s.magnitude));
    const std::size_t c = attribution::argmax(p_orig);
    for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
      const auto& a = s.masks.at(pairs[pi].first);
      const auto& b = s.masks.at(pairs[pi].second);
      const Matrix combined = combine(a, b, cfg.mode);
      metrics::SampleOutcome o;
      o.p_orig = p_orig;
      o.p_masked = attribution::softmax(f.logits(combined.cwiseProduct(s.magnitude)));
      o.p_maskout = attribution::softmax(f.logits((1.0 - combined.array()).matrix().cwiseProduct(s.magnitude)));
      const std::span<const metrics::SampleOutcome> one(&o, 1);
      auto& r = records[si * pairs.size() + pi];
      r.sample_id = s.id;
      r.method_a = pairs[pi].first;
      r.method_b = pairs[pi].second;
      r.mode = cfg.mode;
      r.iou = iou(binarize(a, cfg.tau), binarize(b, cfg.tau));
      r.ad = metrics::average_decrease(one);
      r.ff = o.p_orig[c] - o.p_maskout[c];
    }
  });
  return records;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InvalidInput("pearson: inputs differ in length");
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (x.size() < 2) return nan;
  const auto [mx, sx] = metrics::mean_std(x);
  const auto [my, sy] = metrics::mean_std(y);
  if (!(sx > 0.0) || !(sy > 0.0)) return nan;
  double cov = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) cov += (x[i] - mx) * (y[i] - my);
  return cov / static_cast<double>(x.size()) / (sx * sy);
}

void write_scatter_csv(std::ostream& out, std::span<const OverlapRecord> records) {
  out << kScatterCsvHeader << '\n';
  for (const auto& r : records)
    out << r.sample_id << ',' << r.method_a << ',' << r.method_b << ',' << to_string(r.mode) << ','
        << format_number(r.iou) << ',' << format_number(r.ad) << ',' << format_number(r.ff) << '\n';
}

void write_summary_csv(std::ostream& out, std::span<const OverlapRecord> records) {
  struct Group {
    std::string a, b, mode;
    std::vector<double> iou, ad, ff;
  };
  std::vector<Group> groups;
  Group all{"all", "all", records.empty() ? "" : to_string(records.front().mode), {}, {}, {}};
  for (const auto& r : records) {
    Group* g = nullptr;
    for (auto& x : groups)
      if (x.a == r.method_a && x.b == r.method_b) g = &x;
    if (!g) {
      groups.push_back({r.method_a, r.method_b, to_string(r.mode), {}, {}, {}});
      g = &groups.back();
    }
    for (Group* t : {g, &all}) {
      t->iou.push_back(r.iou);
      t->ad.push_back(r.ad);
      t->ff.push_back(r.ff);
    }
  }
  groups.push_back(std::move(all));
  out << kSummaryCsvHeader << '\n';
  for (const auto& g : groups)
    out << g.a << ',' << g.b << ',' << g.mode << ',' << g.iou.size() << ',' << format_number(metrics::mean_std(g.iou).first)
        << ',' << format_number(metrics::mean_std(g.ad).first) << ',' << format_number(metrics::mean_std(g.ff).first)
        << ',' << format_number(pearson(g.iou, g.ad)) << ',' << format_number(pearson(g.iou, g.ff)) << '\n';
}

}  // namespace sa::overlap
