#include "saliency_audit/harness/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "saliency_audit/dsp/mel.hpp"
#include "saliency_audit/dsp/wav.hpp"
#include "saliency_audit/json_util.hpp"
#include "saliency_audit/parallel.hpp"
#include "saliency_audit/tensor_io.hpp"

namespace sa::harness {
namespace {

constexpr std::uint64_t kSynthStream = 3;
constexpr std::uint64_t kSplitStream = 4;
constexpr std::uint64_t kRetrainSplitStream = 5;
constexpr std::uint64_t kRetrainInitStream = 6;
constexpr std::uint64_t kRetrainShuffleStream = 7;

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr std::array<double, kHarmonics> kHarmonicGain{1.0, 0.6, 0.4, 0.25};

std::string fmt_sample_id(std::size_t index) { return fmt::format("s{:05d}", index); }

void shuffle(std::vector<std::size_t>& v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
}

// Largest-remainder apportionment of `total` units over `quotas`; ties go to
// the lower index.
std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& quotas) {
  std::vector<std::size_t> out(quotas.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t used = 0;
  for (std::size_t j = 0; j < quotas.size(); ++j) {
    out[j] = static_cast<std::size_t>(std::floor(quotas[j] + 1e-9));
    used += out[j];
    rem.emplace_back(quotas[j] - static_cast<double>(out[j]), j);
  }
  std::stable_sort(rem.begin(), rem.end(), [](auto& a, auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; used < total; ++k, ++used) ++out[rem[k % rem.size()].second];
  return out;
}

// Per-class split counts: floor of each share plus at most one extra unit per
// cell, with column totals fixed to `targets`.
std::vector<std::vector<std::size_t>> stratified_counts(const std::vector<std::size_t>& class_sizes,
                                                        const std::array<double, 3>& f,
                                                        const std::vector<std::size_t>& targets) {
  const std::size_t C = class_sizes.size(), K = f.size();
  std::vector<std::vector<std::size_t>> n(C, std::vector<std::size_t>(K));
  std::vector<std::vector<double>> frac(C, std::vector<double>(K));
  std::vector<std::vector<bool>> extra(C, std::vector<bool>(K));
  std::vector<long> need_c(C), need_j(targets.begin(), targets.end());
  for (std::size_t c = 0; c < C; ++c) {
    need_c[c] = static_cast<long>(class_sizes[c]);
    for (std::size_t j = 0; j < K; ++j) {
      const double q = static_cast<double>(class_sizes[c]) * f[j];
      n[c][j] = static_cast<std::size_t>(std::floor(q + 1e-9));
      frac[c][j] = q - static_cast<double>(n[c][j]);
      need_c[c] -= static_cast<long>(n[c][j]);
      need_j[j] -= static_cast<long>(n[c][j]);
    }
  }
  auto open = [&](std::size_t c, std::size_t j) { return frac[c][j] > 1e-9 && !extra[c][j]; };
  std::vector<std::pair<std::size_t, std::size_t>> cells;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t j = 0; j < K; ++j) cells.emplace_back(c, j);
  std::stable_sort(cells.begin(), cells.end(),
                   [&](auto& a, auto& b) { return frac[a.first][a.second] > frac[b.first][b.second]; });
  for (auto [c, j] : cells)
    if (need_c[c] > 0 && need_j[j] > 0 && open(c, j)) {
      extra[c][j] = true;
      --need_c[c];
      --need_j[j];
    }
  // Greedy can strand a unit; move earlier extras along an alternating path.
  for (std::size_t c0 = 0; c0 < C; ++c0)
    while (need_c[c0] > 0) {
      std::vector<long> from_split(K, -1), via_class(K, -1);
      std::vector<std::size_t> queue;
      for (std::size_t j = 0; j < K; ++j)
        if (open(c0, j)) {
          from_split[j] = static_cast<long>(K);  // reached directly from c0
          via_class[j] = static_cast<long>(c0);
          queue.push_back(j);
        }
      long found = -1;
      for (std::size_t qi = 0; qi < queue.size() && found < 0; ++qi) {
        const std::size_t j = queue[qi];
        if (need_j[j] > 0) {
          found = static_cast<long>(j);
          break;
        }
        for (std::size_t c = 0; c < C; ++c) {
          if (!extra[c][j]) continue;
          for (std::size_t j2 = 0; j2 < K; ++j2)
            if (from_split[j2] < 0 && open(c, j2)) {
              from_split[j2] = static_cast<long>(j);
              via_class[j2] = static_cast<long>(c);
              queue.push_back(j2);
            }
        }
      }
      if (found < 0) throw NumericalFailure("split: no stratified assignment matches the split sizes");
      --need_j[static_cast<std::size_t>(found)];
      --need_c[c0];
      for (auto j = static_cast<std::size_t>(found);;) {
        const auto c = static_cast<std::size_t>(via_class[j]);
        extra[c][j] = true;
        if (from_split[j] == static_cast<long>(K)) break;
        const auto prev = static_cast<std::size_t>(from_split[j]);
        extra[c][prev] = false;
        j = prev;
      }
    }
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t j = 0; j < K; ++j) n[c][j] += extra[c][j];
  return n;
}

Matrix model_input(nn::InputKind kind, const Matrix& magnitude, const metrics::FrontEnd& fe) {
  return kind == nn::InputKind::log_mel ? dsp::log_mel(magnitude, fe.mel, fe.stft) : magnitude;
}

struct RunResult {
  double accuracy = 0, selective_accuracy = 0, f1 = 0, selective_f1 = 0;
  std::string error;
};

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch == '\n' ? ' ' : ch;
  }
  return out + '"';
}

}  // namespace

std::string label_name(std::size_t label) {
  if (label == kControl) return "control";
  if (label == kTremor) return "tremor";
  throw InvalidInput("unknown label index " + std::to_string(label));
}

std::size_t label_from_string(const std::string& name) {
  if (name == "control") return kControl;
  if (name == "tremor") return kTremor;
  throw InvalidInput("unknown label '" + name + "' (expected control or tremor)");
}

void SynthConfig::validate() const {
  if (n_per_class == 0) throw InvalidInput("synth: n_per_class must be positive");
  if (!(duration_s >= 0.5)) throw InvalidInput("synth: duration_s must be at least 0.5");
  if (!(f0_min > 0.0) || !(f0_max >= f0_min)) throw InvalidInput("synth: f0 range must be positive and ordered");
  if (!(sample_rate > 0.0)) throw InvalidInput("synth: sample_rate must be positive");
  if (!(f0_max * kHarmonics * (1.0 + kFmPerDepth) < sample_rate / 2.0))
    throw InvalidInput("synth: harmonics exceed the Nyquist frequency");
  if (!(tremor_rate > 0.0)) throw InvalidInput("synth: tremor_rate must be positive");
  if (!(tremor_depth > 0.0 && tremor_depth < 1.0)) throw InvalidInput("synth: tremor_depth must lie in (0, 1)");
  if (!std::isfinite(snr_db)) throw InvalidInput("synth: snr_db must be finite");
}

overlap::BinaryMask ground_truth_region(double f0, std::size_t frames, const SynthConfig& cfg,
                                        const dsp::StftConfig& stft) {
  const std::size_t bins = stft.freq_bins();
  const double df = stft.sample_rate / static_cast<double>(stft.n_fft);
  const double fm = kFmPerDepth * cfg.tremor_depth;
  overlap::BinaryMask row = overlap::BinaryMask::Zero(1, static_cast<Eigen::Index>(bins));
  for (std::size_t k = 1; k <= kHarmonics; ++k) {
    const double kf = static_cast<double>(k) * f0;
    const double lo = kf * (1.0 - fm) - cfg.tremor_rate, hi = kf * (1.0 + fm) + cfg.tremor_rate;
    for (std::size_t b = 0; b < bins; ++b) {
      const double centre = static_cast<double>(b) * df;
      if (centre + df / 2.0 >= lo && centre - df / 2.0 <= hi) row(0, static_cast<Eigen::Index>(b)) = 1;
    }
  }
  return row.replicate(static_cast<Eigen::Index>(frames), 1);
}

SynthSample synth_sample(const SynthConfig& cfg, const dsp::StftConfig& stft, std::size_t index) {
  SynthSample s;
  s.label = index % 2 == 0 ? kControl : kTremor;
  s.seed = derive_seed(cfg.seed, kSynthStream, index);
  s.id = fmt_sample_id(index);
  std::mt19937_64 rng(s.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  s.f0 = cfg.f0_min + (cfg.f0_max - cfg.f0_min) * unit(rng);
  std::array<double, kHarmonics> phase{};
  for (auto& p : phase) p = kTwoPi * unit(rng);
  const double mod_phase = kTwoPi * unit(rng);
  const double level = 0.05 + 0.15 * unit(rng);  // RMS, same range for both classes

  const auto n = static_cast<std::size_t>(std::llround(cfg.duration_s * cfg.sample_rate));
  const double depth = s.label == kTremor ? cfg.tremor_depth : 0.0;
  const double w = kTwoPi * cfg.tremor_rate, fm = kFmPerDepth * depth;
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / cfg.sample_rate;
    const double am = 1.0 + depth * std::sin(w * t + mod_phase);
    double v = 0.0;
    for (std::size_t k = 0; k < kHarmonics; ++k) {
      const double kf = static_cast<double>(k + 1) * s.f0;
      // Phase of a carrier whose instantaneous frequency is kf * (1 + fm sin(w t + mod_phase)).
      const double arg = kTwoPi * kf * t - kTwoPi * kf * fm / w * (std::cos(w * t + mod_phase) - std::cos(mod_phase));
      v += kHarmonicGain[k] * std::sin(arg + phase[k]);
    }
    x[i] = am * v;
  }
  double ms = 0.0;
  for (double v : x) ms += v * v;
  const double gain = level / std::sqrt(ms / static_cast<double>(n));
  const double noise_sd = level * std::pow(10.0, -cfg.snr_db / 20.0);
  std::normal_distribution<double> noise(0.0, noise_sd);
  for (double& v : x) v = v * gain + noise(rng);

  s.waveform = dsp::Waveform{std::move(x), cfg.sample_rate};
  s.ground_truth = ground_truth_region(s.f0, stft.num_frames(n), cfg, stft);
  return s;
}

std::vector<SynthSample> generate_dataset(const SynthConfig& cfg, const dsp::StftConfig& stft, std::size_t jobs) {
  cfg.validate();
  stft.validate();
  std::vector<SynthSample> out(2 * cfg.n_per_class);
  parallel_for(out.size(), jobs, [&](std::size_t i) { out[i] = synth_sample(cfg, stft, i); });
  return out;
}

std::string manifest_line(const ManifestEntry& e) {
  Json j;
  j["id"] = e.id;
  j["wav"] = e.wav.generic_string();
  j["label"] = label_name(e.label);
  j["f0"] = e.f0;
  j["seed"] = e.seed;
  j["ground_truth"] = e.ground_truth.generic_string();
  return j.dump();
}

std::vector<ManifestEntry> write_dataset(const std::filesystem::path& dir, std::span<const SynthSample> samples) {
  std::filesystem::create_directories(dir / "wav");
  std::filesystem::create_directories(dir / "gt");
  std::vector<ManifestEntry> entries;
  std::string manifest;
  for (const auto& s : samples) {
    ManifestEntry e{s.id, std::filesystem::path("wav") / (s.id + ".wav"), s.label, s.f0, s.seed,
                    std::filesystem::path("gt") / (s.id + ".satn")};
    dsp::write_wav(dir / e.wav, s.waveform);
    io::save_matrix(dir / e.ground_truth, s.ground_truth.cast<double>());
    manifest += manifest_line(e) + "\n";
    entries.push_back(std::move(e));
  }
  io::write_text_atomic(dir / "manifest.jsonl", manifest);
  return entries;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  std::vector<ManifestEntry> out;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.filename().string() + ":" + std::to_string(lineno);
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::exception& e) {
      throw InvalidInput(where + ": " + e.what());
    }
    reject_unknown_keys(j, {"id", "wav", "label", "f0", "seed", "ground_truth"}, where);
    for (const char* key : {"id", "wav", "label"})
      if (!j.contains(key)) throw InvalidInput(where + ": missing key '" + key + "'");
    ManifestEntry e;
    std::string wav, label, gt;
    read_optional(j, "id", e.id, where);
    read_optional(j, "wav", wav, where);
    read_optional(j, "label", label, where);
    read_optional(j, "f0", e.f0, where);
    read_optional(j, "seed", e.seed, where);
    read_optional(j, "ground_truth", gt, where);
    e.label = label_from_string(label);
    e.wav = base / wav;
    if (!gt.empty()) e.ground_truth = base / gt;
    out.push_back(std::move(e));
  }
  if (out.empty()) throw InvalidInput("manifest " + path.string() + " has no records");
  return out;
}

void SplitSpec::validate() const {
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw InvalidInput("split: fractions must be positive");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw InvalidInput("split: fractions must sum to 1");
}

Split split(std::span<const std::size_t> labels, const SplitSpec& spec) {
  spec.validate();
  const std::size_t N = labels.size();
  std::vector<double> quotas;
  for (double f : spec.fractions) quotas.push_back(static_cast<double>(N) * f);
  const auto targets = apportion(N, quotas);

  std::vector<std::vector<std::size_t>> parts(3);
  if (!spec.stratified) {
    if (N < 3) throw InvalidInput("split: need at least one sample per split");
    std::vector<std::size_t> idx(N);
    for (std::size_t i = 0; i < N; ++i) idx[i] = i;
    shuffle(idx, derive_seed(spec.seed, kSplitStream));
    std::size_t at = 0;
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < targets[j]; ++k) parts[j].push_back(idx[at++]);
  } else {
    std::map<std::size_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < N; ++i) by_class[labels[i]].push_back(i);
    std::vector<std::size_t> sizes;
    for (const auto& [c, idx] : by_class) {
      if (idx.size() < 3)
        throw InvalidInput("split: class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                           " samples, fewer than the 3 splits");
      sizes.push_back(idx.size());
    }
    const auto counts = stratified_counts(sizes, spec.fractions, targets);
    std::size_t ci = 0;
    for (auto& [c, idx] : by_class) {
      shuffle(idx, derive_seed(spec.seed, kSplitStream, c + 1));
      std::size_t at = 0;
      for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t k = 0; k < counts[ci][j]; ++k) parts[j].push_back(idx[at++]);
      ++ci;
    }
  }
  for (auto& p : parts) std::sort(p.begin(), p.end());
  return {std::move(parts[0]), std::move(parts[1]), std::move(parts[2])};
}

double localization_score(const Matrix& a, const overlap::BinaryMask& gt) {
  if (a.rows() != gt.rows() || a.cols() != gt.cols())
    throw InvalidInput("localization_score: map and ground truth differ in shape");
  const double total = a.sum();
  if (!(total > 0.0)) return 0.0;
  return a.cwiseProduct(gt.cast<double>()).sum() / total;
}

std::string to_string(MaskInput m) { return m == MaskInput::raw_map ? "raw_map" : "masked_log_mel"; }

MaskInput mask_input_from_string(const std::string& name) {
  if (name == "raw_map") return MaskInput::raw_map;
  if (name == "masked_log_mel") return MaskInput::masked_log_mel;
  throw InvalidInput("unknown mask input '" + name + "' (expected raw_map or masked_log_mel)");
}

void RetrainConfig::validate() const {
  train.validate();
  split.validate();
  if (repeats == 0) throw InvalidInput("retrain: repeats must be positive");
}

std::vector<RetrainRow> retrain_on_explanations(const nn::ModelConfig& arch, const metrics::FrontEnd& fe,
                                                std::span<const RetrainItem> items,
                                                std::span<const std::string> methods, const RetrainConfig& cfg) {
  cfg.validate();
  if (items.empty()) throw InvalidInput("retrain: empty evaluation set");
  for (const auto& it : items) {
    if (it.label >= arch.n_classes) throw InvalidInput("retrain: label out of range for sample " + it.id);
    for (const auto& m : methods) {
      auto f = it.maps.find(m);
      if (f == it.maps.end()) throw InvalidInput("retrain: sample " + it.id + " has no map for method " + m);
      if (f->second.rows() != it.magnitude.rows() || f->second.cols() != it.magnitude.cols())
        throw InvalidInput("retrain: map shape does not match X_f for sample " + it.id);
    }
  }
  std::vector<std::size_t> labels;
  for (const auto& it : items) labels.push_back(it.label);

  const std::size_t rows = methods.size() + 1;
  std::vector<RunResult> runs(rows * cfg.repeats);
  parallel_for(runs.size(), cfg.jobs, [&](std::size_t task) {
    const std::size_t row = task / cfg.repeats, rep = task % cfg.repeats;
    const bool baseline = row == methods.size();
    RunResult& res = runs[task];
    try {
      nn::ModelConfig mc = arch;
      std::vector<nn::Tensor<float>> inputs;
      std::vector<double> mask_means;
      for (const auto& it : items) {
        Matrix x;
        if (baseline) {
          x = model_input(arch.input_kind, it.magnitude, fe);
          mask_means.push_back(0.0);
        } else {
          const Matrix& map = it.maps.at(methods[row]);
          x = cfg.input == MaskInput::raw_map ? map : dsp::log_mel(map.cwiseProduct(it.magnitude), fe.mel, fe.stft);
          mask_means.push_back(map.mean());
        }
        inputs.push_back(nn::from_matrix(x).cast<float>());
      }
      if (!baseline)
        mc.input_kind = cfg.input == MaskInput::raw_map ? nn::InputKind::magnitude : nn::InputKind::log_mel;
      mc.input_height = static_cast<std::size_t>(inputs[0].dims[0]);
      mc.input_width = static_cast<std::size_t>(inputs[0].dims[1]);

      SplitSpec ss = cfg.split;
      ss.seed = derive_seed(cfg.seed, kRetrainSplitStream, rep);
      const Split sp = split(labels, ss);
      auto subset = [&](const std::vector<std::size_t>& idx) {
        nn::Dataset<float> d;
        for (auto i : idx) {
          d.inputs.push_back(inputs[i]);
          d.labels.push_back(labels[i]);
        }
        return d;
      };
      const auto train = subset(sp.train), val = subset(sp.val), test = subset(sp.test);
      nn::fit_input_normalization<float>(mc, train.inputs);
      nn::Classifier<float> model(mc, derive_seed(cfg.seed, kRetrainInitStream, rep));
      nn::TrainConfig tc = cfg.train;
      tc.seed = derive_seed(cfg.seed, kRetrainShuffleStream, rep);
      nn::train(model, train, tc, &val);

      const auto preds = nn::predict<float>(model, test.inputs);
      std::vector<double> mm;
      for (auto i : sp.test) mm.push_back(mask_means[i]);
      const auto cls = metrics::classification_metrics(preds, test.labels, mc.n_classes);
      res.accuracy = cls.accuracy;
      res.f1 = cls.macro_f1;
      res.selective_accuracy = metrics::selective_metric(metrics::accuracy_scores(preds, test.labels), mm);
      res.selective_f1 = metrics::selective_metric(metrics::f1_scores(preds, test.labels, mc.n_classes), mm);
    } catch (const std::exception& e) {
      res.error = e.what();
    }
  });

  std::vector<RetrainRow> out;
  for (std::size_t row = 0; row < rows; ++row) {
    RetrainRow r;
    const bool baseline = row == methods.size();
    r.method = baseline ? kBaselineName : methods[row];
    r.has_mask = !baseline;
    std::vector<double> acc, sacc, f1, sf1;
    for (std::size_t rep = 0; rep < cfg.repeats; ++rep) {
      const auto& res = runs[row * cfg.repeats + rep];
      if (!res.error.empty()) {
        if (r.error.empty()) r.error = "repeat " + std::to_string(rep) + ": " + res.error;
        continue;
      }
      acc.push_back(res.accuracy);
      sacc.push_back(res.selective_accuracy);
      f1.push_back(res.f1);
      sf1.push_back(res.selective_f1);
    }
    std::tie(r.accuracy, r.accuracy_std) = metrics::mean_std(acc);
    std::tie(r.selective_accuracy, r.selective_accuracy_std) = metrics::mean_std(sacc);
    std::tie(r.f1, r.f1_std) = metrics::mean_std(f1);
    std::tie(r.selective_f1, r.selective_f1_std) = metrics::mean_std(sf1);
    if (!baseline) {
      std::vector<Matrix> maps;
      for (const auto& it : items) maps.push_back(it.maps.at(methods[row]));
      std::tie(r.mask_mean, r.mask_std) = metrics::mask_stats(maps);
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_retrain_csv(std::ostream& out, std::span<const RetrainRow> rows) {
  using metrics::format_number;
  out << kRetrainCsvHeader << '\n';
  for (const auto& r : rows) {
    out << r.method;
    const bool failed = !r.error.empty();
    for (double v : {r.accuracy, r.accuracy_std, r.selective_accuracy, r.selective_accuracy_std, r.f1, r.f1_std,
                     r.selective_f1, r.selective_f1_std})
      out << ',' << (failed ? "" : format_number(v));
    for (double v : {r.mask_mean, r.mask_std}) out << ',' << (r.has_mask ? format_number(v) : "");
    out << ',' << (failed ? csv_quote(r.error) : "") << '\n';
  }
}

}  // namespace sa::harness
