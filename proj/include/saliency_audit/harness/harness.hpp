#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "saliency_audit/dsp/stft.hpp"
#include "saliency_audit/metrics/metrics.hpp"
#include "saliency_audit/nn/train.hpp"
#include "saliency_audit/overlap/overlap.hpp"

namespace sa::harness {

inline constexpr std::size_t kControl = 0;
inline constexpr std::size_t kTremor = 1;

std::string label_name(std::size_t label);
std::size_t label_from_string(const std::string& name);

struct SynthConfig {
  std::size_t n_per_class = 200;
  double duration_s = 1.0;
  double f0_min = 120.0;
  double f0_max = 220.0;
  double tremor_rate = 5.0;
  double tremor_depth = 0.4;
  double snr_db = 20.0;
  std::uint64_t seed = 0;
  double sample_rate = 16000.0;

  void validate() const;
};

/// Relative frequency excursion of the tremor FM per unit of tremor_depth.
inline constexpr double kFmPerDepth = 0.05;
inline constexpr std::size_t kHarmonics = 4;  // f0 and 3 overtones

struct SynthSample {
  std::string id;
  dsp::Waveform waveform;
  std::size_t label = kControl;
  double f0 = 0.0;
  std::uint64_t seed = 0;
  overlap::BinaryMask ground_truth;  // [frames x freq_bins]
};

/// Bins whose frequency interval overlaps a band k*f0*(1 -/+ fm) -/+ rate,
/// k = 1..kHarmonics, for every frame.
overlap::BinaryMask ground_truth_region(double f0, std::size_t frames, const SynthConfig& cfg,
                                        const dsp::StftConfig& stft);

/// Sample `index` of the dataset; even indices are control, odd are tremor.
SynthSample synth_sample(const SynthConfig& cfg, const dsp::StftConfig& stft, std::size_t index);
std::vector<SynthSample> generate_dataset(const SynthConfig& cfg, const dsp::StftConfig& stft, std::size_t jobs = 1);

struct ManifestEntry {
  std::string id;
  std::filesystem::path wav;  // relative to the manifest directory
  std::size_t label = kControl;
  double f0 = 0.0;
  std::uint64_t seed = 0;
  std::filesystem::path ground_truth;  // SATN tensor, relative as above
};

/// Writes wav/<id>.wav, gt/<id>.satn and manifest.jsonl under `dir`.
std::vector<ManifestEntry> write_dataset(const std::filesystem::path& dir, std::span<const SynthSample> samples);
std::string manifest_line(const ManifestEntry& e);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

struct SplitSpec {
  std::array<double, 3> fractions{0.7, 0.15, 0.15};  // train, val, test
  bool stratified = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Split {
  std::vector<std::size_t> train, val, test;  // indices, ascending
};

/// Largest-remainder split sizes; when stratified each class contributes
/// floor or ceil of its share to every split.
Split split(std::span<const std::size_t> labels, const SplitSpec& spec);

/// Share of the map's mass inside the ground-truth region; 0 for an all-zero map.
double localization_score(const Matrix& a, const overlap::BinaryMask& gt);

enum class MaskInput { raw_map, masked_log_mel };
std::string to_string(MaskInput m);
MaskInput mask_input_from_string(const std::string& name);

struct RetrainItem {
  std::string id;
  std::size_t label = 0;
  Matrix magnitude;                    // X_f
  std::map<std::string, Matrix> maps;  // method -> normalized attribution
};

struct RetrainConfig {
  nn::TrainConfig train;
  SplitSpec split;
  MaskInput input = MaskInput::raw_map;
  std::size_t repeats = 1;  // independent splits, averaged in the report
  std::size_t jobs = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct RetrainRow {
  std::string method;
  double accuracy = 0, accuracy_std = 0, selective_accuracy = 0, selective_accuracy_std = 0;
  double f1 = 0, f1_std = 0, selective_f1 = 0, selective_f1_std = 0;
  bool has_mask = true;  // false for the baseline row
  double mask_mean = 0, mask_std = 0;
  std::string error;  // non-empty when training failed
};

inline constexpr const char* kBaselineName = "original_spectrograms";

/// One row per method plus the original-spectrogram baseline, which comes last.
/// `arch` supplies the conv/hidden layout; input settings are refitted per row.
std::vector<RetrainRow> retrain_on_explanations(const nn::ModelConfig& arch, const metrics::FrontEnd& fe,
                                                std::span<const RetrainItem> items,
                                                std::span<const std::string> methods, const RetrainConfig& cfg);

inline constexpr const char* kRetrainCsvHeader =
    "method,accuracy,accuracy_std,selective_accuracy,selective_accuracy_std,f1,f1_std,selective_f1,"
    "selective_f1_std,mask_mean,mask_std,errors";

void write_retrain_csv(std::ostream& out, std::span<const RetrainRow> rows);

}  // namespace sa::harness
