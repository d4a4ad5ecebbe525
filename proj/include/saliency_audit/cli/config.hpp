#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "saliency_audit/attribution/methods.hpp"
#include "saliency_audit/harness/harness.hpp"
#include "saliency_audit/json_util.hpp"
#include "saliency_audit/metrics/metrics.hpp"
#include "saliency_audit/nn/train.hpp"
#include "saliency_audit/overlap/overlap.hpp"

namespace sa::cli {

/// Every randomized stage draws from derive_seed(seed, stream).
enum SeedStream : std::uint64_t {
  kSynthSeed = 100,
  kSplitSeed = 101,
  kInitSeed = 102,
  kTrainSeed = 103,
  kAttributionSeed = 104,
  kRetrainSeed = 105,
};

struct AttributionSection {
  std::vector<std::string> methods;  // empty means all
  std::size_t ig_steps = 64;
  std::size_t sg_samples = 25;
  double sg_sigma_rel = 0.1;
  std::size_t shap_samples = 25;
  double shap_sigma_rel = 0.0;
  std::optional<std::size_t> gradcam_layer;
  std::string subset = "test";  // train, val, test or all
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  metrics::FrontEnd front_end;
  nn::ModelConfig model{.time_center = true};  // input dims and normalization are fitted by train
  nn::TrainConfig train;
  AttributionSection attribution;
  std::size_t folds = 5;
  overlap::StudyConfig overlap;
  harness::SynthConfig synth;
  harness::SplitSpec split;
  harness::MaskInput mask_input = harness::MaskInput::raw_map;
  std::size_t retrain_repeats = 1;
  nn::TrainConfig retrain_train;

  /// Sub-seeds and the synth sample rate follow from the fields above.
  void resolve();
  void validate() const;

  attribution::AttributionConfig attribution_config() const;
  std::vector<attribution::Method> methods() const;
};

Json to_json(const RunConfig& cfg);
/// Strict: unknown keys anywhere are rejected with InvalidInput.
RunConfig from_json(const Json& j);
RunConfig load_config(const std::filesystem::path& path);

}  // namespace sa::cli
