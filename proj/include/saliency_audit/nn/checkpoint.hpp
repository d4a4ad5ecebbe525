#pragma once

// Checkpoint layout:
//   "SAMC" | u32 LE byte length | canonical JSON ModelConfig |
//   one SATN tensor per parameter, in Classifier::parameter_names() order

#include <filesystem>
#include <iosfwd>

#include "saliency_audit/json_util.hpp"
#include "saliency_audit/nn/model.hpp"

namespace sa::nn {

void to_json(Json& j, const ModelConfig& cfg);
void from_json(const Json& j, ModelConfig& cfg);

void write_checkpoint(std::ostream& out, const Classifier<float>& model);
Classifier<float> read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Classifier<float>& model);
Classifier<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace sa::nn
