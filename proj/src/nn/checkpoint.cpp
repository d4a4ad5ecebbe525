#include "saliency_audit/nn/checkpoint.hpp"

#include <array>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "saliency_audit/tensor_io.hpp"

namespace sa::nn {
namespace {

constexpr std::array<char, 4> kMagic{'S', 'A', 'M', 'C'};

}  // namespace

void to_json(Json& j, const ModelConfig& cfg) {
  Json conv = Json::array();
  for (const auto& c : cfg.conv)
    conv.push_back({{"channels", c.channels}, {"kernel", c.kernel}, {"stride", c.stride}});
  j = Json{{"input_kind", to_string(cfg.input_kind)},
           {"input_height", cfg.input_height},
           {"input_width", cfg.input_width},
           {"conv", conv},
           {"hidden", cfg.hidden},
           {"n_classes", cfg.n_classes},
           {"time_center", cfg.time_center},
           {"input_shift", cfg.input_shift},
           {"input_scale", cfg.input_scale}};
}

void from_json(const Json& j, ModelConfig& cfg) {
  constexpr auto where = "model";
  reject_unknown_keys(j, {"input_kind", "input_height", "input_width", "conv", "hidden", "n_classes",
                          "time_center", "input_shift", "input_scale"},
                      where);
  if (j.contains("input_kind")) {
    std::string kind;
    read_optional(j, "input_kind", kind, where);
    cfg.input_kind = input_kind_from_string(kind);
  }
  read_optional(j, "input_height", cfg.input_height, where);
  read_optional(j, "input_width", cfg.input_width, where);
  read_optional(j, "hidden", cfg.hidden, where);
  read_optional(j, "n_classes", cfg.n_classes, where);
  read_optional(j, "time_center", cfg.time_center, where);
  read_optional(j, "input_shift", cfg.input_shift, where);
  read_optional(j, "input_scale", cfg.input_scale, where);
  if (j.contains("conv")) {
    if (!j.at("conv").is_array()) throw InvalidInput("model.conv: expected an array");
    cfg.conv.clear();
    for (const auto& c : j.at("conv")) {
      reject_unknown_keys(c, {"channels", "kernel", "stride"}, "model.conv[]");
      ConvSpec s;
      read_optional(c, "channels", s.channels, "model.conv[]");
      read_optional(c, "kernel", s.kernel, "model.conv[]");
      read_optional(c, "stride", s.stride, "model.conv[]");
      cfg.conv.push_back(s);
    }
  }
}

void write_checkpoint(std::ostream& out, const Classifier<float>& model) {
  const std::string cfg = Json(model.config()).dump();
  out.write(kMagic.data(), kMagic.size());
  const auto len = static_cast<std::uint32_t>(cfg.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  for (const auto& p : model.parameters()) {
    std::vector<std::uint32_t> dims(p.dims.begin(), p.dims.end());
    io::write_tensor(out, dims, p.data);
  }
}

Classifier<float> read_checkpoint(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw InvalidInput("checkpoint: bad magic");
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  std::string text(len, '\0');
  in.read(text.data(), len);
  if (!in) throw InvalidInput("checkpoint: truncated config");
  ModelConfig cfg;
  try {
    from_json(Json::parse(text), cfg);
  } catch (const Json::exception& e) {
    throw InvalidInput(std::string("checkpoint: bad config JSON: ") + e.what());
  }
  auto model = Classifier<float>::zeros(cfg);
  for (auto& p : model.parameters()) {
    auto t = io::read_tensor(in);
    if (Shape(t.dims.begin(), t.dims.end()) != p.dims)
      throw InvalidInput("checkpoint: parameter shape " + shape_string(Shape(t.dims.begin(), t.dims.end())) +
                         " does not match config " + shape_string(p.dims));
    p.data.assign(t.data.begin(), t.data.end());
  }
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const Classifier<float>& model) {
  std::ostringstream buf(std::ios::binary);
  write_checkpoint(buf, model);
  const std::string bytes = buf.str();
  io::write_file_atomic(path, bytes);
}

Classifier<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace sa::nn
