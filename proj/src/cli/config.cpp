#include "saliency_audit/cli/config.hpp"

#include "saliency_audit/nn/checkpoint.hpp"

#include <fstream>
#include <sstream>

namespace sa::cli {
namespace {

Json train_json(const nn::TrainConfig& t) {
  return Json{{"batch_size", t.batch_size},
              {"learning_rate", t.learning_rate},
              {"epochs", t.epochs},
              {"momentum", t.momentum}};
}

void read_train(const Json& j, nn::TrainConfig& t, const std::string& where) {
  reject_unknown_keys(j, {"batch_size", "learning_rate", "epochs", "momentum"}, where);
  read_optional(j, "batch_size", t.batch_size, where);
  read_optional(j, "learning_rate", t.learning_rate, where);
  read_optional(j, "epochs", t.epochs, where);
  read_optional(j, "momentum", t.momentum, where);
}

template <typename F>
void section(const Json& j, const char* key, F&& read) {
  if (j.contains(key)) read(j.at(key));
}

}  // namespace

void RunConfig::resolve() {
  synth.seed = derive_seed(seed, kSynthSeed);
  synth.sample_rate = front_end.stft.sample_rate;
  split.seed = derive_seed(seed, kSplitSeed);
  train.seed = derive_seed(seed, kTrainSeed);
  model.n_classes = 2;
}

void RunConfig::validate() const {
  front_end.stft.validate();
  front_end.mel.validate(front_end.stft.sample_rate);
  for (const auto& c : model.conv)
    if (c.channels == 0 || c.kernel == 0 || c.stride == 0)
      throw InvalidInput("model.conv: channels, kernel and stride must be positive");
  train.validate();
  retrain_train.validate();
  attribution_config().validate();
  methods();
  if (attribution.subset != "train" && attribution.subset != "val" && attribution.subset != "test" &&
      attribution.subset != "all")
    throw InvalidInput("attribution.subset must be train, val, test or all");
  if (folds == 0) throw InvalidInput("metrics.folds must be positive");
  if (!(overlap.tau >= 0.0 && overlap.tau <= 1.0)) throw InvalidInput("overlap.tau must lie in [0, 1]");
  synth.validate();
  split.validate();
  if (retrain_repeats == 0) throw InvalidInput("harness.retrain_repeats must be positive");
  if (jobs == 0) throw InvalidInput("jobs must be positive");
}

attribution::AttributionConfig RunConfig::attribution_config() const {
  attribution::AttributionConfig a;
  a.ig_steps = attribution.ig_steps;
  a.sg_samples = attribution.sg_samples;
  a.sg_sigma_rel = attribution.sg_sigma_rel;
  a.shap_samples = attribution.shap_samples;
  a.shap_sigma_rel = attribution.shap_sigma_rel;
  a.gradcam_layer = attribution.gradcam_layer;
  a.seed = derive_seed(seed, kAttributionSeed);
  return a;
}

std::vector<attribution::Method> RunConfig::methods() const {
  if (attribution.methods.empty()) return attribution::all_methods();
  std::string list;
  for (const auto& m : attribution.methods) list += (list.empty() ? "" : ",") + m;
  return attribution::parse_methods(list);
}

Json to_json(const RunConfig& cfg) {
  const auto& s = cfg.front_end.stft;
  const auto& m = cfg.front_end.mel;
  Json conv = Json::array();
  for (const auto& c : cfg.model.conv)
    conv.push_back({{"channels", c.channels}, {"kernel", c.kernel}, {"stride", c.stride}});
  Json methods = Json::array();
  for (auto meth : cfg.methods()) methods.push_back(attribution::to_string(meth));
  return Json{
      {"seed", cfg.seed},
      {"dsp",
       {{"sample_rate", s.sample_rate},
        {"win_length", s.win_length},
        {"hop_length", s.hop_length},
        {"n_fft", s.n_fft},
        {"n_mels", m.n_mels},
        {"f_min", m.f_min},
        {"f_max", m.f_max},
        {"log_floor", m.log_floor}}},
      {"model", {{"input_kind", nn::to_string(cfg.model.input_kind)}, {"conv", conv},
        {"hidden", cfg.model.hidden},
        {"time_center", cfg.model.time_center}}},
      {"train", train_json(cfg.train)},
      {"attribution",
       {{"methods", methods},
        {"ig_steps", cfg.attribution.ig_steps},
        {"sg_samples", cfg.attribution.sg_samples},
        {"sg_sigma_rel", cfg.attribution.sg_sigma_rel},
        {"shap_samples", cfg.attribution.shap_samples},
        {"shap_sigma_rel", cfg.attribution.shap_sigma_rel},
        {"gradcam_layer", cfg.attribution.gradcam_layer ? Json(*cfg.attribution.gradcam_layer) : Json(nullptr)},
        {"subset", cfg.attribution.subset}}},
      {"metrics", {{"folds", cfg.folds}}},
      {"overlap",
       {{"tau", cfg.overlap.tau},
        {"mode", overlap::to_string(cfg.overlap.mode)},
        {"include_self", cfg.overlap.include_self}}},
      {"harness",
       {{"n_per_class", cfg.synth.n_per_class},
        {"duration_s", cfg.synth.duration_s},
        {"f0_min", cfg.synth.f0_min},
        {"f0_max", cfg.synth.f0_max},
        {"tremor_rate", cfg.synth.tremor_rate},
        {"tremor_depth", cfg.synth.tremor_depth},
        {"snr_db", cfg.synth.snr_db},
        {"split", {{"fractions", cfg.split.fractions}, {"stratified", cfg.split.stratified}}},
        {"mask_input", harness::to_string(cfg.mask_input)},
        {"retrain_repeats", cfg.retrain_repeats},
        {"retrain_train", train_json(cfg.retrain_train)}}}};
}

RunConfig from_json(const Json& j) {
  RunConfig cfg;
  reject_unknown_keys(j, {"seed", "dsp", "model", "train", "attribution", "metrics", "overlap", "harness"}, "config");
  read_optional(j, "seed", cfg.seed, "config");
  section(j, "dsp", [&](const Json& d) {
    reject_unknown_keys(d, {"sample_rate", "win_length", "hop_length", "n_fft", "n_mels", "f_min", "f_max", "log_floor"},
                        "dsp");
    read_optional(d, "sample_rate", cfg.front_end.stft.sample_rate, "dsp");
    read_optional(d, "win_length", cfg.front_end.stft.win_length, "dsp");
    read_optional(d, "hop_length", cfg.front_end.stft.hop_length, "dsp");
    read_optional(d, "n_fft", cfg.front_end.stft.n_fft, "dsp");
    read_optional(d, "n_mels", cfg.front_end.mel.n_mels, "dsp");
    read_optional(d, "f_min", cfg.front_end.mel.f_min, "dsp");
    read_optional(d, "f_max", cfg.front_end.mel.f_max, "dsp");
    read_optional(d, "log_floor", cfg.front_end.mel.log_floor, "dsp");
  });
  section(j, "model", [&](const Json& m) {
    reject_unknown_keys(m, {"input_kind", "conv", "hidden", "time_center"}, "model");
    nn::from_json(m, cfg.model);
  });
  section(j, "train", [&](const Json& t) { read_train(t, cfg.train, "train"); });
  section(j, "attribution", [&](const Json& a) {
    reject_unknown_keys(a, {"methods", "ig_steps", "sg_samples", "sg_sigma_rel", "shap_samples", "shap_sigma_rel",
                            "gradcam_layer", "subset"},
                        "attribution");
    auto& s = cfg.attribution;
    if (a.contains("methods") && a.at("methods").is_string()) {
      std::string list;
      read_optional(a, "methods", list, "attribution");
      for (auto m : attribution::parse_methods(list)) s.methods.push_back(attribution::to_string(m));
    } else {
      read_optional(a, "methods", s.methods, "attribution");
    }
    read_optional(a, "ig_steps", s.ig_steps, "attribution");
    read_optional(a, "sg_samples", s.sg_samples, "attribution");
    read_optional(a, "sg_sigma_rel", s.sg_sigma_rel, "attribution");
    read_optional(a, "shap_samples", s.shap_samples, "attribution");
    read_optional(a, "shap_sigma_rel", s.shap_sigma_rel, "attribution");
    if (a.contains("gradcam_layer") && !a.at("gradcam_layer").is_null()) {
      std::size_t layer = 0;
      read_optional(a, "gradcam_layer", layer, "attribution");
      s.gradcam_layer = layer;
    }
    read_optional(a, "subset", s.subset, "attribution");
  });
  section(j, "metrics", [&](const Json& m) {
    reject_unknown_keys(m, {"folds"}, "metrics");
    read_optional(m, "folds", cfg.folds, "metrics");
  });
  section(j, "overlap", [&](const Json& o) {
    reject_unknown_keys(o, {"tau", "mode", "include_self"}, "overlap");
    read_optional(o, "tau", cfg.overlap.tau, "overlap");
    std::string mode = overlap::to_string(cfg.overlap.mode);
    read_optional(o, "mode", mode, "overlap");
    cfg.overlap.mode = overlap::combine_mode_from_string(mode);
    read_optional(o, "include_self", cfg.overlap.include_self, "overlap");
  });
  section(j, "harness", [&](const Json& h) {
    reject_unknown_keys(h, {"n_per_class", "duration_s", "f0_min", "f0_max", "tremor_rate", "tremor_depth", "snr_db",
                            "split", "mask_input", "retrain_repeats", "retrain_train"},
                        "harness");
    auto& s = cfg.synth;
    read_optional(h, "n_per_class", s.n_per_class, "harness");
    read_optional(h, "duration_s", s.duration_s, "harness");
    read_optional(h, "f0_min", s.f0_min, "harness");
    read_optional(h, "f0_max", s.f0_max, "harness");
    read_optional(h, "tremor_rate", s.tremor_rate, "harness");
    read_optional(h, "tremor_depth", s.tremor_depth, "harness");
    read_optional(h, "snr_db", s.snr_db, "harness");
    section(h, "split", [&](const Json& sp) {
      reject_unknown_keys(sp, {"fractions", "stratified"}, "harness.split");
      read_optional(sp, "fractions", cfg.split.fractions, "harness.split");
      read_optional(sp, "stratified", cfg.split.stratified, "harness.split");
    });
    std::string input = harness::to_string(cfg.mask_input);
    read_optional(h, "mask_input", input, "harness");
    cfg.mask_input = harness::mask_input_from_string(input);
    read_optional(h, "retrain_repeats", cfg.retrain_repeats, "harness");
    section(h, "retrain_train", [&](const Json& t) { read_train(t, cfg.retrain_train, "harness.retrain_train"); });
  });
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open config " + path.string());
  std::stringstream text;
  text << in.rdbuf();
  Json j;
  try {
    j = Json::parse(text.str());
  } catch (const Json::exception& e) {
    throw InvalidInput("config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

}  // namespace sa::cli
