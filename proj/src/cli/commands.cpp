#include "saliency_audit/cli/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "saliency_audit/cli/config.hpp"
#include "saliency_audit/dsp/mel.hpp"
#include "saliency_audit/dsp/wav.hpp"
#include "saliency_audit/nn/checkpoint.hpp"
#include "saliency_audit/parallel.hpp"
#include "saliency_audit/tensor_io.hpp"

namespace sa::cli {
namespace fs = std::filesystem;
namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string methods;
  std::optional<double> tau;
  std::string mode;
  std::optional<std::size_t> jobs;
  std::string manifest;
  std::string checkpoint;
  std::string attributions;
  bool include_self = false;
  bool ig_residuals = false;
  std::vector<std::string> inputs;
};

RunConfig resolve_config(const Options& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.jobs) cfg.jobs = *o.jobs;
  if (!o.methods.empty()) {
    cfg.attribution.methods.clear();
    for (auto m : attribution::parse_methods(o.methods)) cfg.attribution.methods.push_back(attribution::to_string(m));
  }
  if (o.tau) cfg.overlap.tau = *o.tau;
  if (!o.mode.empty()) cfg.overlap.mode = overlap::combine_mode_from_string(o.mode);
  if (o.include_self) cfg.overlap.include_self = true;
  cfg.resolve();
  cfg.validate();
  return cfg;
}

fs::path require_out(const Options& o) {
  if (o.out.empty()) throw InvalidInput("--out is required");
  const fs::path out(o.out);
  fs::create_directories(out);
  return out;
}

void echo_config(const fs::path& out, const RunConfig& cfg) {
  io::write_text_atomic(out / "config.json", to_json(cfg).dump(2) + "\n");
}

std::string json_text(const Json& j) { return j.dump(2) + "\n"; }

Json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
}

std::string canonical_string(const fs::path& p) { return fs::absolute(p).lexically_normal().generic_string(); }

struct Loaded {
  harness::ManifestEntry entry;
  dsp::Spectrogram spec;
};

std::vector<Loaded> load_samples(const std::vector<harness::ManifestEntry>& entries, const RunConfig& cfg) {
  std::vector<Loaded> out(entries.size());
  parallel_for(entries.size(), cfg.jobs, [&](std::size_t i) {
    const auto wave = dsp::read_wav(entries[i].wav);
    if (wave.sample_rate != cfg.front_end.stft.sample_rate)
      throw InvalidInput("sample rate of " + entries[i].wav.string() + " does not match dsp.sample_rate");
    out[i] = {entries[i], dsp::stft(wave, cfg.front_end.stft)};
  });
  return out;
}

Matrix model_features(nn::InputKind kind, const Matrix& magnitude, const metrics::FrontEnd& fe) {
  return kind == nn::InputKind::log_mel ? dsp::log_mel(magnitude, fe.mel, fe.stft) : magnitude;
}

nn::Classifier<double> load_model(const std::string& path) {
  if (path.empty()) throw InvalidInput("--checkpoint is required");
  return nn::load_checkpoint(path).cast<double>();
}

// ---------------------------------------------------------------- gen-data

int cmd_gen_data(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  const auto data = harness::generate_dataset(cfg.synth, cfg.front_end.stft, cfg.jobs);
  const fs::path out = require_out(o);
  harness::write_dataset(out, data);
  echo_config(out, cfg);
  spdlog::info("wrote {} samples to {}", data.size(), out.string());
  return kExitOk;
}

// ---------------------------------------------------------------- train

int cmd_train(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  if (o.manifest.empty()) throw InvalidInput("--manifest is required");
  const auto entries = harness::read_manifest(o.manifest);
  const fs::path out = require_out(o);
  const auto samples = load_samples(entries, cfg);

  std::vector<std::size_t> labels;
  std::vector<nn::Tensor<float>> inputs;
  for (const auto& s : samples) {
    labels.push_back(s.entry.label);
    inputs.push_back(nn::from_matrix(model_features(cfg.model.input_kind, s.spec.magnitude, cfg.front_end)).cast<float>());
  }
  const auto sp = harness::split(labels, cfg.split);
  auto subset = [&](const std::vector<std::size_t>& idx) {
    nn::Dataset<float> d;
    for (auto i : idx) {
      d.inputs.push_back(inputs[i]);
      d.labels.push_back(labels[i]);
    }
    return d;
  };
  const auto train = subset(sp.train), val = subset(sp.val), test = subset(sp.test);

  nn::ModelConfig mc = cfg.model;
  mc.input_height = inputs.at(0).dims[0];
  mc.input_width = inputs.at(0).dims[1];
  nn::fit_input_normalization<float>(mc, train.inputs);
  nn::Classifier<float> model(mc, derive_seed(cfg.seed, kInitSeed));
  const auto history = nn::train(model, train, cfg.train, &val, [](const nn::EpochStats& s) {
    spdlog::debug("epoch {} loss {} train_acc {} val_acc {}", s.epoch, s.loss, s.train_accuracy, s.val_accuracy);
  });

  std::string hist = "epoch,loss,train_acc,val_acc\n";
  for (const auto& h : history)
    hist += fmt::format("{},{},{},{}\n", h.epoch, metrics::format_number(h.loss),
                        metrics::format_number(h.train_accuracy), metrics::format_number(h.val_accuracy));

  auto ids = [&](const std::vector<std::size_t>& idx) {
    Json a = Json::array();
    for (auto i : idx) a.push_back(entries[i].id);
    return a;
  };
  const auto test_pred = nn::predict<float>(model, test.inputs);
  const auto val_pred = nn::predict<float>(model, val.inputs);
  const auto test_cls = metrics::classification_metrics(test_pred, test.labels, mc.n_classes);
  Json report{{"epochs", cfg.train.epochs},
              {"train_samples", sp.train.size()},
              {"val_accuracy", nn::accuracy(val_pred, val.labels)},
              {"test_accuracy", test_cls.accuracy},
              {"test_macro_f1", test_cls.macro_f1}};

  nn::save_checkpoint(out / "model.ckpt", model);
  io::write_text_atomic(out / "history.csv", hist);
  io::write_text_atomic(out / "split.json", json_text(Json{{"train", ids(sp.train)}, {"val", ids(sp.val)}, {"test", ids(sp.test)}}));
  io::write_text_atomic(out / "train_report.json", json_text(report));
  echo_config(out, cfg);
  spdlog::info("test accuracy {:.4f} on {} samples", test_cls.accuracy, sp.test.size());
  return kExitOk;
}

// ---------------------------------------------------------------- attribute

std::vector<std::size_t> subset_indices(const std::vector<harness::ManifestEntry>& entries, const std::string& subset,
                                        const fs::path& checkpoint) {
  std::vector<std::size_t> idx;
  if (subset == "all") {
    for (std::size_t i = 0; i < entries.size(); ++i) idx.push_back(i);
    return idx;
  }
  const fs::path split_file = checkpoint.parent_path() / "split.json";
  if (!fs::exists(split_file))
    throw InvalidInput("attribution.subset '" + subset + "' needs " + split_file.string() + " (written by train)");
  const Json split = read_json(split_file);
  if (!split.contains(subset)) throw InvalidInput(split_file.string() + " has no '" + subset + "' list");
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < entries.size(); ++i) by_id[entries[i].id] = i;
  for (const auto& id : split.at(subset)) {
    auto it = by_id.find(id.get<std::string>());
    if (it == by_id.end()) throw InvalidInput("split sample " + id.get<std::string>() + " is not in the manifest");
    idx.push_back(it->second);
  }
  return idx;
}

int cmd_attribute(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  if (o.manifest.empty()) throw InvalidInput("--manifest is required");
  const auto entries = harness::read_manifest(o.manifest);
  const auto model = load_model(o.checkpoint);
  const auto idx = subset_indices(entries, cfg.attribution.subset, o.checkpoint);
  std::vector<harness::ManifestEntry> chosen;
  for (auto i : idx) chosen.push_back(entries[i]);
  const fs::path out = require_out(o);
  const auto samples = load_samples(chosen, cfg);
  const auto methods = cfg.methods();
  const auto acfg = cfg.attribution_config();
  if (o.ig_residuals && std::find(methods.begin(), methods.end(), attribution::Method::ig) == methods.end())
    throw InvalidInput("--ig-residuals needs the ig method");

  for (auto m : methods) fs::create_directories(out / attribution::to_string(m));
  std::vector<std::string> residual_rows(samples.size());
  parallel_for(samples.size(), cfg.jobs, [&](std::size_t i) {
    const auto& s = samples[i];
    const attribution::ResynthesisExplainee f(model, cfg.front_end.stft, cfg.front_end.mel, s.spec.phase,
                                              s.spec.source_length);
    for (auto m : methods) {
      const auto map = attribution::attribute(f, s.spec.magnitude, m, acfg);
      const fs::path dir = out / attribution::to_string(m);
      io::save_matrix(dir / (s.entry.id + ".satn"), map.normalized);
      Json side{{"sample_id", s.entry.id},
                {"method", attribution::to_string(m)},
                {"label", harness::label_name(s.entry.label)},
                {"target_class", map.target_class},
                {"rows", map.raw.rows()},
                {"cols", map.raw.cols()},
                {"raw_sum", map.raw.sum()},
                {"raw_abs_max", map.raw.cwiseAbs().maxCoeff()},
                {"tensor", s.entry.id + ".satn"}};
      if (m == attribution::Method::ig) {
        side["ig_steps"] = acfg.ig_steps;
        if (o.ig_residuals) {
          const double r = attribution::ig_completeness_residual(f, s.spec.magnitude, map.raw, map.target_class, acfg);
          const double diff = map.raw.sum() - r;
          residual_rows[i] = fmt::format("{},{},{},{},{}\n", s.entry.id, map.target_class,
                                         metrics::format_number(diff), metrics::format_number(r),
                                         metrics::format_number(diff != 0.0 ? std::abs(r) / std::abs(diff) : 0.0));
        }
      }
      io::write_text_atomic(dir / (s.entry.id + ".json"), json_text(side));
    }
    spdlog::debug("attributed {}", s.entry.id);
  });

  if (o.ig_residuals) {
    std::string csv = "sample_id,target_class,logit_difference,residual,relative_residual\n";
    for (const auto& r : residual_rows) csv += r;
    io::write_text_atomic(out / "ig_residuals.csv", csv);
  }
  Json names = Json::array(), ids = Json::array();
  for (auto m : methods) names.push_back(attribution::to_string(m));
  for (const auto& s : samples) ids.push_back(s.entry.id);
  io::write_text_atomic(out / "index.json", json_text(Json{{"manifest", canonical_string(o.manifest)},
                                                           {"checkpoint", canonical_string(o.checkpoint)},
                                                           {"methods", names},
                                                           {"samples", ids}}));
  echo_config(out, cfg);
  spdlog::info("wrote {} attribution maps to {}", samples.size() * methods.size(), out.string());
  return kExitOk;
}

// ------------------------------------------------- attribution set loading

struct AttributionSet {
  std::vector<std::string> methods;
  std::vector<Loaded> samples;
  std::vector<std::map<std::string, Matrix>> maps;  // per sample
};

AttributionSet load_attributions(const Options& o, const RunConfig& cfg) {
  if (o.attributions.empty()) throw InvalidInput("--attributions is required");
  const fs::path dir(o.attributions);
  const Json index = read_json(dir / "index.json");
  AttributionSet set;
  std::vector<std::string> available = index.at("methods").get<std::vector<std::string>>();
  if (!o.methods.empty()) {
    for (auto m : attribution::parse_methods(o.methods)) {
      const auto name = attribution::to_string(m);
      if (std::find(available.begin(), available.end(), name) == available.end())
        throw InvalidInput("no attributions for method " + name + " in " + dir.string());
      set.methods.push_back(name);
    }
  } else {
    set.methods = available;
  }
  const std::string manifest = o.manifest.empty() ? index.at("manifest").get<std::string>() : o.manifest;
  const auto entries = harness::read_manifest(manifest);
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < entries.size(); ++i) by_id[entries[i].id] = i;
  std::vector<harness::ManifestEntry> chosen;
  for (const auto& id : index.at("samples")) {
    auto it = by_id.find(id.get<std::string>());
    if (it == by_id.end()) throw InvalidInput("attributed sample " + id.get<std::string>() + " is not in the manifest");
    chosen.push_back(entries[it->second]);
  }
  set.samples = load_samples(chosen, cfg);
  set.maps.resize(set.samples.size());
  parallel_for(set.samples.size(), cfg.jobs, [&](std::size_t i) {
    for (const auto& m : set.methods) {
      const fs::path p = dir / m / (set.samples[i].entry.id + ".satn");
      if (!fs::exists(p)) throw InvalidInput("missing attribution " + p.string());
      Matrix a = io::load_matrix(p);
      if (a.rows() != set.samples[i].spec.magnitude.rows() || a.cols() != set.samples[i].spec.magnitude.cols())
        throw InvalidInput("attribution " + p.string() + " does not match the spectrogram shape");
      set.maps[i][m] = std::move(a);
    }
  });
  return set;
}

// ---------------------------------------------------------------- evaluate

int cmd_evaluate(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  const auto model = load_model(o.checkpoint);
  const auto set = load_attributions(o, cfg);
  const fs::path out = require_out(o);
  const std::size_t n = set.samples.size();
  const std::size_t folds = std::min(cfg.folds, n);

  std::vector<metrics::MetricRow> rows;
  for (const auto& m : set.methods) {
    std::vector<metrics::SampleOutcome> outcomes(n);
    std::vector<Matrix> masks(n);
    parallel_for(n, cfg.jobs, [&](std::size_t i) {
      const auto& s = set.samples[i];
      metrics::EvalSample e{s.entry.id, s.spec.magnitude, s.spec.phase, s.spec.source_length, s.entry.label,
                            set.maps[i].at(m)};
      outcomes[i] = metrics::evaluate_sample(model, cfg.front_end, e);
      masks[i] = e.mask;
    });
    for (std::size_t k = 0; k < folds; ++k) {
      const std::size_t lo = k * n / folds, hi = (k + 1) * n / folds;
      rows.push_back(metrics::aggregate(m, std::to_string(k + 1),
                                        std::span(outcomes).subspan(lo, hi - lo),
                                        std::span<const Matrix>(masks).subspan(lo, hi - lo)));
    }
  }
  std::ostringstream csv;
  metrics::write_metric_csv(csv, rows);
  io::write_text_atomic(out / "metrics.csv", csv.str());
  echo_config(out, cfg);
  spdlog::info("evaluated {} methods on {} samples", set.methods.size(), n);
  return kExitOk;
}

// ---------------------------------------------------------------- overlap

int cmd_overlap(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  const auto model = load_model(o.checkpoint);
  const auto set = load_attributions(o, cfg);
  if (set.methods.size() < 2) throw InvalidInput("overlap needs at least 2 methods");
  const fs::path out = require_out(o);
  std::vector<overlap::StudySample> study;
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    const auto& s = set.samples[i];
    study.push_back({s.entry.id, s.spec.magnitude, s.spec.phase, s.spec.source_length, set.maps[i]});
  }
  overlap::StudyConfig sc = cfg.overlap;
  sc.jobs = cfg.jobs;
  const auto records = overlap::overlap_study(model, cfg.front_end, study, set.methods, sc);
  std::ostringstream scatter, summary;
  overlap::write_scatter_csv(scatter, records);
  overlap::write_summary_csv(summary, records);
  io::write_text_atomic(out / "overlap_scatter.csv", scatter.str());
  io::write_text_atomic(out / "overlap_summary.csv", summary.str());
  echo_config(out, cfg);
  spdlog::info("wrote {} overlap records", records.size());
  return kExitOk;
}

// ---------------------------------------------------------------- retrain

int cmd_retrain(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  if (o.checkpoint.empty()) throw InvalidInput("--checkpoint is required");
  const auto arch = nn::load_checkpoint(o.checkpoint).config();
  const auto set = load_attributions(o, cfg);
  const fs::path out = require_out(o);
  std::vector<harness::RetrainItem> items;
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    const auto& s = set.samples[i];
    items.push_back({s.entry.id, s.entry.label, s.spec.magnitude, set.maps[i]});
  }
  harness::RetrainConfig rc;
  rc.train = cfg.retrain_train;
  rc.split = cfg.split;
  rc.input = cfg.mask_input;
  rc.repeats = cfg.retrain_repeats;
  rc.jobs = cfg.jobs;
  rc.seed = derive_seed(cfg.seed, kRetrainSeed);
  const auto rows = harness::retrain_on_explanations(arch, cfg.front_end, items, set.methods, rc);
  std::ostringstream csv;
  harness::write_retrain_csv(csv, rows);
  io::write_text_atomic(out / "retrain.csv", csv.str());
  echo_config(out, cfg);
  for (const auto& r : rows)
    if (!r.error.empty()) spdlog::warn("retrain {} failed: {}", r.method, r.error);
  return kExitOk;
}

// ---------------------------------------------------------------- report

int cmd_report(const Options& o) {
  if (o.inputs.empty()) throw InvalidInput("report needs at least one input directory or CSV file");
  std::vector<fs::path> files;
  for (const auto& in : o.inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_regular_file() && e.path().extension() == ".csv") found.push_back(e.path());
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else if (fs::is_regular_file(p)) {
      files.push_back(p);
    } else {
      throw InvalidInput("report input " + in + " does not exist");
    }
  }
  const fs::path out = require_out(o);
  std::string text;
  for (const auto& f : files) {
    std::ifstream in(f);
    std::stringstream body;
    body << in.rdbuf();
    text += "# " + f.generic_string() + "\n" + body.str();
    if (!text.empty() && text.back() != '\n') text += '\n';
    text += '\n';
  }
  io::write_text_atomic(out / "report.txt", text);
  spdlog::info("concatenated {} CSV files", files.size());
  return kExitOk;
}

void setup_logging() {
  auto logger = spdlog::get("saliency_audit");
  if (!logger) {
    logger = spdlog::stderr_color_mt("saliency_audit");
    spdlog::set_default_logger(logger);
  }
  spdlog::level::level_enum level = spdlog::level::info;
  if (const char* env = std::getenv("SALIENCY_AUDIT_LOG")) {
    const std::string v(env);
    if (v == "error") level = spdlog::level::err;
    else if (v == "debug") level = spdlog::level::debug;
    else if (v != "info") spdlog::warn("SALIENCY_AUDIT_LOG must be error, info or debug; using info");
  }
  spdlog::set_level(level);
}

}  // namespace

int run(int argc, const char* const* argv) {
  setup_logging();
  Options o;
  CLI::App app{"Saliency audit pipeline for audio classifiers"};
  app.require_subcommand(1);

  auto common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "RunConfig JSON")->check(CLI::ExistingFile);
    c->add_option("--seed", o.seed, "Root seed");
    c->add_option("--out", o.out, "Output directory")->required();
    c->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);
  };
  auto with_attr = [&](CLI::App* c) {
    c->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
    c->add_option("--attributions", o.attributions, "Directory written by attribute")->required();
    c->add_option("--manifest", o.manifest, "Override the manifest recorded in the attribution index");
    c->add_option("--methods", o.methods, "Comma-separated methods or 'all'");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  common(gen);
  auto* train = app.add_subcommand("train", "Train the base classifier");
  common(train);
  train->add_option("--manifest", o.manifest, "Dataset manifest")->required();
  auto* attr = app.add_subcommand("attribute", "Compute attribution maps");
  common(attr);
  attr->add_option("--manifest", o.manifest, "Dataset manifest")->required();
  attr->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
  attr->add_option("--methods", o.methods, "Comma-separated methods or 'all'");
  attr->add_flag("--ig-residuals", o.ig_residuals, "Write per-sample IG completeness residuals");
  auto* eval = app.add_subcommand("evaluate", "Faithfulness and map metrics");
  common(eval);
  with_attr(eval);
  auto* ovl = app.add_subcommand("overlap", "Pairwise overlap study");
  common(ovl);
  with_attr(ovl);
  ovl->add_option("--tau", o.tau, "Binarization threshold");
  ovl->add_option("--mode", o.mode, "union or intersection")->check(CLI::IsMember({"union", "intersection"}));
  ovl->add_flag("--include-self", o.include_self, "Also pair each method with itself");
  auto* ret = app.add_subcommand("retrain", "Train classifiers on the attribution maps");
  common(ret);
  with_attr(ret);
  auto* rep = app.add_subcommand("report", "Concatenate CSV outputs into one summary");
  rep->add_option("--out", o.out, "Output directory")->required();
  rep->add_option("inputs", o.inputs, "Directories or CSV files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(o);
    if (*train) return cmd_train(o);
    if (*attr) return cmd_attribute(o);
    if (*eval) return cmd_evaluate(o);
    if (*ovl) return cmd_overlap(o);
    if (*ret) return cmd_retrain(o);
    if (*rep) return cmd_report(o);
  } catch (const InvalidInput& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const NumericalFailure& e) {
    spdlog::error("numerical failure: {}", e.what());
    return kExitRuntime;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace sa::cli
