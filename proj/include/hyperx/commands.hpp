#pragma once

// Subcommand implementations behind the `hyperx` executable. Each command
// takes a plain options struct, writes human-readable progress to `out`, and
// returns a process exit code; argument parsing lives in tools/main.cpp.

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "hyperx/checkpoint.hpp"
#include "hyperx/dataset.hpp"
#include "hyperx/errors.hpp"
#include "hyperx/gradcheck.hpp"
#include "hyperx/hyperlayers.hpp"
#include "hyperx/model.hpp"
#include "hyperx/trainer.hpp"
#include "json.hpp"

namespace hyperx::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kCheckFailed = 3 };

inline constexpr int kReportSchemaVersion = 1;

/// Bad invocation: conflicting flags, unusable output directory.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Maps the library's error types onto exit codes and prints the message.
inline int run_guarded(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
}

// ---------------------------------------------------------------------------
// Shared helpers

/// Worker count: the request (or the core count), capped by HYPERX_THREADS.
inline std::size_t resolve_threads(std::optional<std::size_t> requested) {
  std::size_t n = requested.value_or(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("HYPERX_THREADS")) {
    char* end = nullptr;
    const unsigned long long cap = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0' || cap == 0)
      throw UsageError("HYPERX_THREADS must be a positive integer, got '" + std::string(env) + "'");
    n = std::min<std::size_t>(n, cap);
  }
  return std::max<std::size_t>(n, 1);
}

/// SHA-1 of "blob <size>\0" + content, as `git hash-object` computes it.
inline std::string git_blob_sha1(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size()) + std::string(1, '\0');
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw Error("cannot allocate a digest context");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest.data(), &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error("SHA-1 digest failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot write " + path.string());
  f << text;
  if (!f) throw FormatError("failed writing " + path.string());
}

inline std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), {}};
}

/// Creates `dir`; an existing non-empty directory needs `force` and is then cleared.
inline void prepare_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw UsageError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force) throw UsageError(dir.string() + " is not empty; pass --force to overwrite");
      for (const auto& e : fs::directory_iterator(dir)) fs::remove_all(e.path());
    }
  }
  fs::create_directories(dir);
}

struct DatasetInfo {
  std::string manifest_sha1;
  std::string stage;
  std::size_t trials = 0;
};

inline DatasetInfo dataset_info(const fs::path& dir, const Dataset& d) {
  return {git_blob_sha1(read_text(dir / "manifest.json")), stage_name(d.stage), d.trials.size()};
}

/// Loads a dataset and preprocesses it in memory when it is still raw.
inline Dataset load_for_training(const fs::path& dir, std::size_t threads, std::vector<std::string>& warnings,
                                 DatasetInfo* info = nullptr) {
  Dataset d = load_dataset(dir);
  if (info) *info = dataset_info(dir, d);
  if (d.stage == Stage::raw) d = preprocess_dataset(d, PreprocessConfig{}, threads, &warnings);
  return d;
}

inline std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

inline std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos)
      throw UsageError("seed list must be comma-separated non-negative integers, got '" + text + "'");
    out.push_back(std::stoull(item));
  }
  if (out.empty()) throw UsageError("seed list is empty");
  return out;
}

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
  fs::path out;
  SyntheticSpec spec;
  bool force = false;
};

inline int cmd_synth(const SynthOptions& o, std::ostream& out) {
  prepare_output_dir(o.out, o.force);
  const Dataset d = generate_synthetic(o.spec);
  save_dataset(d, o.out);
  std::array<std::size_t, 3> arousal{}, valence{};
  for (const auto& t : d.trials) ++arousal[t.arousal], ++valence[t.valence];
  out << "wrote " << d.trials.size() << " raw trials (" << o.spec.subjects << " subjects x "
      << o.spec.trials_per_subject << ") to " << o.out.string() << "\n"
      << "  seed " << o.spec.seed << ", noise " << o.spec.noise << ", " << o.spec.trial_s << " s trials + "
      << o.spec.pre_trial_s << " s pre-trial\n"
      << "  arousal classes " << arousal[0] << "/" << arousal[1] << "/" << arousal[2] << ", valence classes "
      << valence[0] << "/" << valence[1] << "/" << valence[2] << "\n"
      << "  manifest " << git_blob_sha1(read_text(o.out / "manifest.json")) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// preprocess

struct PreprocessOptions {
  fs::path data;
  fs::path out;
  bool force = false;
  std::optional<std::size_t> threads;
};

inline int cmd_preprocess(const PreprocessOptions& o, std::ostream& out) {
  const Dataset raw = load_dataset(o.data);
  if (raw.stage != Stage::raw) throw FormatError(o.data.string() + " is already preprocessed");
  const std::size_t threads = resolve_threads(o.threads);
  std::vector<std::string> warnings;
  const Dataset pre = preprocess_dataset(raw, PreprocessConfig{}, threads, &warnings);
  prepare_output_dir(o.out, o.force);
  save_dataset(pre, o.out);
  for (const auto& w : warnings) out << "warning: " << w << "\n";
  out << "preprocessed " << pre.trials.size() << " trials with " << threads << " worker(s) into " << o.out.string()
      << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  fs::path data;
  fs::path out;
  std::optional<fs::path> config_file;
  /// Flag-level overrides, applied after the config file.
  nlohmann::json model_overrides = nlohmann::json::object();
  nlohmann::json train_overrides = nlohmann::json::object();
  bool sweep_variants = false;
  std::optional<std::vector<std::uint64_t>> seeds;
  std::optional<std::size_t> threads;
  bool force = false;
  bool quiet = false;
  std::vector<std::string> argv;
};

inline constexpr std::array<std::uint64_t, 5> kDefaultSeeds{1, 2, 3, 4, 5};

struct ResolvedConfig {
  ModelConfig model;
  TrainConfig train;
  /// A seed came from the config file or a flag rather than the defaults.
  bool seed_given = false;
};

/// defaults < config file < flags
inline ResolvedConfig resolve_config(const std::optional<fs::path>& file, const nlohmann::json& model_flags,
                                     const nlohmann::json& train_flags) {
  ResolvedConfig r;
  if (file) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_text(*file));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(file->string() + " is not valid JSON: " + e.what());
    }
    detail::reject_unknown(j, {"model", "train"}, "config file");
    if (j.contains("model")) r.model = model_config_from_json(j.at("model"), r.model);
    if (j.contains("train")) {
      r.train = train_config_from_json(j.at("train"), r.train);
      r.seed_given = j.at("train").contains("seed");
    }
  }
  r.seed_given = r.seed_given || train_flags.contains("seed");
  if (!model_flags.is_null()) r.model = model_config_from_json(model_flags, r.model);
  if (!train_flags.is_null()) r.train = train_config_from_json(train_flags, r.train);
  r.model.validate();
  r.train.validate();
  return r;
}

struct RunSummary {
  EncoderVariant variant;
  std::uint64_t seed;
  std::size_t params;
  MetricsReport test;
  int best_epoch;
  StopReason reason;
  std::optional<double> final_train_accuracy;
  fs::path dir;
};

inline nlohmann::json split_json(const TrainConfig& c, const Split& s) {
  return {{"unit", split_unit_name(c.split_unit)},
          {"train_frac", c.train_frac},
          {"seed", c.seed},
          {"train", s.train.size()},
          {"test", s.test.size()},
          {"segment_leakage", c.split_unit == SplitUnit::segment}};
}

inline nlohmann::json history_json(const std::vector<EpochRecord>& h) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& e : h) {
    nlohmann::json r{{"epoch", e.epoch},
                     {"train_loss", e.train_loss},
                     {"train_running_accuracy", e.train_running_accuracy},
                     {"test_loss", e.test_loss},
                     {"test_accuracy", e.test_accuracy},
                     {"test_macro_f1", e.test_macro_f1},
                     {"lr", e.lr},
                     {"improved", e.improved}};
    r["train_accuracy"] = e.train_accuracy ? nlohmann::json(*e.train_accuracy) : nlohmann::json(nullptr);
    a.push_back(std::move(r));
  }
  return a;
}

inline std::string mean_std(const std::vector<double>& v, int digits = 4) {
  double mean = 0.0;
  for (double x : v) mean += x / static_cast<double>(v.size());
  if (v.size() < 2) return fmt(mean, digits);
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean) / static_cast<double>(v.size() - 1);
  return fmt(mean, digits) + " ± " + fmt(std::sqrt(var), digits);
}

inline int cmd_train(const TrainOptions& o, std::ostream& out) {
  const ResolvedConfig base = resolve_config(o.config_file, o.model_overrides, o.train_overrides);
  const std::size_t threads = resolve_threads(o.threads);
  std::vector<EncoderVariant> variants{base.model.variant};
  if (o.sweep_variants) variants.assign(kVariants.begin(), kVariants.end());
  std::vector<std::uint64_t> seeds(kDefaultSeeds.begin(), kDefaultSeeds.end());
  if (o.seeds) seeds = *o.seeds;
  else if (base.seed_given) seeds = {base.train.seed};
  for (EncoderVariant v : variants) {
    ModelConfig probe = base.model;
    probe.variant = v;
    probe.validate();
  }

  std::vector<std::string> warnings;
  DatasetInfo info;
  const Dataset data = load_for_training(o.data, threads, warnings, &info);
  std::vector<std::string> segment_warnings;
  const auto segments = make_segments(data, base.model.segment_seconds, base.model.segment_seconds, &segment_warnings);
  if (segments.empty()) throw FormatError("dataset yields no segments");
  prepare_output_dir(o.out, o.force);
  for (const auto& w : warnings) out << "warning: " << w << "\n";
  for (const auto& w : segment_warnings) out << "warning: " << w << "\n";

  nlohmann::json run{{"schema_version", kReportSchemaVersion},
                     {"command", "train"},
                     {"argv", o.argv},
                     {"model", to_json(base.model)},
                     {"train", to_json(base.train)},
                     {"preprocess", data.preprocessing},
                     {"variants", nlohmann::json::array()},
                     {"seeds", seeds},
                     {"threads", threads},
                     {"dataset",
                      {{"path", fs::absolute(o.data).lexically_normal().string()},
                       {"manifest_sha1", info.manifest_sha1},
                       {"stage", info.stage},
                       {"trials", info.trials},
                       {"segments", segments.size()}}}};
  for (EncoderVariant v : variants) run["variants"].push_back(variant_name(v));
  write_text(o.out / "run.json", run.dump(2) + "\n");

  std::vector<RunSummary> summaries;
  bool diverged = false;
  for (EncoderVariant v : variants)
    for (std::uint64_t seed : seeds) {
      ModelConfig mc = base.model;
      mc.variant = v;
      mc.init_seed = seed;
      TrainConfig tc = base.train;
      tc.seed = seed;
      tc.threads = threads;
      const Split split = stratified_split(segments, tc.target, tc.train_frac, tc.seed, tc.split_unit);
      H2Model model(mc);
      const fs::path dir = o.out / variant_name(v) / ("seed-" + std::to_string(seed));
      fs::create_directories(dir);
      if (!o.quiet)
        out << "[" << variant_name(v) << " seed " << seed << "] " << model.count_parameters().total << " params, "
            << split.train.size() << " train / " << split.test.size() << " test segments\n";
      const auto result = train(model, segments, split, tc, [&](const EpochRecord& e) {
        if (o.quiet) return;
        out << "  epoch " << std::setw(2) << e.epoch << "  loss " << fmt(e.train_loss) << "  test F1 "
            << fmt(e.test_macro_f1) << "  acc " << fmt(e.test_accuracy);
        if (e.train_accuracy) out << "  train acc " << fmt(*e.train_accuracy);
        out << (e.improved ? "  *" : "") << "\n";
        out.flush();
      });

      const nlohmann::json ck_config{{"model", to_json(mc)}, {"train", to_json(tc)}, {"preprocess", data.preprocessing}};
      save_checkpoint(dir / "checkpoint.h2ck", ck_config, model.state());
      write_text(dir / "history.csv", history_csv(result.history));
      nlohmann::json report{{"schema_version", kReportSchemaVersion},
                            {"variant", variant_name(v)},
                            {"seed", seed},
                            {"target", target_name(tc.target)},
                            {"params", model.count_parameters().to_json()},
                            {"best_epoch", result.best_epoch},
                            {"epochs_run", result.history.size()},
                            {"steps", result.steps},
                            {"stop_reason", stop_reason_name(result.reason)},
                            {"split", split_json(tc, split)},
                            {"test", result.best.to_json()},
                            {"history", history_json(result.history)},
                            {"dataset_manifest_sha1", info.manifest_sha1}};
      if (result.reason == StopReason::diverged) report["diagnostics"] = result.diagnostics;
      write_text(dir / "report.json", report.dump(2) + "\n");

      RunSummary s{v, seed, model.count_parameters().total, result.best, result.best_epoch, result.reason, {}, dir};
      for (auto it = result.history.rbegin(); it != result.history.rend(); ++it)
        if (it->train_accuracy) {
          s.final_train_accuracy = it->train_accuracy;
          break;
        }
      summaries.push_back(s);
      if (result.reason == StopReason::diverged) {
        diverged = true;
        out << "  diverged: " << result.diagnostics << " (kept the last good checkpoint)\n";
      } else if (!o.quiet) {
        out << "  best epoch " << result.best_epoch << ": macro-F1 " << fmt(result.best.macro_f1) << ", accuracy "
            << fmt(result.best.accuracy) << " (" << stop_reason_name(result.reason) << ")\n";
      }
    }

  // One row per variant, seeds aggregated.
  nlohmann::json rows = nlohmann::json::array();
  std::string csv = "variant,params,macro_f1_mean,macro_f1_std,accuracy_mean,accuracy_std,seeds\n";
  out << "\n" << std::left << std::setw(8) << "Variant" << std::right << std::setw(10) << "Params" << std::setw(20)
      << "F1-score" << std::setw(20) << "Accuracy" << "\n";
  for (EncoderVariant v : variants) {
    std::vector<double> f1, acc;
    std::size_t params = 0;
    nlohmann::json per_seed = nlohmann::json::array();
    for (const auto& s : summaries)
      if (s.variant == v) {
        f1.push_back(s.test.macro_f1);
        acc.push_back(s.test.accuracy);
        params = s.params;
        per_seed.push_back({{"seed", s.seed},
                            {"macro_f1", s.test.macro_f1},
                            {"accuracy", s.test.accuracy},
                            {"best_epoch", s.best_epoch},
                            {"stop_reason", stop_reason_name(s.reason)},
                            {"train_accuracy", s.final_train_accuracy ? nlohmann::json(*s.final_train_accuracy)
                                                                      : nlohmann::json(nullptr)}});
      }
    auto stats = [](const std::vector<double>& x) {
      double m = 0.0, var = 0.0;
      for (double a : x) m += a / static_cast<double>(x.size());
      for (double a : x) var += x.size() > 1 ? (a - m) * (a - m) / static_cast<double>(x.size() - 1) : 0.0;
      return std::pair{m, std::sqrt(var)};
    };
    const auto [f1m, f1s] = stats(f1);
    const auto [accm, accs] = stats(acc);
    rows.push_back({{"variant", variant_name(v)},
                    {"params", params},
                    {"macro_f1_mean", f1m},
                    {"macro_f1_std", f1s},
                    {"accuracy_mean", accm},
                    {"accuracy_std", accs},
                    {"runs", per_seed}});
    csv += variant_name(v) + "," + std::to_string(params) + "," + std::to_string(f1m) + "," + std::to_string(f1s) +
           "," + std::to_string(accm) + "," + std::to_string(accs) + "," + std::to_string(f1.size()) + "\n";
    out << std::left << std::setw(8) << variant_name(v) << std::right << std::setw(10) << params << std::setw(20)
        << mean_std(f1) << std::setw(20) << mean_std(acc) << "\n";
  }
  write_text(o.out / "summary.json",
             nlohmann::json{{"schema_version", kReportSchemaVersion},
                            {"target", target_name(base.train.target)},
                            {"rows", rows}}
                     .dump(2) +
                 "\n");
  write_text(o.out / "summary.csv", csv);
  return diverged ? kDataError : kOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  fs::path checkpoint;
  fs::path data;
  std::optional<fs::path> out;
  std::string split = "test";  ///< test | train | all
  std::optional<Target> target;
  std::optional<fs::path> emit_embeddings;
  std::optional<std::size_t> threads;
};

inline std::string confusion_csv(const MetricsReport& r) {
  std::string s = "true\\pred";
  for (std::size_t c = 0; c < r.classes; ++c) s += "," + std::to_string(c);
  s += "\n";
  for (std::size_t a = 0; a < r.classes; ++a) {
    s += std::to_string(a);
    for (std::size_t b = 0; b < r.classes; ++b) s += "," + std::to_string(r.confusion[a][b]);
    s += "\n";
  }
  return s;
}

inline int cmd_eval(const EvalOptions& o, std::ostream& out) {
  if (!fs::exists(o.checkpoint)) throw FormatError("checkpoint " + o.checkpoint.string() + " does not exist");
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const nlohmann::json model_json = ck.config.contains("model") ? ck.config.at("model") : ck.config;
  const ModelConfig mc = model_config_from_json(model_json);
  TrainConfig tc = ck.config.contains("train") ? train_config_from_json(ck.config.at("train")) : TrainConfig{};
  if (o.target) tc.target = *o.target;
  if (o.split != "test" && o.split != "train" && o.split != "all")
    throw UsageError("--split must be test, train or all");
  H2Model model(mc);
  model.load_state(ck.tensors);
  model.set_training(false);

  const std::size_t threads = resolve_threads(o.threads);
  std::vector<std::string> warnings;
  DatasetInfo info;
  const Dataset data = load_for_training(o.data, threads, warnings, &info);
  const auto segments = make_segments(data, mc.segment_seconds, mc.segment_seconds);
  const Split split = stratified_split(segments, tc.target, tc.train_frac, tc.seed, tc.split_unit);
  std::vector<std::size_t> indices;
  if (o.split == "test") indices = split.test;
  if (o.split == "train") indices = split.train;
  if (o.split == "all") {
    indices.resize(segments.size());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  }
  const MetricsReport r = evaluate(model, segments, indices, tc.target, tc.batch_size, threads);

  out << variant_name(mc.variant) << " on " << o.split << " split (" << indices.size() << " segments, "
      << target_name(tc.target) << "): macro-F1 " << fmt(r.macro_f1) << ", accuracy " << fmt(r.accuracy) << " ("
      << fmt(100.0 * r.accuracy, 2) << "%)\n"
      << confusion_csv(r);

  if (o.out) {
    fs::create_directories(*o.out);
    nlohmann::json report{{"schema_version", kReportSchemaVersion},
                          {"checkpoint", o.checkpoint.string()},
                          {"variant", variant_name(mc.variant)},
                          {"target", target_name(tc.target)},
                          {"split", o.split},
                          {"split_recipe", split_json(tc, split)},
                          {"params", model.count_parameters().to_json()},
                          {"metrics", r.to_json()},
                          {"dataset_manifest_sha1", info.manifest_sha1}};
    write_text(*o.out / "eval.json", report.dump(2) + "\n");
    write_text(*o.out / "confusion.csv", confusion_csv(r));
    std::string per_class = "class,precision,recall,f1,support\n";
    for (std::size_t c = 0; c < r.classes; ++c)
      per_class += std::to_string(c) + "," + std::to_string(r.precision[c]) + "," + std::to_string(r.recall[c]) + "," +
                   std::to_string(r.f1[c]) + "," + std::to_string(r.support[c]) + "\n";
    write_text(*o.out / "metrics.csv", per_class);
  }

  if (o.emit_embeddings) {
    std::ofstream f(*o.emit_embeddings, std::ios::trunc);
    if (!f) throw FormatError("cannot write " + o.emit_embeddings->string());
    const std::size_t width = mc.fusion_input();
    for (std::size_t k = 0; k < width; ++k) f << "e" << k << ",";
    f << "label\n";
    NoGradGuard guard;
    char buf[32];
    for (std::size_t lo = 0; lo < indices.size(); lo += tc.batch_size) {
      const std::size_t hi = std::min(indices.size(), lo + tc.batch_size);
      const Batch batch = make_batch(segments, std::span(indices).subspan(lo, hi - lo), tc.target);
      const Tensor e = model.embed(batch);
      for (std::size_t i = 0; i < hi - lo; ++i) {
        for (std::size_t k = 0; k < width; ++k) {
          std::snprintf(buf, sizeof buf, "%.17g", e[i * width + k]);
          f << buf << ",";
        }
        f << batch.labels[i] << "\n";
      }
    }
    out << "wrote " << indices.size() << " embeddings of width " << width << " to " << o.emit_embeddings->string()
        << "\n";
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckOptions {
  std::string layer = "all";  ///< all | dense | conv | batchnorm | relu | pool | dropout | loss | kron | phm | phc | model
  std::optional<std::size_t> n;
  bool hamilton = false;
  bool break_backward = false;
  std::uint64_t seed = 0;
  std::optional<fs::path> json_out;
};

inline const std::vector<std::string>& gradcheck_layers() {
  static const std::vector<std::string> names{"dense", "conv",  "batchnorm", "relu", "pool", "dropout",
                                              "loss",  "kron",  "phm",       "phc",  "model"};
  return names;
}

struct CheckOutcome {
  std::string name;
  double error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string detail;
};

namespace detail {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool grad, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  if (grad) t.set_requires_grad(true);
  return t;
}

/// Values kept at least `gap` away from zero so ReLU kinks stay outside the finite-difference stencil.
inline Tensor away_from_zero(Shape shape, std::mt19937_64& rng, double gap) {
  Tensor t = random_tensor(std::move(shape), rng, true);
  for (double& v : t.data()) v = (v < 0 ? -gap : gap) + v;
  return t;
}

inline CheckOutcome from_report(const std::string& name, const GradCheckReport& r, double tol) {
  CheckOutcome c{name, r.max_relative_error, tol, r.passed && r.max_relative_error < tol, ""};
  if (r.non_finite) c.detail = "non-finite gradient";
  if (r.too_many_kinks) c.detail = "too many coordinates on kinks";
  std::size_t kinks = 0;
  for (const auto& t : r.tensors) kinks += t.kinks_skipped;
  if (kinks > 0) c.detail += (c.detail.empty() ? "" : ", ") + std::to_string(kinks) + " kink coordinate(s) skipped";
  for (const auto& t : r.tensors)
    if (t.relative_error >= tol) c.detail += (c.detail.empty() ? "" : ", ") + t.name;
  return c;
}

inline std::vector<Tensor> with_params(std::vector<Tensor> inputs, const Module& m) {
  for (const auto& p : m.parameters()) inputs.push_back(p.tensor);
  return inputs;
}

/// Quaternion product, written out from i² = j² = k² = ijk = −1.
inline std::array<double, 4> quaternion_product(const std::array<double, 4>& a, const std::array<double, 4>& b) {
  return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3], a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
          a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1], a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

}  // namespace detail

/// Runs the requested checks; `layer` selects one entry of gradcheck_layers() or "all".
inline std::vector<CheckOutcome> run_gradchecks(const GradcheckOptions& o) {
  constexpr double kLayerTol = 1e-6, kModelTol = 1e-4;
  const auto& known = gradcheck_layers();
  if (o.layer != "all" && std::find(known.begin(), known.end(), o.layer) == known.end())
    throw UsageError("unknown layer '" + o.layer + "'");
  if (o.hamilton && (o.layer != "phm" || o.n.value_or(4) != 4))
    throw UsageError("--hamilton applies to --layer phm with --n 4");
  if (o.n && *o.n == 0) throw UsageError("--n must be positive");
  auto want = [&](const char* name) { return o.layer == "all" || o.layer == name; };

  struct Restore {
    bool previous = debug::corrupt_backward().exchange(false);
    ~Restore() { debug::corrupt_backward() = previous; }
  } restore;
  debug::corrupt_backward() = o.break_backward;

  std::mt19937_64 rng(o.seed);
  std::vector<CheckOutcome> out;
  const GradCheckOptions gc{};

  if (want("dense")) {
    Rng init(o.seed + 1);
    Dense layer(5, 4, true, init);
    Tensor x = detail::random_tensor({3, 5}, rng, true), r = detail::random_tensor({3, 4}, rng, false);
    out.push_back(detail::from_report(
        "dense", grad_check([&] { return sum(mul(layer.forward(x), r)); }, detail::with_params({x}, layer), gc),
        kLayerTol));
  }
  if (want("conv")) {
    Rng init(o.seed + 2);
    for (ConvGeometry g : {ConvGeometry{7, 2, 3}, ConvGeometry{3, 1, 0}, ConvGeometry{4, 3, 2}}) {
      Conv1d layer(3, 4, g, true, init);
      Tensor x = detail::random_tensor({2, 3, 11}, rng, true);
      Tensor r = detail::random_tensor(layer.forward(x).shape(), rng, false);
      out.push_back(detail::from_report(
          "conv k" + std::to_string(g.kernel) + " s" + std::to_string(g.stride) + " p" + std::to_string(g.padding),
          grad_check([&] { return sum(mul(layer.forward(x), r)); }, detail::with_params({x}, layer), gc), kLayerTol));
    }
  }
  if (want("batchnorm")) {
    for (bool training : {true, false}) {
      BatchNorm layer(3);
      layer.set_training(training);
      Tensor x = detail::random_tensor({4, 3, 5}, rng, true, -2.0, 2.0), r = detail::random_tensor({4, 3, 5}, rng, false);
      out.push_back(detail::from_report(
          std::string("batchnorm ") + (training ? "train" : "eval"),
          grad_check([&] { return sum(mul(layer.forward(x), r)); }, detail::with_params({x}, layer), gc), kLayerTol));
    }
  }
  if (want("relu")) {
    Tensor x = detail::away_from_zero({4, 6}, rng, 0.05), r = detail::random_tensor({4, 6}, rng, false);
    out.push_back(detail::from_report("relu", grad_check([&] { return sum(mul(relu(x), r)); }, {x}, gc), kLayerTol));
  }
  if (want("pool")) {
    Tensor x = detail::random_tensor({2, 3, 7}, rng, true), r = detail::random_tensor({2, 3}, rng, false);
    out.push_back(detail::from_report(
        "global_avg_pool", grad_check([&] { return sum(mul(global_avg_pool(x), r)); }, {x}, gc), kLayerTol));
  }
  if (want("dropout")) {
    Tensor x = detail::random_tensor({4, 8}, rng, true), r = detail::random_tensor({4, 8}, rng, false);
    const std::uint64_t mask_seed = rng();
    out.push_back(detail::from_report("dropout",
                                      grad_check(
                                          [&] {
                                            Rng mask(mask_seed);  // same mask on every evaluation
                                            return sum(mul(dropout(x, 0.5, true, mask), r));
                                          },
                                          {x}, gc),
                                      kLayerTol));
  }
  if (want("loss")) {
    Tensor logits = detail::random_tensor({5, 3}, rng, true, -3.0, 3.0);
    const std::vector<int> labels{0, 2, 1, 1, 0};
    out.push_back(detail::from_report(
        "softmax_cross_entropy", grad_check([&] { return softmax_cross_entropy(logits, labels); }, {logits}, gc),
        kLayerTol));
  }
  if (want("kron")) {
    for (std::size_t n : {2u, 3u}) {
      Tensor a = detail::random_tensor({n, n, n}, rng, true), f = detail::random_tensor({n, 2, 3, 2}, rng, true);
      Tensor r = detail::random_tensor({2 * n, 3 * n, 2}, rng, false);
      out.push_back(detail::from_report("kron_sum n=" + std::to_string(n),
                                        grad_check([&] { return sum(mul(kron_sum(a, f), r)); }, {a, f}, gc),
                                        kLayerTol));
    }
  }
  std::vector<std::size_t> ns = o.n ? std::vector<std::size_t>{*o.n} : std::vector<std::size_t>{1, 2, 3, 4, 5};
  if (want("phm")) {
    for (std::size_t n : ns) {
      Rng init(o.seed + 10 + n);
      PHMLayer layer(n, 2 * n, 3 * n, true, init);
      Tensor x = detail::random_tensor({3, 2 * n}, rng, true), r = detail::random_tensor({3, 3 * n}, rng, false);
      out.push_back(detail::from_report(
          "phm n=" + std::to_string(n),
          grad_check([&] { return sum(mul(layer.forward(x), r)); }, detail::with_params({x}, layer), gc), kLayerTol));
    }
    if (o.hamilton) {
      // A frozen to the Hamilton structure constants: y = w ⊗ x for a single quaternion weight.
      Rng init(o.seed + 99);
      PHMLayer layer(4, 4, 4, false, init, *hamilton_algebra(4));
      double worst = 0.0;
      for (int pair = 0; pair < 1000; ++pair) {
        Tensor x = detail::random_tensor({1, 4}, rng, false);
        for (double& v : layer.weight().filters.data()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
        const auto& f = layer.weight().filters;
        Tensor y;
        {
          NoGradGuard guard;
          y = layer.forward(x);
        }
        const auto want_q = detail::quaternion_product({f[0], f[1], f[2], f[3]}, {x[0], x[1], x[2], x[3]});
        for (std::size_t k = 0; k < 4; ++k) worst = std::max(worst, std::abs(y[k] - want_q[k]));
      }
      out.push_back({"phm n=4 hamilton vs quaternion product (1000 pairs)", worst, 1e-12, worst < 1e-12, ""});
      Tensor x = detail::random_tensor({3, 4}, rng, true), r = detail::random_tensor({3, 4}, rng, false);
      out.push_back(detail::from_report(
          "phm n=4 hamilton gradients",
          grad_check([&] { return sum(mul(layer.forward(x), r)); }, {x, layer.weight().filters}, gc), kLayerTol));
    }
  }
  if (want("phc")) {
    for (std::size_t n : ns) {
      Rng init(o.seed + 20 + n);
      PHCLayer layer(n, n, 2 * n, {3, 2, 1}, true, init);
      Tensor x = detail::random_tensor({2, n, 9}, rng, true);
      Tensor r = detail::random_tensor(layer.forward(x).shape(), rng, false);
      out.push_back(detail::from_report(
          "phc n=" + std::to_string(n),
          grad_check([&] { return sum(mul(layer.forward(x), r)); }, detail::with_params({x}, layer), gc), kLayerTol));
    }
  }
  if (want("model")) {
    // Default widths, dropout off, short segments; sampled coordinates per tensor.
    std::mt19937_64 model_rng(o.seed ^ 0x6d6f64656cULL);
    for (bool training : {true, false}) {
      ModelConfig mc;
      mc.dropout = 0.0;
      mc.segment_seconds = 1.0;
      mc.init_seed = o.seed;
      H2Model model(mc);
      model.set_training(training);
      std::normal_distribution<double> g(0.0, 1.0);
      Batch batch;
      for (Modality m : kModalities) {
        Tensor x({4, mc.input_channels(m), mc.input_length(m)});
        for (double& v : x.data()) v = g(model_rng);
        batch[m] = x;
      }
      batch.labels = {0, 1, 2, 1};
      std::vector<Tensor> inputs;
      std::vector<std::string> names;
      for (const auto& p : model.parameters()) inputs.push_back(p.tensor), names.push_back(p.name);
      GradCheckOptions mopt;
      mopt.tolerance = kModelTol;
      mopt.max_coords_per_tensor = 6;
      mopt.seed = o.seed;
      // Biases ahead of batch norm have a zero gradient in train mode; their
      // finite differences are rounding noise (~1e-11) judged against this floor.
      mopt.denominator_floor = 1e-5;
      mopt.kink_tolerance = 1e-7;
      out.push_back(detail::from_report(
          std::string("h2 model + loss (") + (training ? "train" : "eval") + " mode)",
          grad_check([&] { return softmax_cross_entropy(model.forward(batch), batch.labels); }, inputs, mopt, names),
          kModelTol));
    }
  }
  return out;
}

inline int cmd_gradcheck(const GradcheckOptions& o, std::ostream& out) {
  const auto checks = run_gradchecks(o);
  bool all = true;
  nlohmann::json j{{"schema_version", kReportSchemaVersion}, {"break_backward", o.break_backward}, {"checks", nlohmann::json::array()}};
  for (const auto& c : checks) {
    all = all && c.passed;
    char err[32];
    std::snprintf(err, sizeof err, "%.3e", c.error);
    out << (c.passed ? "[PASS] " : "[FAIL] ") << std::left << std::setw(52) << c.name << " error " << err << " (tol "
        << c.tolerance << ")" << (c.detail.empty() ? "" : "  " + c.detail) << "\n";
    j["checks"].push_back(
        {{"name", c.name}, {"error", c.error}, {"tolerance", c.tolerance}, {"passed", c.passed}, {"detail", c.detail}});
  }
  j["passed"] = all;
  if (o.json_out) write_text(*o.json_out, j.dump(2) + "\n");
  out << (all ? "all gradient checks passed" : "gradient check FAILED") << " (" << checks.size() << " checks)\n";
  return all ? kOk : kCheckFailed;
}

}  // namespace hyperx::cli
