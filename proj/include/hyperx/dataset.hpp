#pragma once

// Dataset storage, the synthetic phase-coupled generator, stratified
// splitting and training-time augmentation.
//
// On disk a dataset is a directory holding `manifest.json` and one payload
// file per trial, `trials/<id>.bin`. A payload is the trial's modalities in
// manifest order, each stored channel-major as little-endian float32.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "hyperx/errors.hpp"
#include "hyperx/modality.hpp"
#include "hyperx/model.hpp"
#include "hyperx/signal.hpp"
#include "hyperx/sigproc.hpp"
#include "json.hpp"

namespace hyperx {

inline constexpr int kDatasetVersion = 1;

enum class Stage { raw, preprocessed };

inline std::string stage_name(Stage s) { return s == Stage::raw ? "raw" : "preprocessed"; }

inline ModalityGeometry stage_geometry(Stage s, Modality m) {
  return s == Stage::raw ? raw_geometry(m) : processed_geometry(m);
}

struct Dataset {
  Stage stage = Stage::raw;
  std::vector<Trial> trials;
  /// Generator parameters when the data is synthetic; null otherwise.
  nlohmann::json synthetic;
  /// Free-form provenance of the preprocessing step; null for raw data.
  nlohmann::json preprocessing;
  /// Split recipe (unit, fraction, seed) recorded by whoever fixed the split; null if none.
  nlohmann::json split;

  bool operator==(const Dataset&) const = default;
};

// ---------------------------------------------------------------------------
// Synthetic generator

/// Class information lives only in inter-channel phase: for class k the
/// channels of a carrier are offset by c·k·2π/3. Channel amplitudes and the
/// carrier's absolute phase are drawn per trial independently of the labels,
/// so every single channel has a label-independent amplitude spectrum.
struct SyntheticSpec {
  std::size_t subjects = 27;
  std::size_t trials_per_subject = 20;
  std::uint64_t seed = 1;
  double trial_s = 30.0;
  double pre_trial_s = 1.0;
  /// Gaussian noise standard deviation, relative to the unit carrier amplitude.
  double noise = 1.0;
  double eeg_arousal_hz = 10.0;
  double eeg_valence_hz = 6.0;
  double ecg_arousal_hz = 1.25;
  double ecg_valence_hz = 7.0;
  double eye_valence_hz = 0.5;
  double eye_arousal_hz = 2.0;
  /// Expected blinks per second; each blink writes -1 to both eyes for 150 ms.
  double blink_rate_hz = 0.3;
};

inline nlohmann::json to_json(const SyntheticSpec& s) {
  return {{"subjects", s.subjects},
          {"trials_per_subject", s.trials_per_subject},
          {"seed", s.seed},
          {"trial_s", s.trial_s},
          {"pre_trial_s", s.pre_trial_s},
          {"noise", s.noise},
          {"eeg_arousal_hz", s.eeg_arousal_hz},
          {"eeg_valence_hz", s.eeg_valence_hz},
          {"ecg_arousal_hz", s.ecg_arousal_hz},
          {"ecg_valence_hz", s.ecg_valence_hz},
          {"eye_valence_hz", s.eye_valence_hz},
          {"eye_arousal_hz", s.eye_arousal_hz},
          {"blink_rate_hz", s.blink_rate_hz}};
}

namespace detail {

/// Independent stream per (seed, trial) so trials can be generated in any order.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace detail

/// One synthetic trial with explicit labels. The random stream depends only
/// on (seed, subject, index), so changing the labels changes nothing but the
/// inter-channel phase offsets.
inline Trial synthesize_trial(const SyntheticSpec& spec, std::size_t subject, std::size_t index, int arousal,
                              int valence) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const std::size_t global = subject * spec.trials_per_subject + index;
  Rng rng(detail::mix_seed(spec.seed, global));
  std::uniform_real_distribution<double> phase(0.0, two_pi), gain(0.5, 1.5), unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Trial t;
  char id[32];
  std::snprintf(id, sizeof id, "s%02zu_t%02zu", subject + 1, index + 1);
  t.id = id;
  t.subject = static_cast<int>(subject + 1);
  t.arousal = arousal;
  t.valence = valence;
  t.pre_trial_s = spec.pre_trial_s;
  const double total_s = spec.trial_s + spec.pre_trial_s;
  const double step_a = t.arousal * two_pi / 3.0, step_v = t.valence * two_pi / 3.0;

  // Two coupled carriers per multichannel modality.
  auto carriers = [&](Modality m, double fa, double fv) {
    const auto g = raw_geometry(m);
    Signal s(g.channels, static_cast<std::size_t>(std::lround(total_s * g.rate_hz)), g.rate_hz);
    const double pa = phase(rng), pv = phase(rng);
    for (std::size_t c = 0; c < g.channels; ++c) {
      const double ga = gain(rng), gv = gain(rng);
      const double oa = pa + static_cast<double>(c) * step_a, ov = pv + static_cast<double>(c) * step_v;
      for (std::size_t i = 0; i < s.length; ++i) {
        const double time = static_cast<double>(i) / g.rate_hz;
        s.at(c, i) = ga * std::sin(two_pi * fa * time + oa) + gv * std::sin(two_pi * fv * time + ov) +
                     spec.noise * gauss(rng);
      }
    }
    return s;
  };
  t[Modality::eeg] = carriers(Modality::eeg, spec.eeg_arousal_hz, spec.eeg_valence_hz);
  t[Modality::ecg] = carriers(Modality::ecg, spec.ecg_arousal_hz, spec.ecg_valence_hz);

  {
    const auto g = raw_geometry(Modality::gsr);
    Signal s(1, static_cast<std::size_t>(std::lround(total_s * g.rate_hz)), g.rate_hz);
    const double level = 2.0 + gain(rng), drift = 0.02 * gauss(rng), slow = phase(rng);
    for (std::size_t i = 0; i < s.length; ++i) {
      const double time = static_cast<double>(i) / g.rate_hz;
      s.at(0, i) = level + drift * time + 0.1 * std::sin(two_pi * 0.05 * time + slow) + spec.noise * 0.1 * gauss(rng);
    }
    t[Modality::gsr] = s;
  }

  {
    // Four eye quantities; both eyes share the coupled carriers with small
    // per-eye offsets. Quantity q is offset by q·k·2π/3 for each label.
    const auto g = raw_geometry(Modality::eye);
    const std::size_t quantities = g.channels / 2;
    Signal s(g.channels, static_cast<std::size_t>(std::lround(total_s * g.rate_hz)), g.rate_hz);
    const double pa = phase(rng), pv = phase(rng);
    for (std::size_t q = 0; q < quantities; ++q) {
      const double base = 2.0 + 2.0 * static_cast<double>(q), ga = gain(rng), gv = gain(rng);
      for (std::size_t eye = 0; eye < 2; ++eye) {
        const double offset = 0.05 * gauss(rng);
        for (std::size_t i = 0; i < s.length; ++i) {
          const double time = static_cast<double>(i) / g.rate_hz;
          s.at(q + eye * quantities, i) =
              base + offset + ga * std::sin(two_pi * spec.eye_arousal_hz * time + pa + static_cast<double>(q) * step_a) +
              gv * std::sin(two_pi * spec.eye_valence_hz * time + pv + static_cast<double>(q) * step_v) +
              spec.noise * gauss(rng);
        }
      }
    }
    const auto blink_len = static_cast<std::size_t>(std::lround(0.15 * g.rate_hz));
    const double p_start = spec.blink_rate_hz / g.rate_hz;
    for (std::size_t i = 0; i < s.length; ++i)
      if (unit(rng) < p_start)
        for (std::size_t k = i; k < std::min(s.length, i + blink_len); ++k)
          for (std::size_t c = 0; c < g.channels; ++c) s.at(c, k) = -1.0;
    t[Modality::eye] = s;
  }

  for (auto& s : t.signals)
    for (double& v : s.data) v = detail::to_f32(v);
  return t;
}

/// Arousal cycles fastest through the trial index, valence next, so both
/// labels are balanced whenever the trial count is a multiple of 9.
inline Trial generate_trial(const SyntheticSpec& spec, std::size_t subject, std::size_t index) {
  const std::size_t global = subject * spec.trials_per_subject + index;
  return synthesize_trial(spec, subject, index, static_cast<int>(global % 3), static_cast<int>((global / 3) % 3));
}

inline Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.subjects == 0 || spec.trials_per_subject == 0) throw ConfigError("synthetic dataset needs subjects and trials");
  if (!(spec.trial_s > 0.0) || spec.pre_trial_s < 0.2)
    throw ConfigError("synthetic trials need a positive duration and at least 200 ms of pre-trial context");
  if (!(spec.noise >= 0.0)) throw ConfigError("noise must be non-negative");
  Dataset d;
  d.stage = Stage::raw;
  d.synthetic = to_json(spec);
  for (std::size_t s = 0; s < spec.subjects; ++s)
    for (std::size_t i = 0; i < spec.trials_per_subject; ++i) d.trials.push_back(generate_trial(spec, s, i));
  return d;
}

// ---------------------------------------------------------------------------
// Storage

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot write " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("failed writing " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void put_f32(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline double get_f32(const std::string& in, std::size_t pos) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return static_cast<double>(std::bit_cast<float>(bits));
}

template <class T>
T required(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw FormatError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + ": field '" + key + "': " + e.what());
  }
}

}  // namespace detail

inline nlohmann::json build_manifest(const Dataset& d) {
  nlohmann::json j;
  j["schema"] = "hyperx-dataset";
  j["version"] = kDatasetVersion;
  j["stage"] = stage_name(d.stage);
  j["modalities"] = nlohmann::json::array();
  for (Modality m : kModalities) {
    const auto g = stage_geometry(d.stage, m);
    j["modalities"].push_back({{"name", modality_name(m)}, {"channels", g.channels}, {"rate_hz", g.rate_hz}});
  }
  j["trials"] = nlohmann::json::array();
  for (const auto& t : d.trials) {
    nlohmann::json e{{"id", t.id},
                     {"subject", t.subject},
                     {"arousal", t.arousal},
                     {"valence", t.valence},
                     {"pre_trial_s", t.pre_trial_s},
                     {"file", "trials/" + t.id + ".bin"}};
    std::size_t offset = 0;
    for (Modality m : kModalities) {
      const std::string name(modality_name(m));
      e["samples"][name] = t[m].length;
      e["offsets"][name] = offset;
      offset += t[m].channels * t[m].length * 4;
    }
    e["bytes"] = offset;
    j["trials"].push_back(std::move(e));
  }
  if (!d.synthetic.is_null()) j["synthetic"] = d.synthetic;
  if (!d.preprocessing.is_null()) j["preprocessing"] = d.preprocessing;
  if (!d.split.is_null()) j["split"] = d.split;
  return j;
}

inline std::string encode_payload(const Trial& t) {
  std::string out;
  for (Modality m : kModalities)
    for (double v : t[m].data) detail::put_f32(out, v);
  return out;
}

inline void validate_trial(const Trial& t, Stage stage) {
  if (t.id.empty() || t.id.find_first_of("/\\") != std::string::npos || t.id.starts_with("."))
    throw FormatError("invalid trial id '" + t.id + "'");
  for (int label : {t.arousal, t.valence})
    if (label < 0 || label > 2) throw LabelError(t.id + ": label " + std::to_string(label) + " outside {0,1,2}");
  for (Modality m : kModalities) {
    const auto g = stage_geometry(stage, m);
    const Signal& s = t[m];
    if (s.channels != g.channels || s.rate_hz != g.rate_hz || s.data.size() != s.channels * s.length)
      throw FormatError(t.id + ": " + std::string(modality_name(m)) + " block does not match " + stage_name(stage) +
                        " geometry (" + std::to_string(g.channels) + " channels at " + std::to_string(g.rate_hz) + " Hz)");
  }
}

/// Writes manifest.json and trials/<id>.bin under `dir`.
inline void save_dataset(const Dataset& d, const std::filesystem::path& dir) {
  for (const auto& t : d.trials) validate_trial(t, d.stage);
  std::filesystem::create_directories(dir / "trials");
  for (const auto& t : d.trials) detail::write_file(dir / "trials" / (t.id + ".bin"), encode_payload(t));
  detail::write_file(dir / "manifest.json", build_manifest(d).dump(2) + "\n");
}

inline nlohmann::json read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  if (!std::filesystem::exists(path)) throw FormatError("no manifest.json in " + dir.string());
  try {
    return nlohmann::json::parse(detail::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("manifest.json is not valid JSON: " + std::string(e.what()));
  }
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const auto j = read_manifest(dir);
  if (detail::required<std::string>(j, "schema", "manifest") != "hyperx-dataset")
    throw FormatError("manifest schema is not hyperx-dataset");
  const int version = detail::required<int>(j, "version", "manifest");
  if (version != kDatasetVersion) throw FormatError("unsupported dataset version " + std::to_string(version));
  Dataset d;
  const auto stage = detail::required<std::string>(j, "stage", "manifest");
  if (stage == "raw")
    d.stage = Stage::raw;
  else if (stage == "preprocessed")
    d.stage = Stage::preprocessed;
  else
    throw FormatError("unknown dataset stage '" + stage + "'");

  if (!j.contains("modalities") || !j.contains("trials")) throw FormatError("manifest lacks modalities or trials");
  const auto& mods = j.at("modalities");
  if (!mods.is_array() || mods.size() != kModalities.size())
    throw FormatError("manifest must list exactly the four modalities eeg, ecg, gsr, eye");
  for (std::size_t i = 0; i < mods.size(); ++i) {
    const auto name = detail::required<std::string>(mods[i], "name", "modality table");
    const auto m = parse_modality(name);
    if (!m) throw FormatError("unknown modality '" + name + "' in manifest");
    if (*m != kModalities[i]) throw FormatError("modalities must appear in the order eeg, ecg, gsr, eye");
    const auto g = stage_geometry(d.stage, *m);
    if (detail::required<std::size_t>(mods[i], "channels", name) != g.channels ||
        detail::required<double>(mods[i], "rate_hz", name) != g.rate_hz)
      throw FormatError(name + ": manifest geometry differs from the " + stage + " layout (" +
                        std::to_string(g.channels) + " channels at " + std::to_string(g.rate_hz) + " Hz)");
  }
  if (j.contains("synthetic")) d.synthetic = j.at("synthetic");
  if (j.contains("preprocessing")) d.preprocessing = j.at("preprocessing");
  if (j.contains("split")) d.split = j.at("split");

  for (const auto& e : j.at("trials")) {
    Trial t;
    t.id = detail::required<std::string>(e, "id", "trial");
    const std::string where = "trial " + t.id;
    t.subject = detail::required<int>(e, "subject", where);
    t.arousal = detail::required<int>(e, "arousal", where);
    t.valence = detail::required<int>(e, "valence", where);
    t.pre_trial_s = detail::required<double>(e, "pre_trial_s", where);
    if (!e.contains("samples") || !e.at("samples").is_object()) throw FormatError(where + ": missing samples table");
    for (const auto& [key, value] : e.at("samples").items())
      if (!parse_modality(key)) throw FormatError(where + ": unknown modality '" + key + "'");
    std::size_t expected = 0;
    for (Modality m : kModalities) {
      const std::string name(modality_name(m));
      const auto len = detail::required<std::size_t>(e.at("samples"), name.c_str(), where + " samples");
      const auto g = stage_geometry(d.stage, m);
      t[m] = Signal(g.channels, len, g.rate_hz);
      expected += g.channels * len * 4;
    }
    validate_trial(t, d.stage);
    const auto file = dir / ("trials/" + t.id + ".bin");
    if (!std::filesystem::exists(file)) throw IntegrityError(where + ": payload file missing");
    const std::string bytes = detail::read_file(file);
    if (bytes.size() != expected)
      throw IntegrityError(where + ": payload has " + std::to_string(bytes.size()) + " bytes, manifest implies " +
                           std::to_string(expected));
    std::size_t pos = 0;
    for (Modality m : kModalities)
      for (double& v : t[m].data) {
        v = detail::get_f32(bytes, pos);
        pos += 4;
      }
    d.trials.push_back(std::move(t));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Segments, splits and batches

/// Preprocessed trials cut into fixed windows; warnings collect short trials.
inline std::vector<Segment> make_segments(const Dataset& d, double segment_s = 10.0, double hop_s = 10.0,
                                          std::vector<std::string>* warnings = nullptr) {
  if (d.stage != Stage::preprocessed) throw FormatError("segments can only be cut from a preprocessed dataset");
  std::vector<Segment> out;
  for (const auto& t : d.trials)
    for (auto& s : segment_trial(t, segment_s, hop_s, warnings)) out.push_back(std::move(s));
  return out;
}

enum class SplitUnit { segment, trial };

inline std::string split_unit_name(SplitUnit u) { return u == SplitUnit::segment ? "segment" : "trial"; }

inline SplitUnit parse_split_unit(const std::string& s) {
  if (s == "segment") return SplitUnit::segment;
  if (s == "trial") return SplitUnit::trial;
  throw ConfigError("unknown split unit '" + s + "' (expected segment or trial)");
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Per-class split of item indices: each class contributes
/// clamp(round(frac·n), 1, n-1) items to train. Classes with one item cannot
/// be stratified.
inline Split stratified_indices(const std::vector<int>& labels, double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw ConfigError("train fraction must lie in (0, 1)");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  if (by_class.empty()) throw StratificationError("nothing to split");
  Rng rng(seed);
  Split out;
  for (auto& [label, idx] : by_class) {
    if (idx.size() < 2)
      throw StratificationError("class " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                                " item; stratification needs at least 2 per class");
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n = idx.size();
    const auto n_train = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n))),
                                                 1, n - 1);
    out.train.insert(out.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.test.insert(out.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

/// Splits segments into train/test indices. With SplitUnit::trial whole
/// trials are assigned (stratified on trial labels), so no trial feeds both sides.
inline Split stratified_split(const std::vector<Segment>& segments, Target target, double train_frac,
                              std::uint64_t seed, SplitUnit unit = SplitUnit::segment) {
  if (unit == SplitUnit::segment) {
    std::vector<int> labels;
    for (const auto& s : segments) labels.push_back(s.label(target));
    return stratified_indices(labels, train_frac, seed);
  }
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::map<std::string, std::size_t> pos;
  for (const auto& s : segments)
    if (pos.emplace(s.trial_id, ids.size()).second) {
      ids.push_back(s.trial_id);
      labels.push_back(s.label(target));
    }
  const auto trials = stratified_indices(labels, train_frac, seed);
  std::vector<bool> is_train(ids.size(), false);
  for (auto i : trials.train) is_train[i] = true;
  Split out;
  for (std::size_t i = 0; i < segments.size(); ++i)
    (is_train[pos.at(segments[i].trial_id)] ? out.train : out.test).push_back(i);
  return out;
}

struct AugmentConfig {
  bool scale = true;
  bool noise = true;
  double scale_low = 0.8;
  double scale_high = 1.2;
  double noise_fraction = 0.05;  ///< of each channel's standard deviation
};

/// Per-modality random scaling and per-channel Gaussian noise. Samples equal
/// to -1 in the eye block (blink markers) are left exactly as they are.
inline Segment augment(const Segment& in, Rng& rng, const AugmentConfig& cfg = {}) {
  Segment out = in;
  std::uniform_real_distribution<double> scale(cfg.scale_low, cfg.scale_high);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Modality m : kModalities) {
    Signal& s = out[m];
    const bool markers = m == Modality::eye;
    const double k = cfg.scale ? scale(rng) : 1.0;
    for (std::size_t c = 0; c < s.channels; ++c) {
      auto row = s.row(c);
      double sigma = 0.0;
      if (cfg.noise) {
        double sum = 0.0, sum2 = 0.0;
        std::size_t n = 0;
        for (double v : row)
          if (!(markers && v == -1.0)) sum += v, sum2 += v * v, ++n;
        if (n > 1) {
          const double mean = sum / static_cast<double>(n);
          sigma = std::sqrt(std::max(0.0, (sum2 - static_cast<double>(n) * mean * mean) / static_cast<double>(n - 1)));
        }
      }
      for (double& v : row) {
        if (markers && v == -1.0) continue;
        v *= k;
        if (cfg.noise) v += cfg.noise_fraction * sigma * gauss(rng);
      }
    }
  }
  return out;
}

/// Stacks the selected segments into model input tensors.
inline Batch make_batch(const std::vector<Segment>& segments, std::span<const std::size_t> indices, Target target) {
  Batch b;
  if (indices.empty()) throw DimensionError("cannot build an empty batch");
  const auto& first = segments.at(indices[0]);
  for (Modality m : kModalities) {
    const Signal& s = first[m];
    Tensor x({indices.size(), s.channels, s.length});
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const Signal& src = segments.at(indices[i])[m];
      if (src.channels != s.channels || src.length != s.length)
        throw DimensionError("segment " + segments.at(indices[i]).trial_id + " has a different " +
                             std::string(modality_name(m)) + " shape");
      std::copy(src.data.begin(), src.data.end(), x.data().begin() + static_cast<std::ptrdiff_t>(i * src.data.size()));
    }
    b[m] = x;
  }
  for (auto i : indices) b.labels.push_back(segments.at(i).label(target));
  return b;
}

inline nlohmann::json to_json(const IIRFilterSpec& f) {
  static constexpr const char* kinds[] = {"lowpass", "highpass", "bandpass", "notch"};
  nlohmann::json j{{"kind", kinds[static_cast<int>(f.kind)]}, {"low_hz", f.low_hz}};
  if (f.kind == FilterKind::bandpass) j["high_hz"] = f.high_hz;
  if (f.kind == FilterKind::notch)
    j["q"] = f.q;
  else
    j["order"] = f.order;
  return j;
}

inline nlohmann::json to_json(const PreprocessConfig& c) {
  return {{"eeg_band", to_json(c.eeg_band)},
          {"ecg_band", to_json(c.ecg_band)},
          {"gsr_lowpass", to_json(c.gsr_lowpass)},
          {"gsr_lowpass_before_downsample", c.gsr_lowpass_before_downsample},
          {"notch", to_json(c.notch)},
          {"downsample", {{"order", c.downsample.order}, {"cutoff_fraction", c.downsample.cutoff_fraction}}},
          {"baseline_ms", c.baseline_ms},
          {"trial_s", c.trial_s}};
}

/// Runs the preprocessing chain over every trial with up to `threads`
/// workers. Output order and content do not depend on the worker count.
inline Dataset preprocess_dataset(const Dataset& raw, const PreprocessConfig& cfg, std::size_t threads = 1,
                                  std::vector<std::string>* warnings = nullptr) {
  if (raw.stage != Stage::raw) throw FormatError("dataset is already preprocessed");
  const std::size_t n = raw.trials.size();
  std::vector<PreprocessResult> results(n);
  std::vector<std::exception_ptr> errors(n);
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < n; i += stride) try {
        results[i] = preprocess_trial(raw.trials[i], cfg);
      } catch (...) {
        errors[i] = std::current_exception();
      }
  };
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n, 1));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(work, w, threads);
  }
  Dataset out;
  out.stage = Stage::preprocessed;
  out.synthetic = raw.synthetic;
  out.preprocessing = to_json(cfg);
  out.split = raw.split;
  for (std::size_t i = 0; i < n; ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
    if (warnings) warnings->insert(warnings->end(), results[i].warnings.begin(), results[i].warnings.end());
    out.trials.push_back(std::move(results[i].trial));
  }
  return out;
}

}  // namespace hyperx
