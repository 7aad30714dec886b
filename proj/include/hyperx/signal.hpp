#pragma once

// Multichannel signal containers shared by preprocessing and the dataset.

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "hyperx/errors.hpp"
#include "hyperx/modality.hpp"

namespace hyperx {

/// Channel-major block of samples: data[c * length + t].
struct Signal {
  std::size_t channels = 0;
  std::size_t length = 0;
  double rate_hz = 0.0;
  std::vector<double> data;

  Signal() = default;
  Signal(std::size_t c, std::size_t l, double rate, double fill = 0.0)
      : channels(c), length(l), rate_hz(rate), data(c * l, fill) {}

  std::span<double> row(std::size_t c) { return {data.data() + c * length, length}; }
  std::span<const double> row(std::size_t c) const { return {data.data() + c * length, length}; }
  double& at(std::size_t c, std::size_t t) { return data[c * length + t]; }
  double at(std::size_t c, std::size_t t) const { return data[c * length + t]; }
  double duration_s() const { return rate_hz > 0.0 ? static_cast<double>(length) / rate_hz : 0.0; }

  /// Samples [begin, end) of every channel.
  Signal slice(std::size_t begin, std::size_t end) const {
    if (begin > end || end > length)
      throw DimensionError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside signal of " +
                           std::to_string(length) + " samples");
    Signal out(channels, end - begin, rate_hz);
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t t = begin; t < end; ++t) out.at(c, t - begin) = at(c, t);
    return out;
  }

  bool operator==(const Signal&) const = default;
};

/// One recording session: every modality plus the two 3-class labels.
///
/// `pre_trial_s` seconds of context precede stimulus onset in every signal
/// until baseline handling strips them.
struct Trial {
  std::string id;
  int subject = 0;
  int arousal = 0;
  int valence = 0;
  double pre_trial_s = 0.0;
  std::array<Signal, 4> signals;

  Signal& operator[](Modality m) { return signals[index_of(m)]; }
  const Signal& operator[](Modality m) const { return signals[index_of(m)]; }

  bool operator==(const Trial&) const = default;
};

enum class Target { arousal, valence };

inline std::string target_name(Target t) { return t == Target::arousal ? "arousal" : "valence"; }

inline Target parse_target(const std::string& s) {
  if (s == "arousal") return Target::arousal;
  if (s == "valence") return Target::valence;
  throw ConfigError("unknown target '" + s + "' (expected arousal or valence)");
}

/// Fixed-length model input cut from a preprocessed trial.
struct Segment {
  std::string trial_id;
  int subject = 0;
  std::size_t index = 0;  ///< position within the trial
  int arousal = 0;
  int valence = 0;
  std::array<Signal, 4> signals;

  Signal& operator[](Modality m) { return signals[index_of(m)]; }
  const Signal& operator[](Modality m) const { return signals[index_of(m)]; }
  int label(Target t) const { return t == Target::arousal ? arousal : valence; }
};

}  // namespace hyperx
