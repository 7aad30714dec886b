#pragma once

// The four physiological modalities and their recording geometry.

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace hyperx {

enum class Modality { eeg = 0, ecg = 1, gsr = 2, eye = 3 };

inline constexpr std::array<Modality, 4> kModalities{Modality::eeg, Modality::ecg, Modality::gsr, Modality::eye};

inline constexpr std::size_t index_of(Modality m) noexcept { return static_cast<std::size_t>(m); }

inline std::string_view modality_name(Modality m) noexcept {
  switch (m) {
    case Modality::eeg: return "eeg";
    case Modality::ecg: return "ecg";
    case Modality::gsr: return "gsr";
    case Modality::eye: return "eye";
  }
  return "?";
}

inline std::optional<Modality> parse_modality(std::string_view s) noexcept {
  for (Modality m : kModalities)
    if (modality_name(m) == s) return m;
  return std::nullopt;
}

/// Channel count and rate of one modality at a given processing stage.
struct ModalityGeometry {
  std::size_t channels;
  double rate_hz;
};

/// As recorded: 10 EEG channels (F3,F4,F5,F6,F7,F8,T7,T8,P7,P8), 3 ECG leads,
/// 1 GSR channel at 256 Hz; eye tracker at 60 Hz with left/right pairs of
/// gaze-x, gaze-y, distance and pupil size (left block first).
inline constexpr ModalityGeometry raw_geometry(Modality m) noexcept {
  switch (m) {
    case Modality::eeg: return {10, 256.0};
    case Modality::ecg: return {3, 256.0};
    case Modality::gsr: return {1, 256.0};
    case Modality::eye: return {8, 60.0};
  }
  return {0, 0.0};
}

/// After preprocessing: physiological signals at 128 Hz, eyes merged to 4.
inline constexpr ModalityGeometry processed_geometry(Modality m) noexcept {
  switch (m) {
    case Modality::eeg: return {10, 128.0};
    case Modality::ecg: return {3, 128.0};
    case Modality::gsr: return {1, 128.0};
    case Modality::eye: return {4, 60.0};
  }
  return {0, 0.0};
}

/// Samples in one segment of `seconds` at the processed rate (1280 or 600 for 10 s).
inline std::size_t segment_samples(Modality m, double seconds) {
  return static_cast<std::size_t>(processed_geometry(m).rate_hz * seconds + 0.5);
}

}  // namespace hyperx
