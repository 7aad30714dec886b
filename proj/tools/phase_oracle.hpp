#pragma once

// Label oracle for noise-free synthetic data, independent of the model code.
// It reads the phase offset between adjacent channels of one carrier and
// rounds it to the nearest class step of 2π/3.

#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include "hyperx/dataset.hpp"

namespace hyperx::oracle {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Least-squares fit of DC plus two tones; returns the complex amplitude of each tone.
inline std::array<std::complex<double>, 2> fit_tones(std::span<const double> x, double fs, double f1, double f2) {
  constexpr int P = 5;
  double ata[P][P] = {}, atb[P] = {};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double t = static_cast<double>(i) / fs;
    const double row[P] = {1.0, std::sin(kTwoPi * f1 * t), std::cos(kTwoPi * f1 * t), std::sin(kTwoPi * f2 * t),
                           std::cos(kTwoPi * f2 * t)};
    for (int a = 0; a < P; ++a) {
      atb[a] += row[a] * x[i];
      for (int b = 0; b < P; ++b) ata[a][b] += row[a] * row[b];
    }
  }
  for (int c = 0; c < P; ++c) {
    int piv = c;
    for (int r = c + 1; r < P; ++r)
      if (std::abs(ata[r][c]) > std::abs(ata[piv][c])) piv = r;
    std::swap(ata[c], ata[piv]);
    std::swap(atb[c], atb[piv]);
    for (int r = 0; r < P; ++r) {
      if (r == c) continue;
      const double k = ata[r][c] / ata[c][c];
      for (int q = 0; q < P; ++q) ata[r][q] -= k * ata[c][q];
      atb[r] -= k * atb[c];
    }
  }
  double sol[P];
  for (int a = 0; a < P; ++a) sol[a] = atb[a] / ata[a][a];
  // a·sin + b·cos = |z| sin(ωt + arg z) with z = a + ib.
  return {std::complex<double>(sol[1], sol[2]), std::complex<double>(sol[3], sol[4])};
}

// Phase-difference classifier: averages e^{i(φ_{c+1} − φ_c)} over adjacent
// channel pairs and rounds the angle to the nearest multiple of 2π/3.
inline int phase_class(const Signal& s, double f_target, double f_other, std::size_t channels) {
  std::vector<std::complex<double>> z;
  for (std::size_t c = 0; c < channels; ++c) z.push_back(fit_tones(s.row(c), s.rate_hz, f_target, f_other)[0]);
  std::complex<double> acc = 0.0;
  for (std::size_t c = 0; c + 1 < channels; ++c) acc += z[c + 1] * std::conj(z[c]) / std::abs(z[c + 1] * z[c]);
  double angle = std::arg(acc);
  if (angle < 0) angle += kTwoPi;
  return static_cast<int>(std::lround(angle / (kTwoPi / 3.0))) % 3;
}

struct OracleScore {
  std::size_t total = 0;
  std::size_t arousal_correct = 0;
  std::size_t valence_correct = 0;
};

/// Scores both labels of every trial from its EEG carriers.
inline OracleScore score_trials(const Dataset& d, const SyntheticSpec& spec) {
  OracleScore s;
  const std::size_t channels = processed_geometry(Modality::eeg).channels;
  for (const auto& t : d.trials) {
    ++s.total;
    const Signal& eeg = t[Modality::eeg];
    s.arousal_correct += phase_class(eeg, spec.eeg_arousal_hz, spec.eeg_valence_hz, channels) == t.arousal;
    s.valence_correct += phase_class(eeg, spec.eeg_valence_hz, spec.eeg_arousal_hz, channels) == t.valence;
  }
  return s;
}

}  // namespace hyperx::oracle
