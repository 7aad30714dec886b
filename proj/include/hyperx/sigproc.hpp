#pragma once

// Preprocessing chain for raw physiological trials.
//
// Filters are Butterworth designs built from the analog prototype's poles,
// frequency-transformed and mapped through the prewarped bilinear transform,
// then applied as cascaded second-order sections run forward and backward
// (zero phase). Edges are extended by odd reflection and each pass starts
// from the steady state of its first sample.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <vector>

#include "hyperx/errors.hpp"
#include "hyperx/modality.hpp"
#include "hyperx/signal.hpp"

namespace hyperx {

/// b0 b1 b2 / 1 a1 a2.
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;
};

using SosFilter = std::vector<Biquad>;

enum class FilterKind { lowpass, highpass, bandpass, notch };

struct IIRFilterSpec {
  FilterKind kind = FilterKind::bandpass;
  double low_hz = 0.0;   ///< corner (lowpass/highpass use this one) or notch centre
  double high_hz = 0.0;  ///< upper corner for bandpass
  int order = 4;
  double q = 30.0;  ///< notch quality factor

  static IIRFilterSpec bandpass(double lo, double hi, int order = 4) {
    return {FilterKind::bandpass, lo, hi, order, 30.0};
  }
  static IIRFilterSpec lowpass(double f, int order = 4) { return {FilterKind::lowpass, f, 0.0, order, 30.0}; }
  static IIRFilterSpec highpass(double f, int order = 4) { return {FilterKind::highpass, f, 0.0, order, 30.0}; }
  static IIRFilterSpec notch(double f, double q = 30.0) { return {FilterKind::notch, f, 0.0, 2, q}; }
};

namespace detail {

using cplx = std::complex<double>;

inline void check_corner(double f, double fs, const char* what) {
  if (!(f > 0.0) || !(f < fs / 2.0))
    throw ConfigError(std::string(what) + " " + std::to_string(f) + " Hz must lie strictly between 0 and Nyquist (" +
                      std::to_string(fs / 2.0) + " Hz)");
}

/// Groups conjugate pole pairs (and leftover real poles) into sections.
inline SosFilter zpk_to_sos(std::vector<cplx> zeros, std::vector<cplx> poles, double gain) {
  const double tol = 1e-10;
  while (zeros.size() < poles.size()) zeros.emplace_back(-1.0, 0.0);
  // Order: complex poles (upper half-plane representative) then reals,
  // sections furthest from the unit circle first.
  std::vector<cplx> cx, re;
  for (const auto& p : poles) {
    if (std::abs(p.imag()) <= tol)
      re.emplace_back(p.real(), 0.0);
    else if (p.imag() > 0)
      cx.push_back(p);
  }
  auto by_radius = [](const cplx& a, const cplx& b) { return std::abs(a) < std::abs(b); };
  std::sort(cx.begin(), cx.end(), by_radius);
  std::sort(re.begin(), re.end(), by_radius);

  std::vector<std::pair<cplx, cplx>> pole_pairs;
  for (const auto& p : cx) pole_pairs.emplace_back(p, std::conj(p));
  for (std::size_t i = 0; i < re.size(); i += 2)
    pole_pairs.emplace_back(re[i], i + 1 < re.size() ? re[i + 1] : cplx(0.0, 0.0));
  const bool odd = re.size() % 2 == 1;

  SosFilter sos;
  std::vector<cplx> pool = zeros;
  for (std::size_t s = 0; s < pole_pairs.size(); ++s) {
    const auto [p1, p2] = pole_pairs[s];
    const bool first_order = odd && s + 1 == pole_pairs.size() && re.size() > 0 && p2 == cplx(0.0, 0.0);
    // Nearest zero to the section's pole, then its conjugate (or the next nearest real zero).
    auto take_nearest = [&](const cplx& target) {
      auto it = std::min_element(pool.begin(), pool.end(),
                                 [&](const cplx& a, const cplx& b) { return std::abs(a - target) < std::abs(b - target); });
      cplx z = *it;
      pool.erase(it);
      return z;
    };
    cplx z1 = take_nearest(p1), z2(0.0, 0.0);
    bool has_z2 = false;
    if (!first_order) {
      if (std::abs(z1.imag()) > tol) {
        auto it = std::min_element(pool.begin(), pool.end(), [&](const cplx& a, const cplx& b) {
          return std::abs(a - std::conj(z1)) < std::abs(b - std::conj(z1));
        });
        z2 = *it;
        pool.erase(it);
      } else {
        z2 = take_nearest(p1);
      }
      has_z2 = true;
    }
    Biquad q;
    q.b0 = 1.0;
    q.b1 = has_z2 ? -(z1 + z2).real() : -z1.real();
    q.b2 = has_z2 ? (z1 * z2).real() : 0.0;
    q.a1 = first_order ? -p1.real() : -(p1 + p2).real();
    q.a2 = first_order ? 0.0 : (p1 * p2).real();
    sos.push_back(q);
  }
  sos.front().b0 *= gain;
  sos.front().b1 *= gain;
  sos.front().b2 *= gain;
  return sos;
}

}  // namespace detail

/// Butterworth lowpass/highpass/bandpass design as second-order sections.
inline SosFilter butterworth(const IIRFilterSpec& spec, double fs) {
  using detail::cplx;
  if (spec.order < 1) throw ConfigError("filter order must be at least 1");
  if (!(fs > 0.0)) throw ConfigError("sampling rate must be positive");
  const int n = spec.order;
  // Analog prototype: unit-cutoff poles on the left half circle.
  std::vector<cplx> proto;
  for (int m = -n + 1; m < n; m += 2)
    proto.push_back(-std::exp(cplx(0.0, std::numbers::pi * static_cast<double>(m) / (2.0 * n))));

  // Prewarped corners on a normalized rate of 2 (Nyquist = 1).
  const double fs_n = 2.0;
  auto warp = [&](double f) { return 2.0 * fs_n * std::tan(std::numbers::pi * (2.0 * f / fs) / fs_n); };
  std::vector<cplx> z, p;
  double k = 1.0;
  switch (spec.kind) {
    case FilterKind::lowpass: {
      detail::check_corner(spec.low_hz, fs, "lowpass corner");
      const double wo = warp(spec.low_hz);
      for (auto& q : proto) p.push_back(q * wo);
      k = std::pow(wo, n);
      break;
    }
    case FilterKind::highpass: {
      detail::check_corner(spec.low_hz, fs, "highpass corner");
      const double wo = warp(spec.low_hz);
      cplx prod(1.0, 0.0);
      for (auto& q : proto) {
        p.push_back(wo / q);
        prod *= -q;
      }
      z.assign(static_cast<std::size_t>(n), cplx(0.0, 0.0));
      k = (1.0 / prod).real();
      break;
    }
    case FilterKind::bandpass: {
      detail::check_corner(spec.low_hz, fs, "bandpass low corner");
      detail::check_corner(spec.high_hz, fs, "bandpass high corner");
      if (!(spec.low_hz < spec.high_hz)) throw ConfigError("bandpass low corner must be below the high corner");
      const double w1 = warp(spec.low_hz), w2 = warp(spec.high_hz);
      const double bw = w2 - w1, wo = std::sqrt(w1 * w2);
      for (auto& q : proto) {
        const cplx lp = q * bw / 2.0;
        const cplx root = std::sqrt(lp * lp - wo * wo);
        p.push_back(lp + root);
        p.push_back(lp - root);
      }
      z.assign(static_cast<std::size_t>(n), cplx(0.0, 0.0));
      k = std::pow(bw, n);
      break;
    }
    case FilterKind::notch: throw ConfigError("use iir_notch for notch filters");
  }
  // Bilinear transform.
  const double fs2 = 2.0 * fs_n;
  cplx num(1.0, 0.0), den(1.0, 0.0);
  std::vector<cplx> zd, pd;
  for (auto& q : z) {
    zd.push_back((fs2 + q) / (fs2 - q));
    num *= fs2 - q;
  }
  for (auto& q : p) {
    pd.push_back((fs2 + q) / (fs2 - q));
    den *= fs2 - q;
  }
  k *= (num / den).real();
  return detail::zpk_to_sos(std::move(zd), std::move(pd), k);
}

/// Second-order IIR notch with -3 dB bandwidth f0/Q.
inline SosFilter iir_notch(double f0, double q, double fs) {
  detail::check_corner(f0, fs, "notch frequency");
  if (!(q > 0.0)) throw ConfigError("notch Q must be positive");
  const double w0 = std::numbers::pi * 2.0 * f0 / fs;
  const double bw = w0 / q;
  const double beta = std::tan(bw / 2.0);
  const double gain = 1.0 / (1.0 + beta);
  return {Biquad{gain, -2.0 * gain * std::cos(w0), gain, -2.0 * gain * std::cos(w0), 2.0 * gain - 1.0}};
}

inline SosFilter design_filter(const IIRFilterSpec& spec, double fs) {
  return spec.kind == FilterKind::notch ? iir_notch(spec.low_hz, spec.q, fs) : butterworth(spec, fs);
}

/// |H(e^{jω})| at frequency f.
inline double magnitude_response(const SosFilter& sos, double f, double fs) {
  const detail::cplx zi = std::exp(detail::cplx(0.0, -2.0 * std::numbers::pi * f / fs));
  detail::cplx h(1.0, 0.0);
  for (const auto& s : sos) h *= (s.b0 + s.b1 * zi + s.b2 * zi * zi) / (1.0 + s.a1 * zi + s.a2 * zi * zi);
  return std::abs(h);
}

/// Single causal pass, direct form II transposed, state updated in place.
inline void sos_filter_inplace(const SosFilter& sos, std::vector<double>& x, std::vector<std::array<double, 2>>& state) {
  for (std::size_t s = 0; s < sos.size(); ++s) {
    const Biquad& q = sos[s];
    double z0 = state[s][0], z1 = state[s][1];
    for (double& v : x) {
      const double in = v;
      const double y = q.b0 * in + z0;
      z0 = q.b1 * in - q.a1 * y + z1;
      z1 = q.b2 * in - q.a2 * y;
      v = y;
    }
    state[s] = {z0, z1};
  }
}

/// Per-section state that leaves a unit step at steady state.
inline std::vector<std::array<double, 2>> sos_steady_state(const SosFilter& sos) {
  std::vector<std::array<double, 2>> zi(sos.size());
  double scale = 1.0;
  for (std::size_t s = 0; s < sos.size(); ++s) {
    const Biquad& q = sos[s];
    // (I - Aᵀ) z = b[1:] - a[1:] b0 for the transposed companion form.
    const double r0 = q.b1 - q.a1 * q.b0, r1 = q.b2 - q.a2 * q.b0;
    const double det = (1.0 + q.a1) + q.a2;
    const double z0 = (r0 + r1) / det;
    const double z1 = r1 - q.a2 * z0;
    zi[s] = {scale * z0, scale * z1};
    scale *= (q.b0 + q.b1 + q.b2) / (1.0 + q.a1 + q.a2);
  }
  return zi;
}

/// Samples of odd reflection added at each end before forward-backward filtering.
inline std::size_t filtfilt_padlen(const SosFilter& sos) {
  std::size_t trailing_b = 0, trailing_a = 0;
  for (const auto& s : sos) {
    trailing_b += s.b2 == 0.0;
    trailing_a += s.a2 == 0.0;
  }
  return 3 * (2 * sos.size() + 1 - std::min(trailing_b, trailing_a));
}

/// Zero-phase forward-backward filtering of one channel.
inline std::vector<double> sos_filtfilt(const SosFilter& sos, std::span<const double> x) {
  const std::size_t pad = filtfilt_padlen(sos);
  if (x.size() <= pad)
    throw DimensionError("signal of " + std::to_string(x.size()) + " samples is too short for zero-phase filtering (needs more than " +
                         std::to_string(pad) + ")");
  const std::size_t n = x.size();
  std::vector<double> ext(n + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i) ext[i] = 2.0 * x[0] - x[pad - i];
  std::copy(x.begin(), x.end(), ext.begin() + static_cast<std::ptrdiff_t>(pad));
  for (std::size_t i = 0; i < pad; ++i) ext[pad + n + i] = 2.0 * x[n - 1] - x[n - 2 - i];

  const auto zi = sos_steady_state(sos);
  auto run = [&](std::vector<double>& v) {
    auto state = zi;
    for (auto& s : state) s = {s[0] * v.front(), s[1] * v.front()};
    sos_filter_inplace(sos, v, state);
  };
  run(ext);
  std::reverse(ext.begin(), ext.end());
  run(ext);
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<std::ptrdiff_t>(pad), ext.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

/// Zero-phase application of `spec` to every channel independently.
inline Signal apply_filter(const Signal& x, const IIRFilterSpec& spec) {
  const auto sos = design_filter(spec, x.rate_hz);
  Signal out = x;
  for (std::size_t c = 0; c < x.channels; ++c) {
    auto y = sos_filtfilt(sos, x.row(c));
    std::copy(y.begin(), y.end(), out.row(c).begin());
  }
  return out;
}

struct DownsampleOptions {
  int order = 8;
  double cutoff_fraction = 0.8;  ///< of the new Nyquist rate
};

/// Zero-phase anti-alias lowpass, then every second sample; an odd trailing sample is dropped.
inline Signal downsample_by2(const Signal& x, const DownsampleOptions& opt = {}) {
  const double new_rate = x.rate_hz / 2.0;
  const auto spec = IIRFilterSpec::lowpass(opt.cutoff_fraction * new_rate / 2.0, opt.order);
  const auto sos = butterworth(spec, x.rate_hz);
  if (x.length <= filtfilt_padlen(sos))
    throw DimensionError("signal of " + std::to_string(x.length) + " samples is too short to downsample (needs more than " +
                         std::to_string(filtfilt_padlen(sos)) + ")");
  const std::size_t even = x.length - x.length % 2;
  Signal out(x.channels, even / 2, new_rate);
  for (std::size_t c = 0; c < x.channels; ++c) {
    auto y = sos_filtfilt(sos, x.row(c).subspan(0, even));
    for (std::size_t t = 0; t < out.length; ++t) out.at(c, t) = y[2 * t];
  }
  return out;
}

/// Subtracts the instantaneous cross-channel mean.
inline Signal average_reference(const Signal& x) {
  Signal out = x;
  for (std::size_t t = 0; t < x.length; ++t) {
    double mean = 0.0;
    for (std::size_t c = 0; c < x.channels; ++c) mean += x.at(c, t);
    mean /= static_cast<double>(x.channels);
    for (std::size_t c = 0; c < x.channels; ++c) out.at(c, t) = x.at(c, t) - mean;
  }
  return out;
}

/// Samples in a baseline window of `ms` milliseconds at `fs` (rounded to nearest).
inline std::size_t baseline_samples(double ms, double fs) {
  return static_cast<std::size_t>(std::lround(ms / 1000.0 * fs));
}

/// Subtracts the mean of the `baseline_ms` window ending at `onset` and
/// returns the samples from onset on.
inline Signal baseline_correct(const Signal& x, std::size_t onset, double baseline_ms = 200.0) {
  const std::size_t window = baseline_samples(baseline_ms, x.rate_hz);
  if (window == 0 || onset < window || onset > x.length)
    throw DimensionError("baseline correction needs " + std::to_string(window) + " samples before onset, got " +
                         std::to_string(std::min(onset, x.length)));
  Signal out = x.slice(onset, x.length);
  for (std::size_t c = 0; c < x.channels; ++c) {
    double mean = 0.0;
    for (std::size_t t = onset - window; t < onset; ++t) mean += x.at(c, t);
    mean /= static_cast<double>(window);
    for (double& v : out.row(c)) v -= mean;
  }
  return out;
}

/// Left/right average of each eye quantity; a -1 (blink) in either eye gives -1.
inline Signal merge_eyes(const Signal& eye) {
  if (eye.channels % 2 != 0)
    throw DimensionError("eye signal needs paired left/right channels, got " + std::to_string(eye.channels));
  const std::size_t q = eye.channels / 2;
  Signal out(q, eye.length, eye.rate_hz);
  for (std::size_t c = 0; c < q; ++c)
    for (std::size_t t = 0; t < eye.length; ++t) {
      const double l = eye.at(c, t), r = eye.at(c + q, t);
      out.at(c, t) = (l == -1.0 || r == -1.0) ? -1.0 : 0.5 * (l + r);
    }
  return out;
}

struct PreprocessConfig {
  IIRFilterSpec eeg_band = IIRFilterSpec::bandpass(1.0, 45.0);
  IIRFilterSpec ecg_band = IIRFilterSpec::bandpass(0.5, 45.0);
  IIRFilterSpec gsr_lowpass = IIRFilterSpec::lowpass(60.0);
  /// The 60 Hz corner is not realizable at 128 Hz, so it runs before downsampling.
  bool gsr_lowpass_before_downsample = true;
  IIRFilterSpec notch = IIRFilterSpec::notch(50.0, 30.0);
  DownsampleOptions downsample;
  double baseline_ms = 200.0;
  double segment_s = 10.0;
  double hop_s = 10.0;
  double trial_s = 30.0;  ///< expected trial length; shorter trials are reported
};

struct PreprocessResult {
  Trial trial;
  std::vector<std::string> warnings;
};

/// downsample -> average reference (EEG) -> bandpass/lowpass -> notch ->
/// baseline handling -> merge eyes. Pure function of its arguments.
inline PreprocessResult preprocess_trial(const Trial& raw, const PreprocessConfig& cfg = {}) {
  PreprocessResult res;
  Trial& out = res.trial;
  out.id = raw.id;
  out.subject = raw.subject;
  out.arousal = raw.arousal;
  out.valence = raw.valence;
  out.pre_trial_s = 0.0;
  for (Modality m : kModalities) {
    const auto geom = raw_geometry(m);
    if (raw[m].channels != geom.channels || raw[m].rate_hz != geom.rate_hz)
      throw DimensionError(raw.id + ": " + std::string(modality_name(m)) + " must have " + std::to_string(geom.channels) +
                           " channels at " + std::to_string(geom.rate_hz) + " Hz");
  }

  Signal eeg = average_reference(downsample_by2(raw[Modality::eeg], cfg.downsample));
  eeg = apply_filter(apply_filter(eeg, cfg.eeg_band), cfg.notch);

  Signal ecg = downsample_by2(raw[Modality::ecg], cfg.downsample);
  ecg = apply_filter(apply_filter(ecg, cfg.ecg_band), cfg.notch);

  Signal gsr = raw[Modality::gsr];
  if (cfg.gsr_lowpass_before_downsample) gsr = apply_filter(gsr, cfg.gsr_lowpass);
  gsr = downsample_by2(gsr, cfg.downsample);
  if (!cfg.gsr_lowpass_before_downsample) gsr = apply_filter(gsr, cfg.gsr_lowpass);
  gsr = apply_filter(gsr, cfg.notch);

  auto onset = [&](const Signal& s) { return static_cast<std::size_t>(std::lround(raw.pre_trial_s * s.rate_hz)); };
  out[Modality::eeg] = eeg.slice(onset(eeg), eeg.length);
  out[Modality::ecg] = ecg.slice(onset(ecg), ecg.length);
  out[Modality::gsr] = baseline_correct(gsr, onset(gsr), cfg.baseline_ms);
  const Signal& eye = raw[Modality::eye];
  out[Modality::eye] = merge_eyes(eye.slice(onset(eye), eye.length));

  const double duration = std::min({out[Modality::eeg].duration_s(), out[Modality::eye].duration_s()});
  if (duration + 1e-9 < cfg.trial_s)
    res.warnings.push_back(raw.id + ": trial lasts " + std::to_string(duration) + " s, shorter than " +
                           std::to_string(cfg.trial_s) + " s");
  return res;
}

/// Consecutive windows of `segment_s` seconds every `hop_s` seconds.
inline std::vector<Segment> segment_trial(const Trial& trial, double segment_s = 10.0, double hop_s = 10.0,
                                          std::vector<std::string>* warnings = nullptr) {
  if (!(segment_s > 0.0) || !(hop_s > 0.0)) throw ConfigError("segment and hop lengths must be positive");
  double duration = 1e300;
  for (Modality m : kModalities) duration = std::min(duration, trial[m].duration_s());
  std::vector<Segment> out;
  if (duration + 1e-9 < segment_s) {
    if (warnings) warnings->push_back(trial.id + ": shorter than one segment, no segments emitted");
    return out;
  }
  const auto count = static_cast<std::size_t>(std::floor((duration - segment_s) / hop_s + 1e-9)) + 1;
  for (std::size_t k = 0; k < count; ++k) {
    Segment s;
    s.trial_id = trial.id;
    s.subject = trial.subject;
    s.index = k;
    s.arousal = trial.arousal;
    s.valence = trial.valence;
    for (Modality m : kModalities) {
      const Signal& x = trial[m];
      const auto len = static_cast<std::size_t>(std::lround(segment_s * x.rate_hz));
      const auto begin = static_cast<std::size_t>(std::lround(static_cast<double>(k) * hop_s * x.rate_hz));
      s[m] = x.slice(begin, begin + len);
    }
    out.push_back(std::move(s));
  }
  const double covered = static_cast<double>(count - 1) * hop_s + segment_s;
  if (warnings && duration - covered > 1e-9 && hop_s >= segment_s)
    warnings->push_back(trial.id + ": " + std::to_string(duration - covered) + " s after the last segment discarded");
  return out;
}

}  // namespace hyperx
