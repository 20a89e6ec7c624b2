#include "fsd/frontend.hpp"

#include "fsd/errors.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <numbers>

namespace fsd {

void StftConfig::validate() const {
  if (window_length < 2) throw ConfigError("window_length must be >= 2");
  if (hop_length <= 0 || hop_length > window_length) {
    throw ConfigError("hop_length must satisfy 0 < hop <= window_length");
  }
  if (!(power_floor > 0.0)) throw ConfigError("power_floor must be > 0");
  if (log_base < 0.0 || log_base == 1.0) {
    throw ConfigError("log_base must be 0 (natural) or > 0, != 1");
  }
  if (frames < 1) throw ConfigError("frame count must be >= 1");
  if (subband_bins < 1 || subband_bins > bins()) {
    throw ConfigError("subband_bins must lie in [1, window_length/2 + 1]");
  }
}

Eigen::VectorXd blackman_window(int length) {
  Eigen::VectorXd w(length);
  for (int n = 0; n < length; ++n) {
    const double x = 2.0 * std::numbers::pi * n / length;
    w[n] = 0.42 - 0.5 * std::cos(x) + 0.08 * std::cos(2.0 * x);
  }
  return w;
}

std::size_t frame_count(std::size_t n_samples, const StftConfig& cfg) {
  const auto window = static_cast<std::size_t>(cfg.window_length);
  if (n_samples < window) return 0;
  return 1 + (n_samples - window) / static_cast<std::size_t>(cfg.hop_length);
}

Spectrogram compute_lps(const Waveform& wave, const StftConfig& cfg) {
  cfg.validate();
  const std::size_t frames = frame_count(wave.samples.size(), cfg);
  if (frames == 0) {
    throw DataError("waveform has " + std::to_string(wave.samples.size()) +
                    " samples, shorter than one " + std::to_string(cfg.window_length) +
                    "-sample window");
  }
  for (double s : wave.samples) {
    if (!std::isfinite(s)) throw DataError("waveform contains non-finite samples");
  }
  const int n = cfg.window_length;
  const Eigen::VectorXd window = blackman_window(n);
  const double log_scale = cfg.log_base > 0.0 ? 1.0 / std::log(cfg.log_base) : 1.0;

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> frame(n);
  std::vector<std::complex<double>> spectrum;

  Spectrogram out;
  out.values.resize(cfg.bins(), static_cast<Eigen::Index>(frames));
  for (std::size_t t = 0; t < frames; ++t) {
    const double* src = wave.samples.data() + t * static_cast<std::size_t>(cfg.hop_length);
    for (int i = 0; i < n; ++i) frame[i] = src[i] * window[i];
    fft.fwd(spectrum, frame);
    for (int k = 0; k < cfg.bins(); ++k) {
      const double power = std::norm(spectrum[k]);
      out.values(k, static_cast<Eigen::Index>(t)) =
          std::log(std::max(power, cfg.power_floor)) * log_scale;
    }
  }
  return out;
}

Spectrogram fix_frames(const Spectrogram& spec, Eigen::Index target) {
  if (spec.frames() < 1 || spec.bins() < 1) throw DataError("fix_frames: empty spectrogram");
  if (target < 1) throw ConfigError("fix_frames: target frame count must be >= 1");
  Spectrogram out;
  if (spec.frames() >= target) {
    out.values = spec.values.leftCols(target);
    return out;
  }
  out.values.resize(spec.bins(), target);
  for (Eigen::Index t = 0; t < target; ++t) {
    out.values.col(t) = spec.values.col(t % spec.frames());
  }
  return out;
}

FeatureMatrix extract_f0_subband(const Spectrogram& spec, int bins, int frames) {
  if (spec.bins() < bins) {
    throw DataError("extract_f0_subband: need at least " + std::to_string(bins) + " bins, got " +
                    std::to_string(spec.bins()));
  }
  if (spec.frames() != frames) {
    throw DataError("extract_f0_subband: expected " + std::to_string(frames) + " frames, got " +
                    std::to_string(spec.frames()));
  }
  FeatureMatrix out;
  out.values = spec.values.topRows(bins).cast<float>();
  return out;
}

FeatureMatrix extract_features(const Waveform& wave, const StftConfig& cfg,
                               const std::string& trial_id) {
  FeatureMatrix f = extract_f0_subband(fix_frames(compute_lps(wave, cfg), cfg.frames),
                                       cfg.subband_bins, cfg.frames);
  if (!f.values.allFinite()) throw NumericError("non-finite feature values");
  f.trial_id = trial_id;
  return f;
}

FeatureMatrix extract_features(const std::filesystem::path& path, const StftConfig& cfg,
                               const std::string& trial_id) {
  return extract_features(load_waveform(path), cfg, trial_id);
}

}  // namespace fsd
