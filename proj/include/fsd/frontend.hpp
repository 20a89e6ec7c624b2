#pragma once

#include "fsd/audio.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <vector>

namespace fsd {

inline constexpr int kSubbandBins = 45;
inline constexpr int kFrameCount = 600;

enum class WindowKind { kBlackman };

struct StftConfig {
  int window_length = 1728;
  int hop_length = 130;
  WindowKind window = WindowKind::kBlackman;
  double power_floor = 1e-12;
  double log_base = 0.0;  // 0 selects the natural logarithm
  int frames = kFrameCount;
  int subband_bins = kSubbandBins;

  int bins() const { return window_length / 2 + 1; }
  void validate() const;

  bool operator==(const StftConfig&) const = default;
};

// Log-power spectrogram, bins x frames.
struct Spectrogram {
  Eigen::MatrixXd values;

  Eigen::Index bins() const { return values.rows(); }
  Eigen::Index frames() const { return values.cols(); }
};

// The network input: the lowest frequency rows of the fixed-length LPS.
struct FeatureMatrix {
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> values;
  std::string trial_id;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
};

// Periodic Blackman window of the given length.
Eigen::VectorXd blackman_window(int length);

// Non-centered frame count 1 + floor((n - window) / hop); 0 when n < window.
std::size_t frame_count(std::size_t n_samples, const StftConfig& cfg);

// values(k, t) = log(max(|X_t(k)|^2, power_floor)) for frames starting at t*hop.
Spectrogram compute_lps(const Waveform& wave, const StftConfig& cfg = {});

// Truncates to the first `target` frames, or tiles along time so that output
// frame t is input frame t mod n_frames.
Spectrogram fix_frames(const Spectrogram& spec, Eigen::Index target = kFrameCount);

// Keeps rows 0..bins-1 of a spectrogram that already has `frames` frames.
FeatureMatrix extract_f0_subband(const Spectrogram& spec, int bins = kSubbandBins,
                                 int frames = kFrameCount);

// load -> compute_lps -> fix_frames -> extract_f0_subband.
FeatureMatrix extract_features(const std::filesystem::path& path, const StftConfig& cfg = {},
                               const std::string& trial_id = {});
FeatureMatrix extract_features(const Waveform& wave, const StftConfig& cfg = {},
                               const std::string& trial_id = {});

}  // namespace fsd
