#pragma once

#include "fsd/feature_cache.hpp"
#include "fsd/frontend.hpp"
#include "fsd/metrics.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace fsd {

enum class Partition { kTrain, kDev, kEval };

std::string to_string(Partition partition);
Partition parse_partition(const std::string& text);

// One protocol line: SPEAKER UTTERANCE ENVIRONMENT SYSTEM LABEL.
// The environment field is "-" for logical access and the acoustic
// configuration for physical access.
struct Trial {
  std::string speaker_id;
  std::string utterance_id;
  std::string environment_id = "-";
  std::string system_id = "-";
  Label label = Label::kBonafide;

  bool operator==(const Trial&) const = default;
};

struct ProtocolManifest {
  std::vector<Trial> trials;
  std::filesystem::path audio_root;
  Partition partition = Partition::kTrain;

  std::size_t count(Label label) const;
  // Throws DataError unless both classes are present.
  void require_both_classes() const;

  bool operator==(const ProtocolManifest&) const = default;
};

ProtocolManifest parse_protocol_text(const std::string& text, Partition partition,
                                     const std::string& source_name = "protocol");
ProtocolManifest parse_protocol(const std::filesystem::path& path, Partition partition);
void write_protocol(const std::filesystem::path& path, const ProtocolManifest& manifest);
std::string format_protocol_line(const Trial& trial);

// Supplies the feature matrix of a trial.
class FeatureSource {
 public:
  virtual ~FeatureSource() = default;
  virtual FeatureMatrix load(const std::string& trial_id) const = 0;
};

// Extracts features from `<root>/<id>.flac`, `<root>/<id>.wav` or
// `<root>/flac/<id>.flac`, in that order.
class AudioFeatureSource : public FeatureSource {
 public:
  explicit AudioFeatureSource(std::filesystem::path audio_root, StftConfig cfg = {});
  FeatureMatrix load(const std::string& trial_id) const override;
  std::filesystem::path resolve(const std::string& trial_id) const;

 private:
  std::filesystem::path root_;
  StftConfig cfg_;
};

class CachedFeatureSource : public FeatureSource {
 public:
  explicit CachedFeatureSource(const std::filesystem::path& cache_path) : cache_(cache_path) {}
  FeatureMatrix load(const std::string& trial_id) const override { return cache_.load(trial_id); }
  const FeatureCache& cache() const { return cache_; }

 private:
  FeatureCache cache_;
};

class MemoryFeatureSource : public FeatureSource {
 public:
  MemoryFeatureSource() = default;
  explicit MemoryFeatureSource(std::vector<FeatureMatrix> features);
  void add(FeatureMatrix feature);
  FeatureMatrix load(const std::string& trial_id) const override;
  const FeatureMatrix& get(const std::string& trial_id) const;
  std::size_t size() const { return features_.size(); }

 private:
  std::map<std::string, FeatureMatrix> features_;
};

// Loads every trial of the manifest into memory.
MemoryFeatureSource preload(const ProtocolManifest& manifest, const FeatureSource& source);

struct Batch {
  std::vector<FeatureMatrix> features;
  std::vector<int> labels;  // class indices
  std::vector<std::string> trial_ids;

  std::size_t size() const { return labels.size(); }
};

// Permutation of 0..n-1 for one epoch; a pure function of (seed, epoch, n).
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::uint64_t epoch, std::size_t n);

// Single-consumer batch stream. The final partial batch is kept.
class BatchIterator {
 public:
  BatchIterator(const ProtocolManifest& manifest, const FeatureSource& source,
                std::size_t batch_size, std::uint64_t seed);

  void start_epoch(std::uint64_t epoch);
  std::optional<Batch> next();
  std::size_t batches_per_epoch() const;

 private:
  const ProtocolManifest& manifest_;
  const FeatureSource& source_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

struct ToyDatasetOptions {
  std::uint64_t seed = 0;
  std::size_t n_per_class = 50;
  std::string prefix = "TOY_T";     // utterance ids are <prefix>_<7 digits>
  std::size_t samples = 27000;
  int sample_rate = 16000;
};

// Writes n_per_class bonafide and spoof 16-bit WAVs plus protocol.txt into
// out_dir. Bonafide clips are harmonic stacks; spoof clips are the same kind
// of stack with everything under the 45-bin subband edge attenuated and
// replaced by weak noise.
ProtocolManifest synth_toy_dataset(const ToyDatasetOptions& options,
                                   const std::filesystem::path& out_dir);

// The waveform synth_toy_dataset writes for one clip, before quantization.
Waveform synth_toy_clip(std::uint64_t clip_seed, Label label, std::size_t samples,
                        int sample_rate);

}  // namespace fsd
