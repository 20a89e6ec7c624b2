#include "fsd/data.hpp"

#include "fsd/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

namespace fsd {

std::string to_string(Partition partition) {
  switch (partition) {
    case Partition::kTrain: return "train";
    case Partition::kDev: return "dev";
    case Partition::kEval: return "eval";
  }
  return "train";
}

Partition parse_partition(const std::string& text) {
  if (text == "train") return Partition::kTrain;
  if (text == "dev") return Partition::kDev;
  if (text == "eval") return Partition::kEval;
  throw ConfigError("unknown partition '" + text + "' (expected train, dev or eval)");
}

std::size_t ProtocolManifest::count(Label label) const {
  return static_cast<std::size_t>(std::count_if(
      trials.begin(), trials.end(), [label](const Trial& t) { return t.label == label; }));
}

void ProtocolManifest::require_both_classes() const {
  if (count(Label::kBonafide) == 0 || count(Label::kSpoof) == 0) {
    throw DataError("manifest must contain both bonafide and spoof trials (" +
                    std::to_string(count(Label::kBonafide)) + " bonafide, " +
                    std::to_string(count(Label::kSpoof)) + " spoof)");
  }
}

ProtocolManifest parse_protocol_text(const std::string& text, Partition partition,
                                     const std::string& source_name) {
  ProtocolManifest manifest;
  manifest.partition = partition;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::vector<std::string> f;
    for (std::string field; fields >> field;) f.push_back(std::move(field));
    if (f.empty()) continue;
    const std::string where = source_name + ":" + std::to_string(line_no) + ": ";
    if (f.size() != 5) {
      throw DataError(where + "expected 5 fields, found " + std::to_string(f.size()));
    }
    Trial trial{f[0], f[1], f[2], f[3], Label::kUnknown};
    if (f[4] == "bonafide") {
      trial.label = Label::kBonafide;
    } else if (f[4] == "spoof") {
      trial.label = Label::kSpoof;
    } else {
      throw DataError(where + "unknown label '" + f[4] + "'");
    }
    if ((trial.label == Label::kBonafide) != (trial.system_id == "-")) {
      throw DataError(where + "label " + f[4] + " inconsistent with system id '" +
                      trial.system_id + "'");
    }
    if (!seen.insert(trial.utterance_id).second) {
      throw DataError(where + "duplicate utterance id " + trial.utterance_id);
    }
    manifest.trials.push_back(std::move(trial));
  }
  if (manifest.trials.empty()) throw DataError(source_name + ": empty protocol");
  return manifest;
}

ProtocolManifest parse_protocol(const std::filesystem::path& path, Partition partition) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open protocol " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  ProtocolManifest manifest = parse_protocol_text(buffer.str(), partition, path.string());
  manifest.audio_root = path.parent_path();
  return manifest;
}

std::string format_protocol_line(const Trial& trial) {
  return trial.speaker_id + ' ' + trial.utterance_id + ' ' + trial.environment_id + ' ' +
         trial.system_id + ' ' + to_string(trial.label);
}

void write_protocol(const std::filesystem::path& path, const ProtocolManifest& manifest) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write protocol " + path.string());
  for (const auto& t : manifest.trials) out << format_protocol_line(t) << '\n';
  if (!out) throw DataError("failed writing protocol " + path.string());
}

AudioFeatureSource::AudioFeatureSource(std::filesystem::path audio_root, StftConfig cfg)
    : root_(std::move(audio_root)), cfg_(cfg) {
  cfg_.validate();
}

std::filesystem::path AudioFeatureSource::resolve(const std::string& trial_id) const {
  for (const auto& candidate : {root_ / (trial_id + ".flac"), root_ / (trial_id + ".wav"),
                                root_ / "flac" / (trial_id + ".flac")}) {
    if (std::filesystem::exists(candidate)) return candidate;
  }
  throw DataError("missing audio file for trial " + trial_id + " under " + root_.string());
}

FeatureMatrix AudioFeatureSource::load(const std::string& trial_id) const {
  const std::filesystem::path path = resolve(trial_id);
  try {
    return extract_features(path, cfg_, trial_id);
  } catch (const DataError& e) {
    throw DataError("trial " + trial_id + ": " + e.what());
  }
}

MemoryFeatureSource::MemoryFeatureSource(std::vector<FeatureMatrix> features) {
  for (auto& f : features) add(std::move(f));
}

void MemoryFeatureSource::add(FeatureMatrix feature) {
  std::string id = feature.trial_id;
  features_.insert_or_assign(std::move(id), std::move(feature));
}

const FeatureMatrix& MemoryFeatureSource::get(const std::string& trial_id) const {
  const auto it = features_.find(trial_id);
  if (it == features_.end()) throw DataError("no features for trial " + trial_id);
  return it->second;
}

FeatureMatrix MemoryFeatureSource::load(const std::string& trial_id) const {
  return get(trial_id);
}

MemoryFeatureSource preload(const ProtocolManifest& manifest, const FeatureSource& source) {
  MemoryFeatureSource out;
  for (const auto& t : manifest.trials) {
    FeatureMatrix f = source.load(t.utterance_id);
    f.trial_id = t.utterance_id;
    out.add(std::move(f));
  }
  return out;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Draws are spelled out so that the stream does not depend on the standard
// library's distribution implementations.
class Draws {
 public:
  explicit Draws(std::uint64_t seed) : rng_(seed) {}
  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(rng_() % n); }
  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 rng_;
};

}  // namespace

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::uint64_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Draws draws(splitmix64(seed ^ splitmix64(epoch + 1)));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[draws.below(i)]);
  return order;
}

BatchIterator::BatchIterator(const ProtocolManifest& manifest, const FeatureSource& source,
                             std::size_t batch_size, std::uint64_t seed)
    : manifest_(manifest), source_(source), batch_size_(batch_size), seed_(seed) {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  start_epoch(0);
}

void BatchIterator::start_epoch(std::uint64_t epoch) {
  order_ = epoch_order(seed_, epoch, manifest_.trials.size());
  cursor_ = 0;
}

std::size_t BatchIterator::batches_per_epoch() const {
  return (manifest_.trials.size() + batch_size_ - 1) / batch_size_;
}

std::optional<Batch> BatchIterator::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  Batch batch;
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  for (; cursor_ < end; ++cursor_) {
    const Trial& trial = manifest_.trials[order_[cursor_]];
    FeatureMatrix f = source_.load(trial.utterance_id);
    f.trial_id = trial.utterance_id;
    batch.features.push_back(std::move(f));
    batch.labels.push_back(class_index(trial.label));
    batch.trial_ids.push_back(trial.utterance_id);
  }
  return batch;
}

namespace {

// Upper edge of the kept subband, 45 bins of 16000/1728 Hz, with a little
// room for the window's main lobe.
constexpr double kSubbandEdgeHz = 450.0;
constexpr double kSpoofLowBandGain = 0.02;

void add_tone(std::vector<double>& samples, double cycles_per_sample, double phase,
              double amplitude) {
  for (std::size_t n = 0; n < samples.size(); ++n) {
    samples[n] += amplitude * std::sin(2.0 * std::numbers::pi * cycles_per_sample *
                                           static_cast<double>(n) + phase);
  }
}

}  // namespace

Waveform synth_toy_clip(std::uint64_t clip_seed, Label label, std::size_t samples,
                        int sample_rate) {
  Draws draws(clip_seed);
  const double rate = static_cast<double>(sample_rate);
  const double f0 = draws.uniform(90.0, 220.0);
  const double vibrato_rate = draws.uniform(3.0, 6.0);
  const double vibrato_depth = draws.uniform(0.005, 0.02);
  const int harmonics = static_cast<int>(std::min(4000.0, 0.45 * rate) / f0);

  std::vector<double> amplitude(harmonics);
  std::vector<double> phase(harmonics);
  for (int h = 0; h < harmonics; ++h) {
    amplitude[h] = draws.uniform(0.6, 1.0) / (h + 1);
    phase[h] = draws.uniform(0.0, 2.0 * std::numbers::pi);
    if (label == Label::kSpoof && f0 * (h + 1) < kSubbandEdgeHz) amplitude[h] *= kSpoofLowBandGain;
  }

  Waveform wave;
  wave.sample_rate = sample_rate;
  wave.samples.assign(samples, 0.0);
  double base_phase = 0.0;
  for (std::size_t n = 0; n < samples; ++n) {
    const double t = static_cast<double>(n) / rate;
    const double vibrato = std::sin(2.0 * std::numbers::pi * vibrato_rate * t);
    const double f = f0 * (1.0 + vibrato_depth * vibrato);
    double v = 0.0;
    for (int h = 0; h < harmonics; ++h) {
      v += amplitude[h] * std::sin((h + 1) * base_phase + phase[h]);
    }
    wave.samples[n] = v;
    base_phase += 2.0 * std::numbers::pi * f / rate;
  }

  // Low-band noise bed shared by both classes; spoofs keep it only at the
  // attenuated level and get a weak fill of random tones instead.
  const double low_gain = label == Label::kSpoof ? kSpoofLowBandGain : 1.0;
  for (int k = 0; k < 45; ++k) {
    const double f = draws.uniform(10.0 * k + 5.0, 10.0 * k + 15.0);
    const double p = draws.uniform(0.0, 2.0 * std::numbers::pi);
    const double a = low_gain * draws.uniform(0.01, 0.03);
    add_tone(wave.samples, f / rate, p, a);
  }
  if (label == Label::kSpoof) {
    for (int k = 0; k < 24; ++k) {
      const double f = draws.uniform(20.0, kSubbandEdgeHz);
      const double p = draws.uniform(0.0, 2.0 * std::numbers::pi);
      add_tone(wave.samples, f / rate, p, draws.uniform(0.0002, 0.0006));
    }
  }

  double peak = 0.0;
  for (double s : wave.samples) peak = std::max(peak, std::abs(s));
  const double gain = draws.uniform(0.3, 0.6) / std::max(peak, 1e-9);
  for (double& s : wave.samples) s = s * gain + 0.0005 * draws.normal();
  return wave;
}

ProtocolManifest synth_toy_dataset(const ToyDatasetOptions& options,
                                   const std::filesystem::path& out_dir) {
  if (options.n_per_class < 1) throw ConfigError("n_per_class must be >= 1");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) {
    throw DataError("cannot create output directory " + out_dir.string());
  }
  ProtocolManifest manifest;
  manifest.audio_root = out_dir;
  manifest.partition = Partition::kTrain;
  const std::size_t total = 2 * options.n_per_class;
  for (std::size_t i = 0; i < total; ++i) {
    const Label label = i % 2 == 0 ? Label::kBonafide : Label::kSpoof;
    char id[64];
    std::snprintf(id, sizeof(id), "%s_%07zu", options.prefix.c_str(), i + 1);
    char speaker[32];
    std::snprintf(speaker, sizeof(speaker), "TOY_%04zu", i % 20);
    const std::uint64_t clip_seed = splitmix64(options.seed * 0x100000001b3ULL + i);
    const Waveform wave = synth_toy_clip(clip_seed, label, options.samples, options.sample_rate);
    write_wav_pcm16(out_dir / (std::string(id) + ".wav"), wave);
    manifest.trials.push_back(
        {speaker, id, "-", label == Label::kBonafide ? "-" : "T01", label});
  }
  write_protocol(out_dir / "protocol.txt", manifest);
  return manifest;
}

}  // namespace fsd
