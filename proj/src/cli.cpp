#include "fsd/cli.hpp"

#include "fsd/checkpoint.hpp"
#include "fsd/config.hpp"
#include "fsd/data.hpp"
#include "fsd/distill.hpp"
#include "fsd/errors.hpp"
#include "fsd/feature_cache.hpp"
#include "fsd/metrics.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <set>

namespace fsd {

namespace {

// Reads cached features when the cache has the trial, audio otherwise.
class CacheOrAudioSource : public FeatureSource {
 public:
  CacheOrAudioSource(const std::string& cache_path, std::filesystem::path audio_root,
                     const StftConfig& stft)
      : audio_(std::move(audio_root), stft) {
    if (!cache_path.empty() && std::filesystem::exists(cache_path)) {
      cache_ = std::make_unique<FeatureCache>(cache_path);
    }
  }

  FeatureMatrix load(const std::string& trial_id) const override {
    if (cache_ && cache_->contains(trial_id)) return cache_->load(trial_id);
    return audio_.load(trial_id);
  }

 private:
  AudioFeatureSource audio_;
  std::unique_ptr<FeatureCache> cache_;
};

std::filesystem::path audio_root_for(const std::string& audio_dir,
                                     const std::filesystem::path& protocol) {
  return audio_dir.empty() ? protocol.parent_path() : std::filesystem::path(audio_dir);
}

// Flags shared by the commands that resolve a RunConfig.
struct ConfigFlags {
  std::string config_file;
  std::optional<std::string> attention;
  std::optional<int> depth;
  std::optional<int> se_reduction;
  std::optional<int> eca_kernel;
  std::optional<double> alpha;
  std::optional<double> beta;
  std::optional<double> temperature;
  std::optional<int> margin;
  bool no_anneal = false;
  std::optional<int> epochs;
  std::optional<double> learning_rate;
  std::optional<double> weight_decay;
  std::optional<int> batch_size;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> train_protocol;
  std::optional<std::string> dev_protocol;
  std::optional<std::string> audio_dir;
  std::optional<std::string> dev_audio_dir;
  std::optional<std::string> feature_cache;
  std::optional<std::string> out_dir;

  void add_model_flags(CLI::App* cmd) {
    cmd->add_option("--attention", attention, "Channel attention: se or eca");
    cmd->add_option("--depth", depth, "Network depth: 9, 18, 34 or 50");
    cmd->add_option("--se-reduction", se_reduction, "SE reduction ratio");
    cmd->add_option("--eca-kernel", eca_kernel, "ECA kernel size (0 = channel-adaptive)");
  }

  void add_train_flags(CLI::App* cmd) {
    add_model_flags(cmd);
    cmd->add_option("--alpha", alpha, "Weight of the hard loss");
    cmd->add_option("--beta", beta, "Weight of the feature loss");
    cmd->add_option("--temperature", temperature, "Softmax temperature of the soft loss");
    cmd->add_option("--margin", margin, "Angular margin m (1..4)");
    cmd->add_flag("--no-anneal", no_anneal, "Use the pure margin target from the first step");
    cmd->add_option("--epochs", epochs, "Training epochs");
    cmd->add_option("--lr", learning_rate, "Adam learning rate");
    cmd->add_option("--weight-decay", weight_decay, "Adam L2 weight decay");
    cmd->add_option("--batch-size", batch_size, "Mini-batch size");
    cmd->add_option("--train-protocol", train_protocol, "Training protocol file");
    cmd->add_option("--dev-protocol", dev_protocol, "Development protocol file");
    cmd->add_option("--audio-dir", audio_dir, "Training audio directory");
    cmd->add_option("--dev-audio-dir", dev_audio_dir, "Development audio directory");
    cmd->add_option("--feature-cache", feature_cache, "Feature cache to read before audio");
    cmd->add_option("--out-dir", out_dir, "Run directory");
  }

  void add_common(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "JSON config file");
    cmd->add_option("--seed", seed, "Random seed");
  }

  Json overrides() const {
    Json j = Json::object();
    auto put = [&j](const char* section, const char* key, const auto& value) {
      if (value) j[section][key] = *value;
    };
    put("network", "attention", attention);
    put("network", "depth", depth);
    put("network", "se_reduction", se_reduction);
    put("network", "eca_kernel", eca_kernel);
    put("distill", "alpha", alpha);
    put("distill", "beta", beta);
    put("distill", "temperature", temperature);
    put("distill", "margin", margin);
    if (no_anneal) j["distill"]["anneal"] = false;
    put("distill", "epochs", epochs);
    put("distill", "learning_rate", learning_rate);
    put("distill", "batch_size", batch_size);
    put("distill", "seed", seed);
    if (weight_decay) j["distill"]["optimizer"]["weight_decay"] = *weight_decay;
    put("paths", "train_protocol", train_protocol);
    put("paths", "dev_protocol", dev_protocol);
    put("paths", "audio_dir", audio_dir);
    put("paths", "dev_audio_dir", dev_audio_dir);
    put("paths", "feature_cache", feature_cache);
    put("paths", "out_dir", out_dir);
    return j;
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config_file.empty()) cfg = run_config_from_json(read_json_file(config_file), cfg);
    cfg = run_config_from_json(overrides(), cfg);
    cfg.validate();
    return cfg;
  }
};

int cmd_toygen(const std::string& out_dir, const ToyDatasetOptions& options, std::ostream& out) {
  const ProtocolManifest manifest = synth_toy_dataset(options, out_dir);
  out << "wrote " << manifest.trials.size() << " clips and protocol.txt to " << out_dir << '\n';
  return kExitOk;
}

int cmd_extract(const RunConfig& cfg, const std::string& protocol, const std::string& audio_dir,
                const std::string& cache_path, std::ostream& out) {
  const ProtocolManifest manifest = parse_protocol(protocol, Partition::kTrain);
  const AudioFeatureSource source(audio_root_for(audio_dir, protocol), cfg.stft);

  std::vector<FeatureMatrix> records;
  std::set<std::string> present;
  if (std::filesystem::exists(cache_path)) {
    const FeatureCache cache(cache_path);
    for (const auto& t : manifest.trials) {
      if (cache.contains(t.utterance_id)) present.insert(t.utterance_id);
    }
    if (present.size() == manifest.trials.size() && cache.size() == manifest.trials.size()) {
      out << "cache up to date: " << cache.size() << " entries in " << cache_path << '\n';
      return kExitOk;
    }
    for (const auto& t : manifest.trials) {
      if (present.count(t.utterance_id)) records.push_back(cache.load(t.utterance_id));
    }
  }
  std::size_t extracted = 0;
  for (const auto& t : manifest.trials) {
    if (present.count(t.utterance_id)) continue;
    records.push_back(source.load(t.utterance_id));
    ++extracted;
  }
  write_feature_cache(cache_path, records);
  out << "extracted " << extracted << ", reused " << present.size() << ", total "
      << records.size() << " -> " << cache_path << '\n';
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  if (cfg.train_protocol.empty()) throw ConfigError("paths.train_protocol is required");
  const std::filesystem::path run_dir = cfg.out_dir;
  std::filesystem::create_directories(run_dir);
  write_json_file(run_dir / "resolved_config.json", to_json(cfg));

  ProtocolManifest manifest = parse_protocol(cfg.train_protocol, Partition::kTrain);
  manifest.audio_root = audio_root_for(cfg.audio_dir, cfg.train_protocol);
  const CacheOrAudioSource source(cfg.feature_cache, manifest.audio_root, cfg.stft);

  std::optional<ProtocolManifest> dev;
  std::unique_ptr<MemoryFeatureSource> dev_features;
  if (!cfg.dev_protocol.empty()) {
    dev = parse_protocol(cfg.dev_protocol, Partition::kDev);
    dev->audio_root = audio_root_for(cfg.dev_audio_dir, cfg.dev_protocol);
    dev->require_both_classes();
    dev_features = std::make_unique<MemoryFeatureSource>(
        preload(*dev, CacheOrAudioSource(cfg.feature_cache, dev->audio_root, cfg.stft)));
  }

  const std::filesystem::path log_path = run_dir / "epoch_log.csv";
  {
    std::ofstream log(log_path, std::ios::trunc);
    log << "# epoch, hard, soft, feature, total, wallclock_s\n";
  }
  double best = std::numeric_limits<double>::infinity();
  const Json config_json = to_json(cfg);

  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochLog& entry, const Network<float>& net, const Adam<float>& opt) {
    {
      std::ofstream log(log_path, std::ios::app);
      log << format_epoch_log(entry) << '\n';
    }
    Json meta{{"epoch", entry.epoch},
              {"train_total_loss", entry.loss.total},
              {"config", config_json}};
    double criterion = entry.loss.total;
    if (dev) {
      Network<float> scorer = net;
      scorer.set_training(false);
      const double dev_eer = compute_eer(evaluate(scorer, dev->trials, *dev_features)).eer;
      meta["dev_eer"] = dev_eer;
      criterion = dev_eer;
    }
    out << format_epoch_log(entry);
    if (dev) out << ", dev EER " << meta["dev_eer"].get<double>() * 100.0 << '%';
    out << std::endl;
    if (criterion < best) {
      best = criterion;
      meta["selection"] = dev ? "lowest dev EER" : "lowest training loss";
      save_checkpoint(run_dir / "best.ckpt", net, &opt, meta);
    }
  };

  const TrainResult result = train(manifest, source, cfg.network, cfg.distill, hooks);
  Json meta{{"epoch", result.log.back().epoch},
            {"train_total_loss", result.log.back().loss.total},
            {"config", config_json}};
  save_checkpoint(run_dir / "final.ckpt", result.network, &result.optimizer, meta);
  out << "checkpoints: " << (run_dir / "final.ckpt").string() << ", "
      << (run_dir / "best.ckpt").string() << '\n';
  return kExitOk;
}

struct EvalFlags {
  std::string checkpoint;
  std::string protocol;
  std::string audio_dir;
  std::string feature_cache;
  std::string out;
  bool keep_auxiliary = false;
  int batch_size = 16;
};

int cmd_eval(const RunConfig& cfg, const ConfigFlags& flags, const EvalFlags& e,
             std::ostream& out) {
  Checkpoint ckpt = load_checkpoint(e.checkpoint);
  const NetworkSpec& stored = ckpt.network.spec();
  if ((flags.attention && parse_attention(*flags.attention) != stored.attention) ||
      (flags.depth && *flags.depth != stored.depth)) {
    throw ConfigError("checkpoint/spec mismatch: checkpoint holds " + to_string(stored.attention) +
                      " depth " + std::to_string(stored.depth));
  }
  if (!e.keep_auxiliary) ckpt.network.strip_auxiliary();
  ckpt.network.set_training(false);

  const ProtocolManifest manifest = parse_protocol(e.protocol, Partition::kEval);
  const CacheOrAudioSource source(e.feature_cache, audio_root_for(e.audio_dir, e.protocol),
                                  cfg.stft);
  const std::vector<ScoreRecord> records =
      evaluate(ckpt.network, manifest.trials, source, static_cast<std::size_t>(e.batch_size));
  write_score_file(e.out, records);
  out << "wrote " << records.size() << " scores to " << e.out << '\n';
  return kExitOk;
}

struct ScoreFlags {
  std::string scores;
  std::string cost_model;
  std::string asv_scores;
  std::string json;
};

int cmd_score(const ScoreFlags& s, std::ostream& out) {
  const std::vector<ScoreRecord> records = read_score_file(s.scores);
  TDcfCostModel cost;
  if (!s.cost_model.empty()) {
    const Json j = read_json_file(s.cost_model);
    cost = cost_model_from_json(j.contains("cost_model") ? j["cost_model"] : j);
  }
  if (!s.asv_scores.empty()) set_asv_operating_point(cost, s.asv_scores);
  const EerResult eer = compute_eer(records);
  const TDcfResult tdcf = compute_min_tdcf(records, cost);

  char line[128];
  std::snprintf(line, sizeof(line), "EER %.2f%%\nmin t-DCF %.4f\n", eer.eer * 100.0,
                tdcf.min_tdcf);
  out << line;

  std::size_t bonafide = 0;
  std::size_t spoof = 0;
  for (const auto& r : records) {
    bonafide += r.label == Label::kBonafide;
    spoof += r.label == Label::kSpoof;
  }
  const Json report{{"eer", eer.eer},
                    {"eer_percent", eer.eer * 100.0},
                    {"eer_threshold", eer.threshold},
                    {"min_tdcf", tdcf.min_tdcf},
                    {"min_tdcf_threshold", tdcf.threshold},
                    {"n_bonafide", bonafide},
                    {"n_spoof", spoof},
                    {"n_unlabeled", records.size() - bonafide - spoof},
                    {"cost_model", to_json(cost)},
                    {"tdcf_variant", "ASVspoof 2019 t-DCF, normalized by min(C1, C2)"},
                    {"eer_convention",
                     "accept when score >= threshold; ROC crossing linearly interpolated"}};
  const std::string json_path = s.json.empty() ? s.scores + ".metrics.json" : s.json;
  write_json_file(json_path, report);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Self-distillation spoofing countermeasure toolkit", "fsd"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "fsd 1.0.0");

  ConfigFlags flags;

  auto* toygen = app.add_subcommand("toygen", "Write the synthetic two-class toy corpus");
  std::string toy_out;
  ToyDatasetOptions toy;
  toygen->add_option("--out", toy_out, "Output directory")->required();
  toygen->add_option("--n-per-class", toy.n_per_class, "Clips per class")->capture_default_str();
  toygen->add_option("--prefix", toy.prefix, "Utterance id prefix")->capture_default_str();
  toygen->add_option("--seed", toy.seed, "Random seed")->capture_default_str();

  auto* extract = app.add_subcommand("extract", "Extract F0-subband features into a cache");
  std::string ex_protocol;
  std::string ex_audio;
  std::string ex_out;
  extract->add_option("--protocol", ex_protocol, "Protocol file")->required();
  extract->add_option("--audio-dir", ex_audio, "Audio directory (default: protocol's)");
  extract->add_option("--out", ex_out, "Feature cache path")->required();
  flags.add_common(extract);

  auto* train_cmd = app.add_subcommand("train", "Train with self-distillation");
  flags.add_common(train_cmd);
  flags.add_train_flags(train_cmd);

  auto* eval = app.add_subcommand("eval", "Score a protocol with a checkpoint");
  EvalFlags e;
  eval->add_option("--checkpoint", e.checkpoint, "Checkpoint file")->required();
  eval->add_option("--protocol", e.protocol, "Protocol file")->required();
  eval->add_option("--audio-dir", e.audio_dir, "Audio directory (default: protocol's)");
  eval->add_option("--feature-cache", e.feature_cache, "Feature cache to read before audio");
  eval->add_option("--out", e.out, "Score file to write")->required();
  eval->add_flag("--keep-aux", e.keep_auxiliary, "Keep auxiliary heads attached (ignored)");
  eval->add_option("--batch-size", e.batch_size, "Scoring batch size")->capture_default_str();
  flags.add_common(eval);
  flags.add_model_flags(eval);

  auto* score = app.add_subcommand("score", "Compute EER and min t-DCF of a score file");
  ScoreFlags s;
  score->add_option("--scores", s.scores, "Score file")->required();
  score->add_option("--cost-model", s.cost_model, "JSON cost model (or config with cost_model)");
  score->add_option("--asv-scores", s.asv_scores, "ASV score file for the operating point");
  score->add_option("--json", s.json, "JSON report path (default: <scores>.metrics.json)");
  std::optional<std::uint64_t> unused_seed;
  score->add_option("--seed", unused_seed, "Accepted for uniformity; scoring is deterministic");

  std::vector<const char*> argv{"fsd"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& error) {
    const int code = app.exit(error, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (toygen->parsed()) return cmd_toygen(toy_out, toy, out);
    if (score->parsed()) return cmd_score(s, out);
    const RunConfig cfg = flags.resolve();
    if (extract->parsed()) return cmd_extract(cfg, ex_protocol, ex_audio, ex_out, out);
    if (train_cmd->parsed()) return cmd_train(cfg, out);
    if (eval->parsed()) return cmd_eval(cfg, flags, e, out);
  } catch (const ConfigError& error) {
    err << "config error: " << error.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& error) {
    err << "numeric error: " << error.what() << '\n';
    return kExitNumeric;
  } catch (const DataError& error) {
    err << "data error: " << error.what() << '\n';
    return kExitData;
  } catch (const ShapeError& error) {
    err << "data error: " << error.what() << '\n';
    return kExitData;
  } catch (const std::invalid_argument& error) {
    err << "usage error: " << error.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& error) {
    err << "error: " << error.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace fsd
