#include "fsd/config.hpp"

#include "fsd/errors.hpp"

#include <fstream>
#include <initializer_list>
#include <type_traits>

namespace fsd {

namespace {

void check_keys(const Json& j, const std::string& section,
                std::initializer_list<const char*> known) {
  if (!j.is_object()) throw ConfigError(section + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    bool found = false;
    for (const char* k : known) found = found || key == k;
    if (!found) throw ConfigError("unknown config field '" + section + "." + key + "'");
  }
}

template <typename T>
void read_field(const Json& j, const std::string& section, const char* key, T& out) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  const std::string name = section + "." + key;
  if constexpr (std::is_same_v<T, bool>) {
    if (!it->is_boolean()) throw ConfigError(name + ": expected true or false");
  } else if constexpr (std::is_integral_v<T>) {
    if (!it->is_number_integer()) throw ConfigError(name + ": expected an integer");
    if constexpr (std::is_unsigned_v<T>) {
      if (it->is_number_integer() && !it->is_number_unsigned()) {
        throw ConfigError(name + ": expected a non-negative integer");
      }
    }
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!it->is_number()) throw ConfigError(name + ": expected a number");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!it->is_string()) throw ConfigError(name + ": expected a string");
  }
  try {
    out = it->template get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(name + ": " + e.what());
  }
}

template <typename F>
auto wrap_invalid(const std::string& section, F&& f) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(section + ": " + e.what());
  }
}

}  // namespace

Json to_json(const NetworkSpec& spec) {
  return Json{{"attention", to_string(spec.attention)},
              {"depth", spec.depth},
              {"block_counts", spec.block_counts},
              {"block_kind", to_string(spec.block_kind)},
              {"channel_plan", spec.channel_plan},
              {"stem_channels", spec.stem_channels},
              {"se_reduction", spec.se_reduction},
              {"eca_kernel", spec.eca_kernel},
              {"bottleneck_width", spec.bottleneck_width},
              {"num_classes", spec.num_classes}};
}

Json to_json(const DistillConfig& cfg) {
  return Json{{"alpha", cfg.alpha},
              {"beta", cfg.beta},
              {"n_segments", cfg.n_segments},
              {"temperature", cfg.temperature},
              {"margin", cfg.margin},
              {"anneal", cfg.anneal},
              {"lambda_min", cfg.lambda_min},
              {"lambda_max", cfg.lambda_max},
              {"optimizer",
               {{"kind", "adam"},
                {"beta1", cfg.optimizer.beta1},
                {"beta2", cfg.optimizer.beta2},
                {"epsilon", cfg.optimizer.epsilon},
                {"weight_decay", cfg.optimizer.weight_decay}}},
              {"epochs", cfg.epochs},
              {"learning_rate", cfg.learning_rate},
              {"batch_size", cfg.batch_size},
              {"seed", cfg.seed},
              {"recalibrate_bn", cfg.recalibrate_bn}};
}

Json to_json(const StftConfig& cfg) {
  return Json{{"window_length", cfg.window_length},
              {"hop_length", cfg.hop_length},
              {"window", "blackman"},
              {"power_floor", cfg.power_floor},
              {"log_base", cfg.log_base},
              {"frames", cfg.frames},
              {"subband_bins", cfg.subband_bins}};
}

Json to_json(const TDcfCostModel& cost) {
  return Json{{"p_target", cost.p_target},
              {"p_nontarget", cost.p_nontarget},
              {"p_spoof", cost.p_spoof},
              {"c_miss_asv", cost.c_miss_asv},
              {"c_fa_asv", cost.c_fa_asv},
              {"c_miss_cm", cost.c_miss_cm},
              {"c_fa_cm", cost.c_fa_cm},
              {"p_miss_asv", cost.p_miss_asv},
              {"p_fa_asv", cost.p_fa_asv},
              {"p_miss_spoof_asv", cost.p_miss_spoof_asv}};
}

Json to_json(const RunConfig& cfg) {
  return Json{{"network", to_json(cfg.network)},
              {"distill", to_json(cfg.distill)},
              {"stft", to_json(cfg.stft)},
              {"cost_model", to_json(cfg.cost)},
              {"paths",
               {{"train_protocol", cfg.train_protocol},
                {"dev_protocol", cfg.dev_protocol},
                {"audio_dir", cfg.audio_dir},
                {"dev_audio_dir", cfg.dev_audio_dir},
                {"feature_cache", cfg.feature_cache},
                {"out_dir", cfg.out_dir}}}};
}

NetworkSpec network_spec_from_json(const Json& j, NetworkSpec base) {
  const std::string section = "network";
  check_keys(j, section,
             {"attention", "depth", "block_counts", "block_kind", "channel_plan", "stem_channels",
              "se_reduction", "eca_kernel", "bottleneck_width", "num_classes"});
  std::string attention = to_string(base.attention);
  read_field(j, section, "attention", attention);
  read_field(j, section, "depth", base.depth);
  base.attention = wrap_invalid(section + ".attention", [&] { return parse_attention(attention); });
  const NetworkSpec shape = wrap_invalid(
      section + ".depth", [&] { return NetworkSpec::make(base.attention, base.depth); });
  base.block_counts = shape.block_counts;
  base.block_kind = shape.block_kind;
  read_field(j, section, "block_counts", base.block_counts);
  if (j.contains("block_kind")) {
    std::string kind;
    read_field(j, section, "block_kind", kind);
    base.block_kind = wrap_invalid(section + ".block_kind", [&] { return parse_block_kind(kind); });
  }
  read_field(j, section, "channel_plan", base.channel_plan);
  read_field(j, section, "stem_channels", base.stem_channels);
  read_field(j, section, "se_reduction", base.se_reduction);
  read_field(j, section, "eca_kernel", base.eca_kernel);
  read_field(j, section, "bottleneck_width", base.bottleneck_width);
  read_field(j, section, "num_classes", base.num_classes);
  wrap_invalid(section, [&] {
    base.validate();
    return 0;
  });
  return base;
}

DistillConfig distill_config_from_json(const Json& j, DistillConfig base) {
  const std::string section = "distill";
  check_keys(j, section,
             {"alpha", "beta", "n_segments", "temperature", "margin", "anneal", "lambda_min",
              "lambda_max", "optimizer", "epochs", "learning_rate", "batch_size", "seed",
              "recalibrate_bn"});
  read_field(j, section, "alpha", base.alpha);
  read_field(j, section, "beta", base.beta);
  read_field(j, section, "n_segments", base.n_segments);
  read_field(j, section, "temperature", base.temperature);
  read_field(j, section, "margin", base.margin);
  read_field(j, section, "anneal", base.anneal);
  read_field(j, section, "lambda_min", base.lambda_min);
  read_field(j, section, "lambda_max", base.lambda_max);
  read_field(j, section, "epochs", base.epochs);
  read_field(j, section, "learning_rate", base.learning_rate);
  read_field(j, section, "batch_size", base.batch_size);
  read_field(j, section, "seed", base.seed);
  read_field(j, section, "recalibrate_bn", base.recalibrate_bn);
  if (const auto it = j.find("optimizer"); it != j.end()) {
    const std::string opt = section + ".optimizer";
    check_keys(*it, opt, {"kind", "beta1", "beta2", "epsilon", "weight_decay"});
    std::string kind = "adam";
    read_field(*it, opt, "kind", kind);
    if (kind != "adam") throw ConfigError(opt + ".kind: only 'adam' is supported");
    read_field(*it, opt, "beta1", base.optimizer.beta1);
    read_field(*it, opt, "beta2", base.optimizer.beta2);
    read_field(*it, opt, "epsilon", base.optimizer.epsilon);
    read_field(*it, opt, "weight_decay", base.optimizer.weight_decay);
  }
  base.validate();
  return base;
}

StftConfig stft_config_from_json(const Json& j, StftConfig base) {
  const std::string section = "stft";
  check_keys(j, section,
             {"window_length", "hop_length", "window", "power_floor", "log_base", "frames",
              "subband_bins"});
  read_field(j, section, "window_length", base.window_length);
  read_field(j, section, "hop_length", base.hop_length);
  if (j.contains("window")) {
    std::string window;
    read_field(j, section, "window", window);
    if (window != "blackman") throw ConfigError("stft.window: only 'blackman' is supported");
  }
  read_field(j, section, "power_floor", base.power_floor);
  read_field(j, section, "log_base", base.log_base);
  read_field(j, section, "frames", base.frames);
  read_field(j, section, "subband_bins", base.subband_bins);
  base.validate();
  return base;
}

TDcfCostModel cost_model_from_json(const Json& j, TDcfCostModel base) {
  const std::string section = "cost_model";
  check_keys(j, section,
             {"p_target", "p_nontarget", "p_spoof", "c_miss_asv", "c_fa_asv", "c_miss_cm",
              "c_fa_cm", "p_miss_asv", "p_fa_asv", "p_miss_spoof_asv"});
  read_field(j, section, "p_target", base.p_target);
  read_field(j, section, "p_nontarget", base.p_nontarget);
  read_field(j, section, "p_spoof", base.p_spoof);
  read_field(j, section, "c_miss_asv", base.c_miss_asv);
  read_field(j, section, "c_fa_asv", base.c_fa_asv);
  read_field(j, section, "c_miss_cm", base.c_miss_cm);
  read_field(j, section, "c_fa_cm", base.c_fa_cm);
  read_field(j, section, "p_miss_asv", base.p_miss_asv);
  read_field(j, section, "p_fa_asv", base.p_fa_asv);
  read_field(j, section, "p_miss_spoof_asv", base.p_miss_spoof_asv);
  base.validate();
  return base;
}

RunConfig run_config_from_json(const Json& j, RunConfig base) {
  check_keys(j, "config", {"network", "distill", "stft", "cost_model", "paths"});
  if (j.contains("network")) base.network = network_spec_from_json(j["network"], base.network);
  if (j.contains("distill")) base.distill = distill_config_from_json(j["distill"], base.distill);
  if (j.contains("stft")) base.stft = stft_config_from_json(j["stft"], base.stft);
  if (j.contains("cost_model")) base.cost = cost_model_from_json(j["cost_model"], base.cost);
  if (const auto it = j.find("paths"); it != j.end()) {
    check_keys(*it, "paths",
               {"train_protocol", "dev_protocol", "audio_dir", "dev_audio_dir", "feature_cache",
                "out_dir"});
    read_field(*it, "paths", "train_protocol", base.train_protocol);
    read_field(*it, "paths", "dev_protocol", base.dev_protocol);
    read_field(*it, "paths", "audio_dir", base.audio_dir);
    read_field(*it, "paths", "dev_audio_dir", base.dev_audio_dir);
    read_field(*it, "paths", "feature_cache", base.feature_cache);
    read_field(*it, "paths", "out_dir", base.out_dir);
  }
  return base;
}

void RunConfig::validate() const {
  wrap_invalid("network", [&] {
    network.validate();
    return 0;
  });
  distill.validate();
  stft.validate();
  cost.validate();
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace fsd
