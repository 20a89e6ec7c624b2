#pragma once

#include "fsd/distill.hpp"
#include "fsd/frontend.hpp"
#include "fsd/metrics.hpp"
#include "fsd/network.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace fsd {

using Json = nlohmann::json;

// Everything a run needs, fully resolved. Sources are layered as
// defaults < config file < command-line flags.
struct RunConfig {
  NetworkSpec network;
  DistillConfig distill;
  StftConfig stft;
  TDcfCostModel cost;
  std::string train_protocol;
  std::string dev_protocol;
  std::string audio_dir;      // defaults to the protocol's directory
  std::string dev_audio_dir;  // defaults to the dev protocol's directory
  std::string feature_cache;
  std::string out_dir = "run";

  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

Json to_json(const NetworkSpec& spec);
Json to_json(const DistillConfig& cfg);
Json to_json(const StftConfig& cfg);
Json to_json(const TDcfCostModel& cost);
Json to_json(const RunConfig& cfg);

// Each reader starts from `base` and overrides the fields present in `j`.
// Unknown fields and type mismatches raise ConfigError naming the field.
NetworkSpec network_spec_from_json(const Json& j, NetworkSpec base = {});
DistillConfig distill_config_from_json(const Json& j, DistillConfig base = {});
StftConfig stft_config_from_json(const Json& j, StftConfig base = {});
TDcfCostModel cost_model_from_json(const Json& j, TDcfCostModel base = {});
RunConfig run_config_from_json(const Json& j, RunConfig base = {});

Json read_json_file(const std::filesystem::path& path);
// Pretty-printed with sorted keys and a trailing newline.
void write_json_file(const std::filesystem::path& path, const Json& j);

}  // namespace fsd
