#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "bonenet/checkpoint.hpp"
#include "bonenet/data.hpp"
#include "bonenet/model.hpp"
#include "bonenet/train.hpp"
#include "json.hpp"

namespace bonenet {

struct RunPaths {
  /// Directory holding manifest.csv and images/.
  std::string data_dir = "data";
  bool operator==(const RunPaths&) const = default;
};

/// Everything a CLI command needs. The top-level seed is the single source
/// of randomness; it is copied into train.seed and data.seed.
struct RunConfig {
  std::uint64_t seed = 42;
  ModelConfig model;
  TrainConfig train;
  GenParams data;
  RunPaths paths;

  void set_seed(std::uint64_t s) {
    seed = s;
    train.seed = s;
    data.seed = s;
  }
};

/// Parses and validates a JSON run config. Missing keys take desk-scale
/// defaults; unknown keys and bad values raise Error(ConfigError) naming the
/// key path, e.g. "train.lr0".
RunConfig parse_config(std::string_view text);

nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const GenParams& p);
nlohmann::json to_json(const RunConfig& c);

/// Inverse of to_json for configs stored inside checkpoints (seed allowed).
ModelConfig model_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// SHA-256 over the canonical (key-sorted) serialization of both configs.
Fingerprint config_fingerprint(const ModelConfig& model, const TrainConfig& train);

}  // namespace bonenet
