#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bonenet/config.hpp"
#include "bonenet/explain.hpp"
#include "bonenet/fusion.hpp"
#include "bonenet/train.hpp"
#include "json.hpp"

namespace bonenet {

namespace fs = std::filesystem;

/// "hier" keeps the configured connections, "plain" drops them all.
ModelConfig arch_config(const ModelConfig& base, const std::string& arch);

struct DataSplits {
  Manifest train;
  Manifest val;
  Manifest test;
};

/// Seeded train/test split, then the first val_fraction of the (already
/// shuffled) training rows become the validation set. With val_fraction 0
/// the training rows double as validation rows.
DataSplits split_for_training(const Manifest& manifest, const TrainConfig& cfg);

Manifest generate_data(const RunConfig& cfg, const fs::path& out_dir);

struct TrainRequest {
  std::string arch = "hier";
  Region region = Region::Full;
  fs::path out_dir;
  EpochCallback on_epoch;
};

struct TrainOutcome {
  TrainResult result;
  EvalReport test;
  std::uint64_t param_count = 0;
  fs::path checkpoint;
  fs::path history;
};

/// Trains on cfg.paths.data_dir and writes model.ckpt, history.csv,
/// metrics.csv and the split manifests under out_dir.
TrainOutcome run_train(const RunConfig& cfg, const TrainRequest& request);

struct LoadedModel {
  Model model;
  Region region = Region::Full;
  TrainConfig train;
  Fingerprint fingerprint{};
  nlohmann::json meta;
};

LoadedModel load_model(const fs::path& checkpoint);
void save_model(const fs::path& path, Model& model, const TrainConfig& train, Region region,
                const std::string& arch, const TrainResult& result);

struct EvalOutcome {
  EvalReport report;
  /// Per-member reports for ensembles, empty for a single model.
  std::vector<EvalReport> members;
};

/// Evaluates a model checkpoint, an early-fusion checkpoint or an ensemble
/// descriptor on a manifest.
EvalOutcome run_eval(const fs::path& model_path, const fs::path& manifest_path, GroupBy group_by);
std::string report_csv(const EvalReport& report);
std::string predictions_csv(const EvalReport& report, const Manifest& manifest);

struct FuseRequest {
  std::string mode = "late";
  std::vector<fs::path> members;
  fs::path out_dir;
  /// Early fusion only: head training epochs (0 = cfg.train.epochs).
  int head_epochs = 0;
  bool unfreeze_members = false;
  EpochCallback on_epoch;
};

struct FuseOutcome {
  fs::path descriptor;
  std::optional<TrainResult> head_training;
};

FuseOutcome run_fuse(const RunConfig& cfg, const FuseRequest& request);

struct ExplainOutcome {
  Heatmap heatmap;
  /// Empty when the heatmap is identically zero.
  std::optional<double> upper_mass;
  std::optional<double> lower_mass;
};

ExplainOutcome run_explain(const fs::path& checkpoint, const fs::path& image, const std::string& layer,
                           const fs::path& out_pgm);

struct ExplainManifestOutcome {
  std::size_t images = 0;
  std::size_t undefined = 0;
  /// Median upper-half mass over images with a non-zero heatmap.
  double median_upper_mass = 0.0;
};

/// Heatmaps for every manifest image plus region_mass.csv under out_dir.
ExplainManifestOutcome run_explain_manifest(const fs::path& checkpoint, const fs::path& manifest,
                                            const std::string& layer, const fs::path& out_dir);

}  // namespace bonenet
