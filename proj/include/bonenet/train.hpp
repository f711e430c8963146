#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bonenet/autograd.hpp"
#include "bonenet/data.hpp"
#include "bonenet/model.hpp"

namespace bonenet {

enum class LossKind { L1, L2 };

struct TrainConfig {
  int epochs = 130;
  std::size_t batch_size = 32;
  double lr0 = 3e-4;
  double lr_min = 1e-7;
  double plateau_factor = 0.8;
  int patience = 10;
  /// A validation MAE counts as an improvement only below best - min_delta.
  double min_delta = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 42;
  LossKind loss = LossKind::L1;
  /// Fraction of the manifest used for training (the rest is the test set).
  double train_fraction = 0.7;
  /// Share of the training partition held out for validation.
  double val_fraction = 0.15;
  /// Start the output bias at the mean training age.
  bool init_output_bias = true;
  /// Random crop + flip on training samples; off means center crops.
  bool augment = true;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Mean |pred - target| (L1) or mean (pred - target)^2 (L2) as a scalar node.
NodeId loss(Graph& g, NodeId pred, NodeId target, LossKind kind);

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  struct Moments {
    Tensor m;
    Tensor v;
  };
  std::map<const Parameter*, Moments> moments;
  /// Number of steps taken so far.
  std::uint64_t t = 0;
};

/// One bias-corrected Adam step over (parameter, gradient) pairs; advances
/// state.t by one.
void adam_step(std::span<const std::pair<Parameter*, const Tensor*>> updates, AdamState& state, double lr,
               const AdamHyper& hyper);

struct PlateauState {
  double best_val;
  int epochs_since_improve = 0;
  double current_lr;

  explicit PlateauState(double lr0);
};

/// Reduce-on-plateau: after `patience` epochs without improvement the rate
/// is multiplied by plateau_factor, floored at lr_min.
PlateauState plateau_step(PlateauState state, double val_metric, const TrainConfig& cfg);

struct HistoryRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_mae = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<HistoryRow> history;
  int best_epoch = 0;
  double best_val_mae = 0.0;
  double final_lr = 0.0;
  std::uint64_t adam_steps = 0;
};

using EpochCallback = std::function<void(const HistoryRow&)>;

/// Minibatch Adam over augmented samples with a reduce-on-plateau schedule
/// driven by validation MAE. On return the model holds the parameters of the
/// best validation epoch.
TrainResult train(Regressor& model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

/// `epoch,train_loss,val_mae,lr` with 9 significant digits.
std::string history_csv(const std::vector<HistoryRow>& rows);

enum class GroupBy { None, Gender, Region };

struct GroupStat {
  std::size_t count = 0;
  double mae = 0.0;
};

struct EvalReport {
  std::size_t count = 0;
  double mae = 0.0;
  /// Only non-empty groups appear.
  std::map<std::string, GroupStat> groups;
  std::vector<double> predictions;
};

/// Eval-mode predictions, in dataset order.
std::vector<double> predict(Regressor& model, const Dataset& data, std::size_t batch_size = 64);
EvalReport report_from_predictions(std::vector<double> predictions, const Dataset& data, GroupBy group_by);
EvalReport evaluate(Regressor& model, const Dataset& data, GroupBy group_by = GroupBy::None);

/// Eval-mode batch tensor [B,1,S,S] for the given sample indices.
Tensor eval_batch(const Dataset& data, std::size_t first, std::size_t count);

}  // namespace bonenet
