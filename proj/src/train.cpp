#include "bonenet/train.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "bonenet/error.hpp"
#include "bonenet/rng.hpp"

namespace bonenet {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
  if (epochs < 1) fail("epochs must be positive");
  if (batch_size < 2) fail("batch_size must be at least 2");
  if (!(lr0 > 0.0)) fail("lr0 must be positive");
  if (!(lr_min > 0.0 && lr_min <= lr0)) fail("lr_min must lie in (0, lr0]");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) fail("plateau_factor must lie in (0, 1)");
  if (patience < 1) fail("patience must be positive");
  if (!(min_delta >= 0.0)) fail("min_delta must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) fail("train_fraction must lie in (0, 1)");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) fail("val_fraction must lie in [0, 1)");
}

NodeId loss(Graph& g, NodeId pred, NodeId target, LossKind kind) {
  if (g.shape(pred) != g.shape(target))
    throw Error(ErrorCode::ShapeMismatch,
                "loss: prediction " + shape_str(g.shape(pred)) + " vs target " + shape_str(g.shape(target)));
  const NodeId diff = ops::sub(g, pred, target);
  return ops::reduce_mean(g, kind == LossKind::L1 ? ops::abs(g, diff) : ops::square(g, diff));
}

void adam_step(std::span<const std::pair<Parameter*, const Tensor*>> updates, AdamState& state, double lr,
               const AdamHyper& hyper) {
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (const auto& [param, grad] : updates) {
    Tensor& p = param->value;
    if (grad->shape() != p.shape())
      throw Error(ErrorCode::ShapeMismatch, "adam: gradient shape differs for " + param->name);
    auto& mom = state.moments[param];
    if (mom.m.empty()) {
      mom.m = Tensor::zeros(p.shape());
      mom.v = Tensor::zeros(p.shape());
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = (*grad)[i];
      mom.m[i] = hyper.beta1 * mom.m[i] + (1.0 - hyper.beta1) * g;
      mom.v[i] = hyper.beta2 * mom.v[i] + (1.0 - hyper.beta2) * g * g;
      const double m_hat = mom.m[i] / c1;
      const double v_hat = mom.v[i] / c2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
    }
  }
}

PlateauState::PlateauState(double lr0) : best_val(std::numeric_limits<double>::infinity()), current_lr(lr0) {}

PlateauState plateau_step(PlateauState state, double val_metric, const TrainConfig& cfg) {
  if (!std::isfinite(val_metric))
    throw Error(ErrorCode::InvalidMetric, "validation metric is not finite");
  if (val_metric < state.best_val - cfg.min_delta) {
    state.best_val = val_metric;
    state.epochs_since_improve = 0;
    return state;
  }
  if (++state.epochs_since_improve >= cfg.patience) {
    state.current_lr = std::max(state.current_lr * cfg.plateau_factor, cfg.lr_min);
    state.epochs_since_improve = 0;
  }
  return state;
}

Tensor eval_batch(const Dataset& data, std::size_t first, std::size_t count) {
  const std::size_t S = data.target_size;
  Tensor batch({count, 1, S, S});
  for (std::size_t i = 0; i < count; ++i) {
    Tensor img = augment_resized(data.images[first + i], S, Mode::Eval, nullptr);
    std::copy(img.data().begin(), img.data().end(), batch.ptr() + i * S * S);
  }
  return batch;
}

std::vector<double> predict(Regressor& model, const Dataset& data, std::size_t batch_size) {
  std::vector<double> out;
  out.reserve(data.size());
  for (std::size_t first = 0; first < data.size(); first += batch_size) {
    const std::size_t count = std::min(batch_size, data.size() - first);
    Graph g;
    const NodeId x = g.input(eval_batch(data, first, count));
    const NodeId y = model.forward(g, x, Mode::Eval);
    for (double v : g.value(y).data()) out.push_back(v);
  }
  return out;
}

EvalReport report_from_predictions(std::vector<double> predictions, const Dataset& data, GroupBy group_by) {
  if (data.empty()) throw Error(ErrorCode::EmptyDataset, "cannot evaluate an empty dataset");
  if (predictions.size() != data.size())
    throw Error(ErrorCode::ShapeMismatch, "prediction count differs from dataset size");
  EvalReport r;
  r.count = data.size();
  std::map<std::string, std::pair<std::size_t, double>> acc;
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double err = std::fabs(predictions[i] - data.ages[i]);
    total += err;
    if (group_by == GroupBy::Gender) {
      auto& a = acc[to_string(data.genders[i])];
      a.first += 1;
      a.second += err;
    } else if (group_by == GroupBy::Region) {
      auto& a = acc[to_string(data.region)];
      a.first += 1;
      a.second += err;
    }
  }
  r.mae = total / static_cast<double>(data.size());
  for (const auto& [name, a] : acc) r.groups[name] = {a.first, a.second / static_cast<double>(a.first)};
  r.predictions = std::move(predictions);
  return r;
}

EvalReport evaluate(Regressor& model, const Dataset& data, GroupBy group_by) {
  if (data.empty()) throw Error(ErrorCode::EmptyDataset, "cannot evaluate an empty dataset");
  return report_from_predictions(predict(model, data), data, group_by);
}

namespace {

std::vector<Tensor> snapshot(const std::vector<Parameter*>& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto* p : params) out.push_back(p->value);
  return out;
}

void restore(const std::vector<Parameter*>& params, const std::vector<Tensor>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

}  // namespace

TrainResult train(Regressor& model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty() || val_set.empty()) throw Error(ErrorCode::EmptyDataset, "training needs non-empty data");
  if (cfg.batch_size > train_set.size())
    throw Error(ErrorCode::InvalidConfig, "batch_size exceeds the training set size");
  if (train_set.target_size != model.input_size() || val_set.target_size != model.input_size())
    throw Error(ErrorCode::ShapeMismatch, "dataset image size does not match the model input size");

  const auto params = model.parameters();
  if (cfg.init_output_bias) {
    if (Parameter* bias = model.output_bias()) {
      const double mean_age =
          std::accumulate(train_set.ages.begin(), train_set.ages.end(), 0.0) / static_cast<double>(train_set.size());
      bias->value.fill(mean_age);
    }
  }

  const AdamHyper hyper{cfg.beta1, cfg.beta2, cfg.adam_eps};
  const std::size_t S = model.input_size();
  const std::size_t n = train_set.size();
  AdamState adam;
  PlateauState plateau(cfg.lr0);
  TrainResult result;
  result.best_val_mae = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best = snapshot(params);

  std::vector<std::size_t> order(n);
  std::vector<std::pair<Parameter*, const Tensor*>> updates;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, {0x5407, static_cast<std::uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    const double lr = plateau.current_lr;
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t first = 0; first < n; first += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, n - first);
      if (count < 2) break;  // train-mode batch norm needs two samples
      Tensor batch({count, 1, S, S});
      Tensor targets({count, 1});
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t idx = order[first + i];
        std::mt19937_64 aug_rng(derive_seed(cfg.seed, {0xa06, static_cast<std::uint64_t>(epoch), idx}));
        const Tensor img =
            augment_resized(train_set.images[idx], S, cfg.augment ? Mode::Train : Mode::Eval, &aug_rng);
        std::copy(img.data().begin(), img.data().end(), batch.ptr() + i * S * S);
        targets[i] = train_set.ages[idx];
      }
      Graph g;
      const NodeId x = g.input(std::move(batch));
      const NodeId y = model.forward(g, x, Mode::Train);
      const NodeId t = g.input(std::move(targets));
      const NodeId l = loss(g, y, t, cfg.loss);
      const double lv = g.value(l).item();
      if (!std::isfinite(lv))
        throw Error(ErrorCode::DivergedTraining, "non-finite loss at epoch " + std::to_string(epoch));
      const auto grads = g.backward(l);
      updates.clear();
      for (const auto& [id, grad] : grads)
        if (Parameter* p = g.source(id)) updates.emplace_back(p, &grad);
      adam_step(updates, adam, lr, hyper);
      loss_sum += lv * static_cast<double>(count);
      seen += count;
    }

    const double val_mae = evaluate(model, val_set).mae;
    if (!std::isfinite(val_mae))
      throw Error(ErrorCode::DivergedTraining, "non-finite validation MAE at epoch " + std::to_string(epoch));
    HistoryRow row{epoch, loss_sum / static_cast<double>(seen), val_mae, lr};
    result.history.push_back(row);
    if (val_mae < result.best_val_mae) {
      result.best_val_mae = val_mae;
      result.best_epoch = epoch;
      best = snapshot(params);
    }
    plateau = plateau_step(plateau, val_mae, cfg);
    if (on_epoch) on_epoch(row);
  }
  restore(params, best);
  result.final_lr = plateau.current_lr;
  result.adam_steps = adam.t;
  return result;
}

std::string history_csv(const std::vector<HistoryRow>& rows) {
  std::ostringstream os;
  os << "epoch,train_loss,val_mae,lr\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g\n", r.epoch, r.train_loss, r.val_mae, r.lr);
    os << buf;
  }
  return os.str();
}

}  // namespace bonenet
