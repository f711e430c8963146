#include "bonenet/fusion.hpp"

#include "bonenet/error.hpp"
#include "bonenet/rng.hpp"

namespace bonenet {

Tensor late_fuse(std::span<const Tensor> predictions) {
  if (predictions.size() < 2) throw Error(ErrorCode::InvalidConfig, "late fusion needs at least two members");
  Tensor mean = predictions[0];
  for (std::size_t k = 1; k < predictions.size(); ++k) {
    if (predictions[k].shape() != mean.shape())
      throw Error(ErrorCode::ShapeMismatch, "late fusion members disagree on shape: " +
                                                shape_str(predictions[k].shape()) + " vs " + shape_str(mean.shape()));
    const double w = 1.0 / static_cast<double>(k + 1);
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += (predictions[k][i] - mean[i]) * w;
  }
  return mean;
}

EarlyFusionModel EarlyFusionModel::build(std::vector<Model> members, const std::vector<std::size_t>& head_dims,
                                         double dropout_rate, std::uint64_t seed, bool freeze_members) {
  if (members.empty()) throw Error(ErrorCode::InvalidConfig, "early fusion needs at least one member");
  if (head_dims.size() != 2 || head_dims[0] == 0 || head_dims[1] == 0)
    throw Error(ErrorCode::InvalidConfig, "early fusion head needs two positive widths");
  EarlyFusionModel f;
  f.input_size_ = members.front().input_size();
  for (auto& m : members) {
    if (m.input_size() != f.input_size_)
      throw Error(ErrorCode::InvalidConfig, "early fusion members must share the input size");
    f.feature_width_ += m.feature_width();
    if (freeze_members) {
      m.freeze_blocks(static_cast<int>(ModelConfig::kBlocks));
      for (auto* p : m.parameters()) p->trainable = false;
    }
  }
  f.members_frozen_ = freeze_members;
  f.members_ = std::move(members);
  f.fc1_ = LinearLayer::make("fused.head.fc1", f.feature_width_, head_dims[0], derive_seed(seed, {0xf0, 1}));
  f.fc2_ = LinearLayer::make("fused.head.fc2", head_dims[0], head_dims[1], derive_seed(seed, {0xf0, 2}));
  f.fc3_ = LinearLayer::make("fused.head.fc3", head_dims[1], 1, derive_seed(seed, {0xf0, 3}));
  f.drop1_ = DropoutLayer(dropout_rate, derive_seed(seed, {0xf1, 1}));
  f.drop2_ = DropoutLayer(dropout_rate, derive_seed(seed, {0xf1, 2}));
  return f;
}

NodeId EarlyFusionModel::features(Graph& g, NodeId x, Mode mode) {
  // Frozen extractors always run in eval mode: running batch-norm
  // statistics and no dropout.
  const Mode member_mode = members_frozen_ ? Mode::Eval : mode;
  std::vector<NodeId> parts;
  for (auto& m : members_) parts.push_back(m.features(g, x, member_mode));
  return parts.size() == 1 ? parts[0] : ops::concat(g, parts, 1);
}

NodeId EarlyFusionModel::forward(Graph& g, NodeId x, Mode mode) {
  NodeId h = features(g, x, mode);
  h = drop1_.forward(g, ops::relu(g, fc1_.forward(g, h)), mode);
  h = drop2_.forward(g, ops::relu(g, fc2_.forward(g, h)), mode);
  return fc3_.forward(g, h);
}

std::vector<Parameter*> EarlyFusionModel::head_parameters() {
  return {&fc1_.weight, &fc1_.bias, &fc2_.weight, &fc2_.bias, &fc3_.weight, &fc3_.bias};
}

std::vector<Parameter*> EarlyFusionModel::parameters() {
  std::vector<Parameter*> out;
  for (auto& m : members_) {
    auto p = m.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  auto head = head_parameters();
  out.insert(out.end(), head.begin(), head.end());
  return out;
}

std::uint64_t EarlyFusionModel::count_params(bool trainable_only) const {
  std::uint64_t n = 0;
  for (const auto* p : const_cast<EarlyFusionModel*>(this)->parameters()) {
    if (p->buffer || (trainable_only && !p->trainable)) continue;
    n += p->value.size();
  }
  return n;
}

}  // namespace bonenet
