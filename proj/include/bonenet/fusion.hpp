#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bonenet/model.hpp"

namespace bonenet {

/// Elementwise mean of at least two equally shaped prediction tensors,
/// accumulated as a running mean so that identical members fuse to
/// themselves exactly.
Tensor late_fuse(std::span<const Tensor> predictions);

/// Concatenates the penultimate (global + connection) features of several
/// trained models and regresses age with a fresh three-FC head.
class EarlyFusionModel final : public Regressor {
 public:
  static EarlyFusionModel build(std::vector<Model> members, const std::vector<std::size_t>& head_dims,
                                double dropout_rate, std::uint64_t seed, bool freeze_members = true);

  NodeId forward(Graph& g, NodeId x, Mode mode) override;
  NodeId features(Graph& g, NodeId x, Mode mode);

  /// Member parameters first (in member order), then the head.
  std::vector<Parameter*> parameters() override;
  std::size_t input_size() const override { return input_size_; }
  Parameter* output_bias() override { return &fc3_.bias; }

  /// Head parameters only.
  std::vector<Parameter*> head_parameters();
  std::uint64_t count_params(bool trainable_only) const;
  std::size_t feature_width() const noexcept { return feature_width_; }
  bool members_frozen() const noexcept { return members_frozen_; }
  std::vector<Model>& members() noexcept { return members_; }

 private:
  std::vector<Model> members_;
  LinearLayer fc1_, fc2_, fc3_;
  DropoutLayer drop1_, drop2_;
  std::size_t input_size_ = 0;
  std::size_t feature_width_ = 0;
  bool members_frozen_ = true;
};

}  // namespace bonenet
