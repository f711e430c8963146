#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bonenet/autograd.hpp"
#include "bonenet/layers.hpp"

namespace bonenet {

/// Architecture of the hierarchical-feature regressor.
///
/// A 5-block VGG-style backbone; every block is `convs_per_block` x
/// (3x3 conv -> batch norm -> ReLU) followed by a 2x2 max-pool. Each entry of
/// `connection_blocks` taps that block's pooled output into an `n_units`-wide
/// FC bottleneck. The block-5 output (global features) and all bottleneck
/// outputs are concatenated and regressed by three FC layers, the last one a
/// single linear unit.
struct ModelConfig {
  std::size_t input_size = 64;
  std::vector<std::size_t> block_channels{16, 32, 64, 128, 128};
  std::size_t convs_per_block = 2;
  std::vector<int> connection_blocks{3, 4};
  std::size_t n_units = 64;
  std::vector<std::size_t> head_dims{128, 64};
  double dropout_rate = 0.5;
  bool global_pool_connections = false;
  int frozen_blocks = 0;
  /// Blocks 1 and 2 carry low-level features and are rejected as connection
  /// taps unless this is set.
  bool allow_early_connections = false;

  static constexpr std::size_t kBlocks = 5;

  /// Throws Error(InvalidConfig) describing the first violated constraint.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Learnable parameters of one additional connection: C*H*W*n_U + n_U.
std::uint64_t connection_param_count(std::uint64_t channels, std::uint64_t height, std::uint64_t width,
                                     std::uint64_t n_units);

/// Called at every named tap with the activation node; returns the node the
/// rest of the network should consume (usually the same one).
using TapHook = std::function<NodeId(Graph&, const std::string& tap, NodeId)>;

/// Anything the training loop and evaluator can drive.
class Regressor {
 public:
  virtual ~Regressor() = default;
  /// x: [B,1,S,S] -> ages [B,1].
  virtual NodeId forward(Graph& g, NodeId x, Mode mode) = 0;
  virtual std::vector<Parameter*> parameters() = 0;
  virtual std::size_t input_size() const = 0;
  /// Bias of the single output unit, if the regressor has one.
  virtual Parameter* output_bias() { return nullptr; }
};

class Model final : public Regressor {
 public:
  static Model build(const ModelConfig& config, std::uint64_t seed);

  NodeId forward(Graph& g, NodeId x, Mode mode) override { return forward(g, x, mode, {}); }
  NodeId forward(Graph& g, NodeId x, Mode mode, const TapHook& hook);
  /// Concatenated global + connection features, [B, feature_width()].
  NodeId features(Graph& g, NodeId x, Mode mode, const TapHook& hook = {});

  std::vector<Parameter*> parameters() override;
  std::vector<const Parameter*> parameters() const;
  Parameter* find(const std::string& name);

  std::size_t input_size() const override { return config_.input_size; }
  Parameter* output_bias() override { return &fc3_.bias; }
  const ModelConfig& config() const noexcept { return config_; }

  /// Freezes blocks 1..k (weights and batch-norm statistics); later blocks
  /// become trainable.
  void freeze_blocks(int k);
  std::uint64_t count_params(bool trainable_only) const;
  std::size_t feature_width() const noexcept { return feature_width_; }

  /// Shape [C,H,W] of a tap's activation for a single image.
  Shape tap_shape(const std::string& tap) const;
  std::vector<std::string> tap_names() const;

  /// Pool output shape [C,H,W] of a 1-based block.
  Shape block_output_shape(int block) const;

 private:
  struct Block {
    std::vector<Conv2dLayer> convs;
    std::vector<BatchNormLayer> norms;
  };
  struct Connection {
    int block = 0;
    LinearLayer fc;
    DropoutLayer dropout;
  };

  ModelConfig config_;
  std::vector<Block> blocks_;
  std::vector<Connection> connections_;
  LinearLayer fc1_, fc2_, fc3_;
  DropoutLayer drop1_, drop2_;
  std::size_t feature_width_ = 0;
};

}  // namespace bonenet
