#include "bonenet/model.hpp"

#include <algorithm>
#include <set>

#include "bonenet/error.hpp"
#include "bonenet/rng.hpp"

namespace bonenet {

namespace {

enum SeedTag : std::uint64_t { kConvSeed = 1, kConnSeed, kHeadSeed, kDropSeed };

std::string block_name(std::size_t b) { return "block" + std::to_string(b); }

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
  if (input_size == 0 || input_size % 32 != 0)
    fail("input_size must be a positive multiple of 32, got " + std::to_string(input_size));
  if (block_channels.size() != kBlocks) fail("block_channels must list exactly 5 blocks");
  for (auto c : block_channels)
    if (c == 0) fail("block_channels entries must be positive");
  if (convs_per_block == 0) fail("convs_per_block must be positive");
  if (n_units == 0) fail("n_units must be positive");
  if (head_dims.size() != 2 || head_dims[0] == 0 || head_dims[1] == 0)
    fail("head_dims must hold two positive widths");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must lie in [0, 1)");
  if (frozen_blocks < 0 || frozen_blocks > static_cast<int>(kBlocks)) fail("frozen_blocks must lie in 0..5");
  std::set<int> seen;
  for (int b : connection_blocks) {
    if (b < 1 || b > 4) fail("connection block " + std::to_string(b) + " must lie in 1..4");
    if (b <= 2 && !allow_early_connections)
      fail("connection from block " + std::to_string(b) + " requires allow_early_connections");
    if (!seen.insert(b).second) fail("duplicate connection block " + std::to_string(b));
  }
}

std::uint64_t connection_param_count(std::uint64_t channels, std::uint64_t height, std::uint64_t width,
                                     std::uint64_t n_units) {
  return channels * height * width * n_units + n_units;
}

Model Model::build(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config_ = config;
  std::size_t in_ch = 1;
  for (std::size_t b = 1; b <= ModelConfig::kBlocks; ++b) {
    Block block;
    const std::size_t out_ch = config.block_channels[b - 1];
    for (std::size_t i = 1; i <= config.convs_per_block; ++i) {
      const std::string prefix = block_name(b);
      block.convs.push_back(Conv2dLayer::make(prefix + ".conv" + std::to_string(i), in_ch, out_ch, 3, false,
                                              derive_seed(seed, {kConvSeed, b, i})));
      block.norms.push_back(BatchNormLayer::make(prefix + ".bn" + std::to_string(i), out_ch));
      in_ch = out_ch;
    }
    m.blocks_.push_back(std::move(block));
  }

  auto sorted = config.connection_blocks;
  std::sort(sorted.begin(), sorted.end());
  std::size_t width = shape_numel(m.block_output_shape(5));
  for (int b : sorted) {
    const Shape s = m.block_output_shape(b);
    const std::size_t in = config.global_pool_connections ? s[0] : shape_numel(s);
    Connection c;
    c.block = b;
    c.fc = LinearLayer::make("conn." + block_name(b) + ".fc", in, config.n_units,
                             derive_seed(seed, {kConnSeed, static_cast<std::uint64_t>(b)}));
    c.dropout = DropoutLayer(config.dropout_rate, derive_seed(seed, {kDropSeed, static_cast<std::uint64_t>(b)}));
    m.connections_.push_back(std::move(c));
    width += config.n_units;
  }
  m.feature_width_ = width;
  m.fc1_ = LinearLayer::make("head.fc1", width, config.head_dims[0], derive_seed(seed, {kHeadSeed, 1}));
  m.fc2_ = LinearLayer::make("head.fc2", config.head_dims[0], config.head_dims[1], derive_seed(seed, {kHeadSeed, 2}));
  m.fc3_ = LinearLayer::make("head.fc3", config.head_dims[1], 1, derive_seed(seed, {kHeadSeed, 3}));
  m.drop1_ = DropoutLayer(config.dropout_rate, derive_seed(seed, {kDropSeed, 101}));
  m.drop2_ = DropoutLayer(config.dropout_rate, derive_seed(seed, {kDropSeed, 102}));
  m.freeze_blocks(config.frozen_blocks);
  return m;
}

Shape Model::block_output_shape(int block) const {
  if (block < 1 || block > static_cast<int>(ModelConfig::kBlocks))
    throw Error(ErrorCode::InvalidConfig, "block index out of range");
  const std::size_t side = config_.input_size >> block;
  return {config_.block_channels[block - 1], side, side};
}

std::vector<std::string> Model::tap_names() const {
  std::vector<std::string> names;
  for (std::size_t b = 1; b <= ModelConfig::kBlocks; ++b) {
    for (std::size_t i = 1; i <= config_.convs_per_block; ++i)
      names.push_back(block_name(b) + ".conv" + std::to_string(i));
    names.push_back(block_name(b) + ".pool");
  }
  return names;
}

Shape Model::tap_shape(const std::string& tap) const {
  for (std::size_t b = 1; b <= ModelConfig::kBlocks; ++b) {
    const std::string prefix = block_name(b);
    if (tap == prefix + ".pool") return block_output_shape(static_cast<int>(b));
    for (std::size_t i = 1; i <= config_.convs_per_block; ++i)
      if (tap == prefix + ".conv" + std::to_string(i)) {
        const std::size_t side = config_.input_size >> (b - 1);
        return {config_.block_channels[b - 1], side, side};
      }
  }
  throw Error(ErrorCode::UnknownLayer, "no layer named '" + tap + "'");
}

NodeId Model::features(Graph& g, NodeId x, Mode mode, const TapHook& hook) {
  const Shape& xs = g.shape(x);
  if (xs.size() != 4 || xs[1] != 1 || xs[2] != config_.input_size || xs[3] != config_.input_size)
    throw Error(ErrorCode::ShapeMismatch, "model expects [B,1," + std::to_string(config_.input_size) + "," +
                                              std::to_string(config_.input_size) + "], got " + shape_str(xs));
  const std::size_t batch = xs[0];
  auto tap = [&](const std::string& name, NodeId n) { return hook ? hook(g, name, n) : n; };

  std::vector<NodeId> pooled(ModelConfig::kBlocks + 1);
  NodeId h = x;
  for (std::size_t b = 1; b <= ModelConfig::kBlocks; ++b) {
    Block& block = blocks_[b - 1];
    for (std::size_t i = 0; i < block.convs.size(); ++i) {
      h = block.convs[i].forward(g, h);
      h = block.norms[i].forward(g, h, mode);
      h = ops::relu(g, h);
      h = tap(block_name(b) + ".conv" + std::to_string(i + 1), h);
    }
    h = ops::maxpool2d(g, h, 2, 2);
    h = tap(block_name(b) + ".pool", h);
    pooled[b] = h;
  }

  std::vector<NodeId> parts;
  parts.push_back(ops::reshape(g, pooled[5], {batch, shape_numel(block_output_shape(5))}));
  for (auto& c : connections_) {
    NodeId in = config_.global_pool_connections
                    ? ops::global_avg_pool(g, pooled[c.block])
                    : ops::reshape(g, pooled[c.block], {batch, shape_numel(block_output_shape(c.block))});
    NodeId f = ops::relu(g, c.fc.forward(g, in));
    parts.push_back(c.dropout.forward(g, f, mode));
  }
  return parts.size() == 1 ? parts[0] : ops::concat(g, parts, 1);
}

NodeId Model::forward(Graph& g, NodeId x, Mode mode, const TapHook& hook) {
  NodeId h = features(g, x, mode, hook);
  h = drop1_.forward(g, ops::relu(g, fc1_.forward(g, h)), mode);
  h = drop2_.forward(g, ops::relu(g, fc2_.forward(g, h)), mode);
  return fc3_.forward(g, h);
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  for (auto& block : blocks_)
    for (std::size_t i = 0; i < block.convs.size(); ++i) {
      out.push_back(&block.convs[i].weight);
      if (block.convs[i].bias) out.push_back(&*block.convs[i].bias);
      auto& bn = block.norms[i];
      out.insert(out.end(), {&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var});
    }
  for (auto& c : connections_) out.insert(out.end(), {&c.fc.weight, &c.fc.bias});
  for (auto* fc : {&fc1_, &fc2_, &fc3_}) out.insert(out.end(), {&fc->weight, &fc->bias});
  return out;
}

std::vector<const Parameter*> Model::parameters() const {
  auto params = const_cast<Model*>(this)->parameters();
  return {params.begin(), params.end()};
}

Parameter* Model::find(const std::string& name) {
  for (auto* p : parameters())
    if (p->name == name) return p;
  return nullptr;
}

void Model::freeze_blocks(int k) {
  if (k < 0 || k > static_cast<int>(ModelConfig::kBlocks))
    throw Error(ErrorCode::InvalidConfig, "freeze_blocks: k must lie in 0..5, got " + std::to_string(k));
  config_.frozen_blocks = k;
  for (std::size_t b = 1; b <= ModelConfig::kBlocks; ++b) {
    const bool frozen = static_cast<int>(b) <= k;
    for (std::size_t i = 0; i < blocks_[b - 1].convs.size(); ++i) {
      auto& conv = blocks_[b - 1].convs[i];
      auto& bn = blocks_[b - 1].norms[i];
      conv.weight.trainable = !frozen;
      if (conv.bias) conv.bias->trainable = !frozen;
      bn.gamma.trainable = !frozen;
      bn.beta.trainable = !frozen;
      bn.frozen = frozen;
    }
  }
}

std::uint64_t Model::count_params(bool trainable_only) const {
  std::uint64_t n = 0;
  for (const auto* p : parameters()) {
    if (p->buffer || (trainable_only && !p->trainable)) continue;
    n += p->value.size();
  }
  return n;
}

}  // namespace bonenet
