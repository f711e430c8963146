#include <gtest/gtest.h>

#include <set>

#include "bonenet/model.hpp"
#include "bonenet/train.hpp"
#include "support/expect_error.hpp"
#include "support/oracle.hpp"

using namespace bonenet;
using testing_support::code_of;
using testing_support::random_tensor;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.input_size = 32;
  c.block_channels = {2, 3, 4, 4, 4};
  c.convs_per_block = 1;
  c.n_units = 4;
  c.head_dims = {6, 5};
  return c;
}

std::uint64_t params_named(Model& m, const std::string& prefix) {
  std::uint64_t n = 0;
  for (auto* p : m.parameters())
    if (p->name.rfind(prefix, 0) == 0) n += p->value.size();
  return n;
}

}  // namespace

TEST(ConnectionParamCount, MatchesFormula) {
  EXPECT_EQ(connection_param_count(1, 1, 1, 1), 2u);
  // Independent arithmetic: 256*28*28 = 200704; *256 = 51380224; +256.
  EXPECT_EQ(connection_param_count(256, 28, 28, 256), 51380480u);
  // 512*14*14 = 100352; *256 = 25690112; +256.
  EXPECT_EQ(connection_param_count(512, 14, 14, 256), 25690368u);
}

TEST(Model, DeskConnectionsMatchFormula) {
  Model m = Model::build(ModelConfig{}, 1);
  EXPECT_EQ(m.block_output_shape(3), (Shape{64, 8, 8}));
  EXPECT_EQ(m.block_output_shape(4), (Shape{128, 4, 4}));
  EXPECT_EQ(params_named(m, "conn.block3."), 262208u);
  EXPECT_EQ(params_named(m, "conn.block4."), 131136u);
  EXPECT_EQ(params_named(m, "conn.block3."), connection_param_count(64, 8, 8, 64));
  EXPECT_EQ(params_named(m, "conn.block4."), connection_param_count(128, 4, 4, 64));
}

TEST(Model, HandCountedTinyConfig) {
  ModelConfig c;
  c.input_size = 32;
  c.block_channels = {1, 1, 1, 1, 1};
  c.convs_per_block = 1;
  c.n_units = 2;
  c.head_dims = {3, 2};
  // 5 x (9 conv + 2 bn) + conn3 (16*2+2) + conn4 (4*2+2) + fc1 (5*3+3) + fc2 (3*2+2) + fc3 (2+1)
  EXPECT_EQ(Model::build(c, 0).count_params(false), 55u + 34u + 10u + 18u + 8u + 3u);
}

TEST(Model, AblationBookkeeping) {
  ModelConfig hier;
  ModelConfig plain = hier;
  plain.connection_blocks.clear();
  const Model mh = Model::build(hier, 3), mp = Model::build(plain, 3);
  const std::uint64_t connections = connection_param_count(64, 8, 8, 64) + connection_param_count(128, 4, 4, 64);
  // fc1 input widens by one n_U per connection.
  const std::uint64_t fc1_delta = 2 * 64 * 128;
  EXPECT_EQ(mh.count_params(false) - mp.count_params(false), connections + fc1_delta);
  EXPECT_EQ(mh.feature_width(), mp.feature_width() + 128);
}

TEST(Model, GlobalPoolConnections) {
  ModelConfig c;
  c.global_pool_connections = true;
  Model m = Model::build(c, 2);
  EXPECT_EQ(params_named(m, "conn.block3."), 64u * 64u + 64u);
  EXPECT_EQ(params_named(m, "conn.block4."), 128u * 64u + 64u);
  Graph g;
  const NodeId y = m.forward(g, g.input(random_tensor({2, 1, 64, 64}, 4)), Mode::Train);
  EXPECT_EQ(g.shape(y), (Shape{2, 1}));
}

TEST(Model, ConfigValidation) {
  ModelConfig c;
  c.input_size = 48;
  EXPECT_EQ(code_of([&] { Model::build(c, 0); }), ErrorCode::InvalidConfig);
  c = ModelConfig{};
  c.connection_blocks = {2, 3};
  EXPECT_EQ(code_of([&] { Model::build(c, 0); }), ErrorCode::InvalidConfig);
  c.allow_early_connections = true;
  EXPECT_NO_THROW(Model::build(c, 0));
  c.connection_blocks = {5};
  EXPECT_EQ(code_of([&] { Model::build(c, 0); }), ErrorCode::InvalidConfig);
  c = ModelConfig{};
  c.head_dims = {8};
  EXPECT_EQ(code_of([&] { Model::build(c, 0); }), ErrorCode::InvalidConfig);
}

TEST(Model, NamesAreUniqueAndStable) {
  Model m = Model::build(ModelConfig{}, 0);
  std::set<std::string> names;
  for (auto* p : m.parameters()) EXPECT_TRUE(names.insert(p->name).second) << p->name;
  for (const char* n : {"block3.conv1.weight", "block1.bn2.running_var", "conn.block3.fc.weight",
                        "conn.block4.fc.bias", "head.fc2.bias", "head.fc3.weight"})
    EXPECT_NE(m.find(n), nullptr) << n;
}

TEST(Model, SameSeedSameParameters) {
  Model a = Model::build(small_config(), 9), b = Model::build(small_config(), 9), c = Model::build(small_config(), 10);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->value, pb[i]->value) << pa[i]->name;
    any_diff = any_diff || !(pa[i]->value == pc[i]->value);
  }
  EXPECT_TRUE(any_diff);
}

TEST(Model, ForwardShapes) {
  Model m = Model::build(small_config(), 1);
  Graph g;
  EXPECT_EQ(g.shape(m.forward(g, g.input(random_tensor({4, 1, 32, 32}, 1)), Mode::Eval)), (Shape{4, 1}));
  const NodeId wrong = g.input(random_tensor({4, 1, 64, 64}, 1));
  EXPECT_EQ(code_of([&] { m.forward(g, wrong, Mode::Eval); }), ErrorCode::ShapeMismatch);
}

TEST(Model, DeadHeadOutputsBias) {
  Model m = Model::build(small_config(), 1);
  m.find("head.fc3.weight")->value.fill(0.0);
  m.find("head.fc3.bias")->value.fill(42.5);
  Graph g;
  const Tensor& y = g.value(m.forward(g, g.input(random_tensor({3, 1, 32, 32}, 5, -5, 5)), Mode::Train));
  for (double v : y.data()) EXPECT_EQ(v, 42.5);
}

TEST(Model, TapShapes) {
  Model m = Model::build(small_config(), 1);
  EXPECT_EQ(m.tap_shape("block4.pool"), (Shape{4, 2, 2}));
  EXPECT_EQ(m.tap_shape("block2.conv1"), (Shape{3, 16, 16}));
  EXPECT_EQ(code_of([&] { m.tap_shape("block9.pool"); }), ErrorCode::UnknownLayer);
}

TEST(Model, FreezeBlocks) {
  Model m = Model::build(ModelConfig{}, 1);
  EXPECT_EQ(m.count_params(true), m.count_params(false));
  std::uint64_t backbone = 0;
  for (auto* p : m.parameters())
    if (p->name.rfind("block", 0) == 0 && !p->buffer) backbone += p->value.size();
  m.freeze_blocks(5);
  EXPECT_EQ(m.count_params(false) - m.count_params(true), backbone);
  EXPECT_EQ(code_of([&] { m.freeze_blocks(6); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([&] { m.freeze_blocks(-1); }), ErrorCode::InvalidConfig);
}

TEST(Model, FrozenBlocksUnchangedByAdamStep) {
  Model m = Model::build(small_config(), 4);
  m.freeze_blocks(2);
  std::vector<Tensor> before;
  for (auto* p : m.parameters()) before.push_back(p->value);

  Graph g;
  const NodeId pred = m.forward(g, g.input(random_tensor({4, 1, 32, 32}, 8)), Mode::Train);
  const NodeId l = loss(g, pred, g.input(Tensor({4, 1}, {10, 20, 30, 40})), LossKind::L1);
  std::map<Parameter*, NodeId> leaf;
  for (NodeId id = 0; id < g.size(); ++id)
    if (g.source(id)) leaf[g.source(id)] = id;
  const auto grads = g.backward(l);
  std::vector<std::pair<Parameter*, const Tensor*>> updates;
  for (auto& [p, id] : leaf)
    if (p->trainable && !p->buffer) updates.emplace_back(p, &grads.at(id));
  AdamState state;
  adam_step(updates, state, 1e-2, AdamHyper{});

  const auto params = m.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& n = params[i]->name;
    if (n.rfind("block1.", 0) == 0 || n.rfind("block2.", 0) == 0)
      EXPECT_EQ(params[i]->value, before[i]) << n;
    else if (n.find("conv1.weight") != std::string::npos)
      EXPECT_NE(params[i]->value, before[i]) << n;
  }
}

TEST(Model, EveryTrainableParameterIsReached) {
  Model m = Model::build(small_config(), 6);
  std::map<std::string, bool> reached;
  for (auto* p : m.parameters())
    if (p->trainable && !p->buffer) reached[p->name] = false;
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    Graph g;
    const NodeId pred = m.forward(g, g.input(random_tensor({4, 1, 32, 32}, 100 + trial)), Mode::Train);
    const NodeId l = loss(g, pred, g.input(random_tensor({4, 1}, 200 + trial, 0, 80)), LossKind::L2);
    const auto grads = g.backward(l);
    for (const auto& [id, grad] : grads) {
      const Parameter* p = g.source(id);
      if (!p) continue;
      for (double v : grad.data())
        if (v != 0.0) reached[p->name] = true;
    }
  }
  for (const auto& [name, ok] : reached) EXPECT_TRUE(ok) << name;
}
