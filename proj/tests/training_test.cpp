#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <utility>

#include "bonenet/checkpoint.hpp"
#include "bonenet/config.hpp"
#include "bonenet/train.hpp"
#include "support/expect_error.hpp"
#include "support/oracle.hpp"

using namespace bonenet;
using testing_support::code_of;
using testing_support::random_tensor;
using testing_support::TempDir;

namespace {

ModelConfig tiny_model() {
  ModelConfig c;
  c.input_size = 32;
  c.block_channels = {4, 8, 8, 8, 8};
  c.convs_per_block = 1;
  c.n_units = 8;
  c.head_dims = {16, 8};
  c.dropout_rate = 0.0;
  return c;
}

// Small generated dataset shared by the tests below.
const Manifest& tiny_manifest() {
  static TempDir dir("training");
  static Manifest m = [] {
    GenParams p;
    p.n = 24;
    p.seed = 5;
    return generate(p, dir.path());
  }();
  return m;
}

double loss_value(const std::vector<double>& pred, const std::vector<double>& target, LossKind kind) {
  Graph g;
  const NodeId p = g.input(Tensor({pred.size(), 1}, pred));
  const NodeId t = g.input(Tensor({target.size(), 1}, target));
  return g.value(loss(g, p, t, kind)).item();
}

}  // namespace

TEST(Loss, Values) {
  EXPECT_EQ(loss_value({10, 20}, {10, 22}, LossKind::L1), 1.0);
  EXPECT_EQ(loss_value({1}, {3}, LossKind::L2), 4.0);
  Graph g;
  const NodeId p = g.input(Tensor({2, 1}, {1, 2}));
  const NodeId t = g.input(Tensor({1, 2}, {1, 2}));
  EXPECT_EQ(code_of([&] { loss(g, p, t, LossKind::L1); }), ErrorCode::ShapeMismatch);
}

TEST(Loss, L1Subgradient) {
  Graph g;
  const NodeId p = g.input(Tensor({4, 1}, {1, 5, 3, 0}), true);
  const NodeId t = g.input(Tensor({4, 1}, {2, 2, 3, 0}));
  const Tensor grad = g.backward(loss(g, p, t, LossKind::L1)).at(p);
  EXPECT_EQ(grad.storage(), (std::vector<double>{-0.25, 0.25, 0.0, 0.0}));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Parameter p{"p", Tensor::scalar(1.0)};
  const Tensor g = Tensor::scalar(1.0);
  const std::pair<Parameter*, const Tensor*> up[] = {{&p, &g}};
  AdamState state;
  adam_step(up, state, 0.1, AdamHyper{});
  EXPECT_DOUBLE_EQ(p.value.item(), 1.0 - 0.1 * 1.0 / (1.0 + 1e-8));
  EXPECT_EQ(state.t, 1u);
}

TEST(Adam, ZeroGradientNoChange) {
  Parameter p{"p", Tensor({3}, {1, 2, 3})};
  const Tensor g = Tensor::zeros({3});
  const std::pair<Parameter*, const Tensor*> up[] = {{&p, &g}};
  AdamState state;
  for (int i = 0; i < 5; ++i) adam_step(up, state, 0.1, AdamHyper{});
  EXPECT_EQ(p.value.storage(), (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(state.t, 5u);
}

TEST(Adam, ConstantGradientMovesMonotonically) {
  Parameter p{"p", Tensor({2}, {0.0, 0.0})};
  const Tensor g({2}, {0.7, -2.0});
  const std::pair<Parameter*, const Tensor*> up[] = {{&p, &g}};
  AdamState state;
  double prev0 = 0.0, prev1 = 0.0;
  for (int i = 0; i < 200; ++i) {
    adam_step(up, state, 1e-3, AdamHyper{});
    EXPECT_LT(p.value[0], prev0);
    EXPECT_GT(p.value[1], prev1);
    prev0 = p.value[0];
    prev1 = p.value[1];
  }
}

TEST(Plateau, SmallGainIsNotAnImprovement) {
  TrainConfig cfg;
  PlateauState s(cfg.lr0);
  s = plateau_step(s, 1.0, cfg);
  for (int i = 1; i <= 10; ++i) s = plateau_step(s, 1.0 - 0.5e-4 * i / 10.0, cfg);
  EXPECT_EQ(s.current_lr, 3e-4 * 0.8);
}

TEST(Plateau, ElevenEqualLossesAfterOne) {
  TrainConfig cfg;
  PlateauState s(cfg.lr0);
  s = plateau_step(s, 1.0, cfg);
  s = plateau_step(s, 0.9, cfg);  // improvement
  std::vector<double> trace;
  for (int i = 0; i < 10; ++i) {
    s = plateau_step(s, 0.9, cfg);
    trace.push_back(s.current_lr);
  }
  for (int i = 0; i < 9; ++i) EXPECT_EQ(trace[i], 3e-4) << i;
  EXPECT_EQ(trace[9], 3e-4 * 0.8);
}

TEST(Plateau, DecreasingLossesKeepRate) {
  TrainConfig cfg;
  PlateauState s(cfg.lr0);
  for (int i = 0; i < 100; ++i) s = plateau_step(s, 100.0 - i, cfg);
  EXPECT_EQ(s.current_lr, 3e-4);
}

TEST(Plateau, FloorAndInvalidMetric) {
  TrainConfig cfg;
  PlateauState s(1e-7);
  s = plateau_step(s, 1.0, cfg);
  for (int i = 0; i < 50; ++i) s = plateau_step(s, 1.0, cfg);
  EXPECT_EQ(s.current_lr, 1e-7);
  EXPECT_EQ(code_of([&] { plateau_step(s, std::nan(""), cfg); }), ErrorCode::InvalidMetric);
}

TEST(Evaluate, ReportArithmetic) {
  Dataset d;
  d.target_size = 32;
  d.ids = {0, 1, 2};
  d.ages = {10, 30, 50};
  d.genders = {Gender::Female, Gender::Male, Gender::Female};
  d.images.resize(3);
  EXPECT_EQ(report_from_predictions({10, 30, 50}, d, GroupBy::None).mae, 0.0);
  const EvalReport r = report_from_predictions({20, 20, 20}, d, GroupBy::Gender);
  EXPECT_DOUBLE_EQ(r.mae, (10.0 + 10.0 + 30.0) / 3.0);
  EXPECT_DOUBLE_EQ(r.groups.at("F").mae, 20.0);
  EXPECT_DOUBLE_EQ(r.groups.at("M").mae, 10.0);
  const double recombined = (r.groups.at("F").mae * 2 + r.groups.at("M").mae * 1) / 3.0;
  EXPECT_DOUBLE_EQ(recombined, r.mae);

  d.genders = {Gender::Female, Gender::Female, Gender::Female};
  EXPECT_EQ(report_from_predictions({0, 0, 0}, d, GroupBy::Gender).groups.count("M"), 0u);
}

TEST(Train, RejectsBadInputs) {
  const Dataset data = Dataset::from_manifest(tiny_manifest(), 32, Region::Full);
  Model m = Model::build(tiny_model(), 1);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 64;
  EXPECT_EQ(code_of([&] { train(m, data, data, cfg); }), ErrorCode::InvalidConfig);
  cfg.batch_size = 8;
  EXPECT_EQ(code_of([&] { train(m, Dataset{}, data, cfg); }), ErrorCode::EmptyDataset);
  cfg.lr0 = 1e300;
  // A huge rate overflows the weights within a few steps.
  cfg.epochs = 20;
  EXPECT_EQ(code_of([&] { train(m, data, data, cfg); }), ErrorCode::DivergedTraining);
}

TEST(Train, LossDescendsAndTraceIsSane) {
  const Dataset data = Dataset::from_manifest(tiny_manifest(), 32, Region::Full);
  Model m = Model::build(tiny_model(), 2);
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.batch_size = 4;
  cfg.augment = false;
  cfg.lr0 = 3e-3;
  cfg.patience = 3;
  const TrainResult r = train(m, data, data, cfg);
  ASSERT_EQ(r.history.size(), 40u);
  EXPECT_LT(r.history.back().train_loss, 0.5 * r.history.front().train_loss);
  for (std::size_t i = 1; i < r.history.size(); ++i) {
    const double prev = r.history[i - 1].lr, cur = r.history[i].lr;
    EXPECT_TRUE(cur == prev || cur == std::max(prev * 0.8, 1e-7)) << i;
  }
  EXPECT_EQ(r.adam_steps, 40u * 6u);
  // The model holds the best epoch's parameters.
  EXPECT_DOUBLE_EQ(evaluate(m, data).mae, r.best_val_mae);
}

TEST(Train, IdenticalSeedsAreBitwiseReproducible) {
  const Dataset data = Dataset::from_manifest(tiny_manifest(), 32, Region::Full);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  auto run = [&] {
    ModelConfig mc = tiny_model();
    mc.dropout_rate = 0.5;
    Model m = Model::build(mc, 3);
    const TrainResult r = train(m, data, data, cfg);
    std::vector<Tensor> values;
    for (auto* p : m.parameters()) values.push_back(p->value);
    return std::make_pair(history_csv(r.history), values);
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Train, FullyFrozenBackboneKeepsInitialValues) {
  const Dataset data = Dataset::from_manifest(tiny_manifest(), 32, Region::Full);
  Model m = Model::build(tiny_model(), 4);
  m.freeze_blocks(5);
  std::map<std::string, Tensor> before;
  for (auto* p : m.parameters()) before[p->name] = p->value;
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  train(m, data, data, cfg);
  for (auto* p : m.parameters()) {
    if (p->name.rfind("block", 0) == 0)
      EXPECT_EQ(p->value, before[p->name]) << p->name;
    else if (p->name.find("weight") != std::string::npos)
      EXPECT_NE(p->value, before[p->name]) << p->name;
  }
}

TEST(History, CsvFormat) {
  const std::string csv = history_csv({{1, 12.5, 10.0, 3e-4}, {2, 1.0 / 3.0, 2.0, 2.4e-4}});
  EXPECT_EQ(csv, "epoch,train_loss,val_mae,lr\n1,12.5,10,0.0003\n2,0.333333333,2,0.00024\n");
}

TEST(Checkpoint, RoundTripReproducesEvalOutputs) {
  TempDir dir("ckpt");
  Model m = Model::build(tiny_model(), 5);
  round_to_f32(m.parameters());
  const Fingerprint fp = config_fingerprint(m.config(), TrainConfig{});
  write_checkpoint(dir / "m.ckpt", fp, std::as_const(m).parameters(), "{\"k\":1}");
  EXPECT_TRUE(is_checkpoint_file(dir / "m.ckpt"));

  const Checkpoint c = read_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(c.fingerprint, fp);
  EXPECT_EQ(c.meta_json, "{\"k\":1}");
  Model fresh = Model::build(tiny_model(), 99);
  load_parameters(c, fresh.parameters());

  const Tensor x = random_tensor({3, 1, 32, 32}, 7);
  Graph g1, g2;
  EXPECT_EQ(g1.value(m.forward(g1, g1.input(x), Mode::Eval)), g2.value(fresh.forward(g2, g2.input(x), Mode::Eval)));
}

TEST(Checkpoint, LayoutHeader) {
  TempDir dir("ckpt_layout");
  Parameter p{"w", Tensor({2}, {1.5, -2.0})};
  Fingerprint fp{};
  fp[0] = 0xab;
  write_checkpoint(dir / "x.ckpt", fp, {&p}, "");
  std::ifstream in(dir / "x.ckpt", std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
  ASSERT_GE(bytes.size(), 8u + 2 + 32 + 4);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "BAACKPT1");
  EXPECT_EQ(bytes[8], 1);
  EXPECT_EQ(bytes[9], 0);
  EXPECT_EQ(bytes[10], 0xab);
  EXPECT_EQ(bytes[42], 1);  // count, little-endian
  EXPECT_EQ(bytes[46], 1);  // name length
  EXPECT_EQ(bytes[48], 'w');
  EXPECT_EQ(bytes[49], 1);  // rank
  // magic + version + fp + count + name record + rank + dim + 2 floats + meta length
  EXPECT_EQ(bytes.size(), 8u + 2 + 32 + 4 + (2 + 1) + 1 + 4 + 8 + 4);
}

TEST(Checkpoint, Corruption) {
  TempDir dir("ckpt_bad");
  Parameter p{"w", Tensor({3}, {1, 2, 3})};
  write_checkpoint(dir / "ok.ckpt", Fingerprint{}, {&p}, "{}");
  std::ifstream in(dir / "ok.ckpt", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});

  auto write = [&](const std::string& name, const std::string& data) {
    std::ofstream(dir / name, std::ios::binary) << data;
    return dir / name;
  };
  EXPECT_EQ(code_of([&] { read_checkpoint(write("magic.ckpt", "XAACKPT1" + bytes.substr(8))); }),
            ErrorCode::FormatError);
  EXPECT_EQ(code_of([&] { read_checkpoint(write("short.ckpt", bytes.substr(0, bytes.size() - 5))); }),
            ErrorCode::FormatError);
  EXPECT_EQ(code_of([&] { read_checkpoint(write("long.ckpt", bytes + "x")); }), ErrorCode::FormatError);
  EXPECT_EQ(code_of([&] { read_checkpoint(dir / "missing.ckpt"); }), ErrorCode::IoError);

  Parameter other{"v", Tensor({3}, 0.0)};
  EXPECT_EQ(code_of([&] { load_parameters(read_checkpoint(dir / "ok.ckpt"), {&other}); }), ErrorCode::FormatError);
  Parameter wrong_shape{"w", Tensor({4}, 0.0)};
  EXPECT_EQ(code_of([&] { load_parameters(read_checkpoint(dir / "ok.ckpt"), {&wrong_shape}); }),
            ErrorCode::FormatError);
}
