#include <gtest/gtest.h>

#include "bonenet/explain.hpp"
#include "support/expect_error.hpp"
#include "support/oracle.hpp"

using namespace bonenet;
using testing_support::code_of;
using testing_support::random_tensor;
using testing_support::TempDir;

namespace {

ModelConfig cam_config() {
  ModelConfig c;
  c.input_size = 32;
  c.block_channels = {3, 4, 5, 6, 6};
  c.convs_per_block = 1;
  c.n_units = 4;
  c.head_dims = {6, 5};
  return c;
}

Heatmap from_values(Tensor upsampled) {
  Heatmap h;
  h.values = upsampled;
  h.upsampled = std::move(upsampled);
  return h;
}

}  // namespace

TEST(GradCam, ZeroHeadGivesZeroMap) {
  Model m = Model::build(cam_config(), 1);
  m.find("head.fc3.weight")->value.fill(0.0);
  const Heatmap h = grad_cam(m, random_tensor({1, 1, 32, 32}, 2));
  for (double v : h.values.data()) EXPECT_EQ(v, 0.0);
  for (double v : h.upsampled.data()) EXPECT_EQ(v, 0.0);
  for (double a : h.channel_weights) EXPECT_EQ(a, 0.0);
  EXPECT_EQ(code_of([&] { region_mass(h, Region::Upper); }), ErrorCode::Undefined);
}

TEST(GradCam, Shapes) {
  Model m = Model::build(cam_config(), 1);
  const Heatmap h = grad_cam(m, random_tensor({1, 1, 32, 32}, 2));
  EXPECT_EQ(h.layer, "block4.pool");
  EXPECT_EQ(h.values.shape(), (Shape{2, 2}));
  EXPECT_EQ(h.upsampled.shape(), (Shape{32, 32}));
  EXPECT_EQ(h.channel_weights.size(), 6u);
  const Heatmap h3 = grad_cam(m, random_tensor({1, 1, 32, 32}, 2), "block3.pool");
  EXPECT_EQ(h3.values.shape(), (Shape{4, 4}));
  for (double v : h3.upsampled.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(GradCam, ChannelWeightsMatchFiniteDifferences) {
  // Shifting channel k of the activation uniformly by e changes the output
  // by e * sum_i dy/dA_k,i, so alpha_k = slope / (h * w).
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Model m = Model::build(cam_config(), seed);
    const Tensor x = random_tensor({1, 1, 32, 32}, seed + 10);
    const Heatmap h = grad_cam(m, x);
    const Shape tap = m.tap_shape("block4.pool");
    const std::size_t hw = tap[1] * tap[2];

    auto shifted = [&](std::size_t channel, double e) {
      Graph g;
      TapHook hook = [&](Graph& graph, const std::string& name, NodeId node) {
        if (name != "block4.pool") return node;
        Tensor shift = Tensor::zeros(graph.shape(node));
        for (std::size_t i = 0; i < hw; ++i) shift[channel * hw + i] = e;
        return ops::add(graph, node, graph.input(shift));
      };
      return g.value(m.forward(g, g.input(x), Mode::Eval, hook)).item();
    };
    const double eps = 1e-5;
    for (std::size_t k = 0; k < tap[0]; ++k) {
      const double fd = (shifted(k, eps) - shifted(k, -eps)) / (2 * eps) / static_cast<double>(hw);
      EXPECT_NEAR(h.channel_weights[k], fd, 1e-3 * std::max(1.0, std::abs(fd))) << "seed " << seed << " k " << k;
    }
  }
}

TEST(GradCam, Errors) {
  Model m = Model::build(cam_config(), 1);
  EXPECT_EQ(code_of([&] { grad_cam(m, random_tensor({1, 1, 32, 32}, 2), "block9.pool"); }), ErrorCode::UnknownLayer);
  EXPECT_EQ(code_of([&] { grad_cam(m, random_tensor({2, 1, 32, 32}, 2)); }), ErrorCode::ShapeMismatch);
}

TEST(RegionMass, Arithmetic) {
  EXPECT_DOUBLE_EQ(region_mass(from_values(Tensor({4, 4}, 1.0)), Region::Upper), 0.5);
  Tensor top = Tensor::zeros({4, 4});
  top[1] = 1.0;
  EXPECT_EQ(region_mass(from_values(top), Region::Upper), 1.0);
  EXPECT_EQ(region_mass(from_values(top), Region::Lower), 0.0);

  const Tensor r = random_tensor({6, 6}, 3, 0.0, 1.0);
  EXPECT_NEAR(region_mass(from_values(r), Region::Upper) + region_mass(from_values(r), Region::Lower), 1.0, 1e-12);
  EXPECT_EQ(code_of([&] { region_mass(from_values(r), Region::Full); }), ErrorCode::InvalidConfig);
}

TEST(Heatmap, ExportsScaledPgm) {
  TempDir dir("cam");
  Tensor u = Tensor::zeros({2, 2});
  u[0] = 1.0;
  u[3] = 0.5;
  export_heatmap(from_values(u), dir / "h.pgm");
  const Image img = load_pgm(dir / "h.pgm");
  EXPECT_EQ(img.pixels, (std::vector<std::uint8_t>{255, 0, 0, 128}));
}
