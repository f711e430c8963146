#include "bonenet/explain.hpp"

#include <algorithm>
#include <cmath>

#include "bonenet/error.hpp"

namespace bonenet {
namespace {

void max_normalize(Tensor& t) {
  double peak = 0.0;
  for (double v : t.data()) peak = std::max(peak, v);
  if (peak <= 0.0) return;
  for (double& v : t.data()) v /= peak;
}

// Half-pixel-centred bilinear resampling with edge clamping.
Tensor upsample_bilinear(const Tensor& src, std::size_t out_h, std::size_t out_w) {
  const std::size_t h = src.dim(0), w = src.dim(1);
  Tensor out({out_h, out_w});
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - static_cast<double>(x0);
      const double top = src[y0 * w + x0] * (1 - tx) + src[y0 * w + x1] * tx;
      const double bottom = src[y1 * w + x0] * (1 - tx) + src[y1 * w + x1] * tx;
      out[y * out_w + x] = top * (1 - ty) + bottom * ty;
    }
  }
  return out;
}

}  // namespace

Heatmap grad_cam(Model& model, const Tensor& image, const std::string& layer) {
  const Shape tap = model.tap_shape(layer);
  const std::size_t s = model.input_size();
  if (image.shape() != Shape{1, 1, s, s})
    throw Error(ErrorCode::ShapeMismatch, "grad_cam expects [1,1," + std::to_string(s) + "," +
                                              std::to_string(s) + "], got " + shape_str(image.shape()));

  Graph g;
  NodeId activation = 0;
  bool seen = false;
  TapHook hook = [&](Graph& graph, const std::string& name, NodeId node) {
    if (name != layer) return node;
    activation = graph.input(graph.value(node), true);
    seen = true;
    return activation;
  };
  const NodeId age = model.forward(g, g.input(image), Mode::Eval, hook);
  if (!seen) throw Error(ErrorCode::UnknownLayer, "layer never reached: " + layer);
  const auto grads = g.backward_all(age);

  const std::size_t k = tap[0], h = tap[1], w = tap[2], hw = h * w;
  const Tensor& a = g.value(activation);
  Tensor grad = grads[activation].size() ? grads[activation] : Tensor::zeros(a.shape());

  Heatmap out;
  out.layer = layer;
  out.channel_weights.assign(k, 0.0);
  out.values = Tensor::zeros({h, w});
  for (std::size_t c = 0; c < k; ++c) {
    double sum = 0.0;
    for (std::size_t i = 0; i < hw; ++i) sum += grad[c * hw + i];
    const double alpha = sum / static_cast<double>(hw);
    out.channel_weights[c] = alpha;
    for (std::size_t i = 0; i < hw; ++i) out.values[i] += alpha * a[c * hw + i];
  }
  for (double& v : out.values.data()) v = std::max(v, 0.0);
  max_normalize(out.values);
  out.upsampled = upsample_bilinear(out.values, s, s);
  max_normalize(out.upsampled);
  return out;
}

double region_mass(const Heatmap& heatmap, Region region) {
  if (region == Region::Full) throw Error(ErrorCode::InvalidConfig, "region mass needs upper or lower");
  const Tensor& u = heatmap.upsampled;
  const std::size_t rows = u.dim(0), cols = u.dim(1), half = rows / 2;
  double upper = 0.0, total = 0.0;
  for (std::size_t y = 0; y < rows; ++y)
    for (std::size_t x = 0; x < cols; ++x) {
      total += u[y * cols + x];
      if (y < half) upper += u[y * cols + x];
    }
  if (!(total > 0.0)) throw Error(ErrorCode::Undefined, "region mass of an all-zero heatmap");
  const double up = upper / total;
  return region == Region::Upper ? up : 1.0 - up;
}

Image heatmap_image(const Heatmap& heatmap) {
  const Tensor& u = heatmap.upsampled;
  Image img{u.dim(0), u.dim(1), std::vector<std::uint8_t>(u.size())};
  for (std::size_t i = 0; i < u.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(u[i], 0.0, 1.0) * 255.0));
  return img;
}

void export_heatmap(const Heatmap& heatmap, const std::filesystem::path& path) {
  save_pgm(heatmap_image(heatmap), path);
}

}  // namespace bonenet
