#include "bonenet/layers.hpp"

#include <cmath>
#include <limits>

#include "bonenet/error.hpp"
#include "bonenet/rng.hpp"
#include "kernels.hpp"

namespace bonenet {

namespace {

struct ConvGeom {
  std::size_t C, H, W, kh, kw, stride, pad, Ho, Wo;
};

void im2col(const double* x, const ConvGeom& s, double* col) {
  const std::size_t hw = s.Ho * s.Wo;
  for (std::size_t c = 0; c < s.C; ++c)
    for (std::size_t ky = 0; ky < s.kh; ++ky)
      for (std::size_t kx = 0; kx < s.kw; ++kx) {
        double* row = col + ((c * s.kh + ky) * s.kw + kx) * hw;
        for (std::size_t oy = 0; oy < s.Ho; ++oy) {
          const long iy = static_cast<long>(oy * s.stride + ky) - static_cast<long>(s.pad);
          double* dst = row + oy * s.Wo;
          if (iy < 0 || iy >= static_cast<long>(s.H)) {
            std::fill_n(dst, s.Wo, 0.0);
            continue;
          }
          const double* src = x + (c * s.H + static_cast<std::size_t>(iy)) * s.W;
          for (std::size_t ox = 0; ox < s.Wo; ++ox) {
            const long ix = static_cast<long>(ox * s.stride + kx) - static_cast<long>(s.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(s.W)) ? 0.0 : src[ix];
          }
        }
      }
}

void col2im(const double* col, const ConvGeom& s, double* x) {
  const std::size_t hw = s.Ho * s.Wo;
  for (std::size_t c = 0; c < s.C; ++c)
    for (std::size_t ky = 0; ky < s.kh; ++ky)
      for (std::size_t kx = 0; kx < s.kw; ++kx) {
        const double* row = col + ((c * s.kh + ky) * s.kw + kx) * hw;
        for (std::size_t oy = 0; oy < s.Ho; ++oy) {
          const long iy = static_cast<long>(oy * s.stride + ky) - static_cast<long>(s.pad);
          if (iy < 0 || iy >= static_cast<long>(s.H)) continue;
          double* dst = x + (c * s.H + static_cast<std::size_t>(iy)) * s.W;
          const double* src = row + oy * s.Wo;
          for (std::size_t ox = 0; ox < s.Wo; ++ox) {
            const long ix = static_cast<long>(ox * s.stride + kx) - static_cast<long>(s.pad);
            if (ix >= 0 && ix < static_cast<long>(s.W)) dst[ix] += src[ox];
          }
        }
      }
}

}  // namespace

namespace ops {

NodeId conv2d(Graph& g, NodeId x, NodeId weight, std::optional<NodeId> bias, std::size_t stride,
              std::size_t padding) {
  const Shape& xs = g.shape(x);
  const Shape& ws = g.shape(weight);
  if (xs.size() != 4 || ws.size() != 4)
    throw Error(ErrorCode::ShapeMismatch, "conv2d expects rank-4 input and weight");
  if (xs[1] != ws[1])
    throw Error(ErrorCode::ShapeMismatch,
                "conv2d channel mismatch: input " + shape_str(xs) + ", weight " + shape_str(ws));
  if (stride == 0) throw Error(ErrorCode::ShapeMismatch, "conv2d stride must be positive");
  const std::size_t B = xs[0], O = ws[0];
  ConvGeom s{xs[1], xs[2], xs[3], ws[2], ws[3], stride, padding, 0, 0};
  const std::size_t span_h = s.H + 2 * padding, span_w = s.W + 2 * padding;
  if (span_h < s.kh || span_w < s.kw || (span_h - s.kh) % stride != 0 || (span_w - s.kw) % stride != 0)
    throw Error(ErrorCode::ShapeMismatch, "conv2d output size is not integral for input " + shape_str(xs));
  s.Ho = (span_h - s.kh) / stride + 1;
  s.Wo = (span_w - s.kw) / stride + 1;
  if (bias && g.shape(*bias) != Shape{O}) throw Error(ErrorCode::ShapeMismatch, "conv2d bias shape");

  const std::size_t ckk = s.C * s.kh * s.kw, hw = s.Ho * s.Wo;
  Tensor out({B, O, s.Ho, s.Wo});
  std::vector<double> col(ckk * hw);
  const double* w = g.value(weight).ptr();
  for (std::size_t b = 0; b < B; ++b) {
    im2col(g.value(x).ptr() + b * s.C * s.H * s.W, s, col.data());
    double* ob = out.ptr() + b * O * hw;
    if (bias) {
      const Tensor& bv = g.value(*bias);
      for (std::size_t o = 0; o < O; ++o) std::fill_n(ob + o * hw, hw, bv[o]);
    }
    kernels::gemm_nn(O, hw, ckk, w, col.data(), ob);
  }

  std::vector<NodeId> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return g.record(std::move(out), std::move(inputs), [s, B, O, ckk, hw](const BackwardArgs& args) {
    const Tensor& xv = args.graph.value(args.inputs[0]);
    const Tensor& wv = args.graph.value(args.inputs[1]);
    Tensor* gx = args.grad_inputs[0];
    Tensor* gw = args.grad_inputs[1];
    Tensor* gb = args.grad_inputs.size() > 2 ? args.grad_inputs[2] : nullptr;
    std::vector<double> col(ckk * hw);
    for (std::size_t b = 0; b < B; ++b) {
      const double* gob = args.grad_output.ptr() + b * O * hw;
      if (gw) {
        im2col(xv.ptr() + b * s.C * s.H * s.W, s, col.data());
        kernels::gemm_nt(O, ckk, hw, gob, col.data(), gw->ptr());
      }
      if (gb)
        for (std::size_t o = 0; o < O; ++o) {
          double acc = 0.0;
          for (std::size_t i = 0; i < hw; ++i) acc += gob[o * hw + i];
          (*gb)[o] += acc;
        }
      if (gx) {
        std::fill(col.begin(), col.end(), 0.0);
        kernels::gemm_tn(ckk, hw, O, wv.ptr(), gob, col.data());
        col2im(col.data(), s, gx->ptr() + b * s.C * s.H * s.W);
      }
    }
  });
}

NodeId maxpool2d(Graph& g, NodeId x, std::size_t window, std::size_t stride) {
  const Shape& xs = g.shape(x);
  if (xs.size() != 4) throw Error(ErrorCode::ShapeMismatch, "maxpool2d expects rank-4 input");
  if (window == 0 || stride == 0) throw Error(ErrorCode::ShapeMismatch, "maxpool2d window/stride must be positive");
  const std::size_t B = xs[0], C = xs[1], H = xs[2], W = xs[3];
  if (window > H || window > W)
    throw Error(ErrorCode::ShapeMismatch, "maxpool2d window exceeds input " + shape_str(xs));
  if ((H - window) % stride != 0 || (W - window) % stride != 0)
    throw Error(ErrorCode::ShapeMismatch, "maxpool2d output size is not integral for " + shape_str(xs));
  const std::size_t Ho = (H - window) / stride + 1, Wo = (W - window) / stride + 1;

  Tensor out({B, C, Ho, Wo});
  std::vector<std::size_t> argmax(out.size());
  const Tensor& xv = g.value(x);
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const double* plane = xv.ptr() + bc * H * W;
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        std::size_t best = (oy * stride) * W + ox * stride;
        for (std::size_t ky = 0; ky < window; ++ky)
          for (std::size_t kx = 0; kx < window; ++kx) {
            const std::size_t idx = (oy * stride + ky) * W + ox * stride + kx;
            if (plane[idx] > plane[best]) best = idx;
          }
        const std::size_t o = (bc * Ho + oy) * Wo + ox;
        out[o] = plane[best];
        argmax[o] = bc * H * W + best;
      }
  }
  return g.record(std::move(out), {x}, [argmax = std::move(argmax)](const BackwardArgs& args) {
    Tensor& gx = *args.grad_inputs[0];
    for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += args.grad_output[o];
  });
}

NodeId global_avg_pool(Graph& g, NodeId x) {
  const Shape& xs = g.shape(x);
  if (xs.size() != 4) throw Error(ErrorCode::ShapeMismatch, "global_avg_pool expects rank-4 input");
  const std::size_t BC = xs[0] * xs[1], hw = xs[2] * xs[3];
  Tensor out({xs[0], xs[1]});
  const Tensor& xv = g.value(x);
  for (std::size_t i = 0; i < BC; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < hw; ++j) s += xv[i * hw + j];
    out[i] = s / static_cast<double>(hw);
  }
  return g.record(std::move(out), {x}, [BC, hw](const BackwardArgs& args) {
    Tensor& gx = *args.grad_inputs[0];
    for (std::size_t i = 0; i < BC; ++i) {
      const double share = args.grad_output[i] / static_cast<double>(hw);
      for (std::size_t j = 0; j < hw; ++j) gx[i * hw + j] += share;
    }
  });
}

NodeId linear(Graph& g, NodeId x, NodeId weight, NodeId bias) {
  const Shape& xs = g.shape(x);
  const Shape& ws = g.shape(weight);
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1] || g.shape(bias) != Shape{ws[0]})
    throw Error(ErrorCode::ShapeMismatch, "linear: input " + shape_str(xs) + ", weight " + shape_str(ws) +
                                              ", bias " + shape_str(g.shape(bias)));
  const std::size_t B = xs[0], in = xs[1], out_dim = ws[0];
  Tensor out({B, out_dim});
  const Tensor& bv = g.value(bias);
  for (std::size_t b = 0; b < B; ++b) std::copy_n(bv.ptr(), out_dim, out.ptr() + b * out_dim);
  kernels::gemm_nt(B, out_dim, in, g.value(x).ptr(), g.value(weight).ptr(), out.ptr());
  return g.record(std::move(out), {x, weight, bias}, [B, in, out_dim](const BackwardArgs& args) {
    const Tensor& go = args.grad_output;
    if (auto* gx = args.grad_inputs[0])
      kernels::gemm_nn(B, in, out_dim, go.ptr(), args.graph.value(args.inputs[1]).ptr(), gx->ptr());
    if (auto* gw = args.grad_inputs[1])
      kernels::gemm_tn(out_dim, in, B, go.ptr(), args.graph.value(args.inputs[0]).ptr(), gw->ptr());
    if (auto* gb = args.grad_inputs[2])
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < out_dim; ++o) (*gb)[o] += go[b * out_dim + o];
  });
}

NodeId batchnorm(Graph& g, NodeId x, NodeId gamma, NodeId beta, Tensor* running_mean, Tensor* running_var,
                 double momentum, double eps, Mode mode) {
  const Shape& xs = g.shape(x);
  if (xs.size() != 4) throw Error(ErrorCode::ShapeMismatch, "batchnorm expects rank-4 input");
  const std::size_t B = xs[0], C = xs[1], hw = xs[2] * xs[3];
  if (g.shape(gamma) != Shape{C} || g.shape(beta) != Shape{C})
    throw Error(ErrorCode::ShapeMismatch, "batchnorm affine parameters must have shape [C]");
  if (mode == Mode::Train && B < 2)
    throw Error(ErrorCode::DegenerateBatch, "train-mode batch norm needs at least 2 samples");
  if (mode == Mode::Eval && (!running_mean || !running_var))
    throw Error(ErrorCode::InvalidConfig, "eval-mode batch norm needs running statistics");

  const Tensor& xv = g.value(x);
  const Tensor& gv = g.value(gamma);
  const Tensor& bv = g.value(beta);
  const double n = static_cast<double>(B * hw);
  std::vector<double> mean(C), inv_std(C);
  for (std::size_t c = 0; c < C; ++c) {
    if (mode == Mode::Train) {
      double s = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < hw; ++i) s += xv[(b * C + c) * hw + i];
      const double m = s / n;
      double v = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = xv[(b * C + c) * hw + i] - m;
          v += d * d;
        }
      v /= n;
      mean[c] = m;
      inv_std[c] = 1.0 / std::sqrt(v + eps);
      if (running_mean && running_var) {
        (*running_mean)[c] = (1.0 - momentum) * (*running_mean)[c] + momentum * m;
        (*running_var)[c] = (1.0 - momentum) * (*running_var)[c] + momentum * v;
      }
    } else {
      mean[c] = (*running_mean)[c];
      inv_std[c] = 1.0 / std::sqrt((*running_var)[c] + eps);
    }
  }

  Tensor xhat(xs);
  Tensor out(xs);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < hw; ++i) {
        const std::size_t k = (b * C + c) * hw + i;
        xhat[k] = (xv[k] - mean[c]) * inv_std[c];
        out[k] = gv[c] * xhat[k] + bv[c];
      }

  const bool batch_stats = mode == Mode::Train;
  return g.record(std::move(out), {x, gamma, beta},
                  [B, C, hw, n, batch_stats, inv_std = std::move(inv_std),
                   xhat = std::move(xhat)](const BackwardArgs& args) {
                    const Tensor& go = args.grad_output;
                    const Tensor& gv = args.graph.value(args.inputs[1]);
                    Tensor* gx = args.grad_inputs[0];
                    Tensor* gg = args.grad_inputs[1];
                    Tensor* gbeta = args.grad_inputs[2];
                    for (std::size_t c = 0; c < C; ++c) {
                      double sum_dy = 0.0, sum_dy_xhat = 0.0;
                      for (std::size_t b = 0; b < B; ++b)
                        for (std::size_t i = 0; i < hw; ++i) {
                          const std::size_t k = (b * C + c) * hw + i;
                          sum_dy += go[k];
                          sum_dy_xhat += go[k] * xhat[k];
                        }
                      if (gg) (*gg)[c] += sum_dy_xhat;
                      if (gbeta) (*gbeta)[c] += sum_dy;
                      if (!gx) continue;
                      const double scale = gv[c] * inv_std[c];
                      for (std::size_t b = 0; b < B; ++b)
                        for (std::size_t i = 0; i < hw; ++i) {
                          const std::size_t k = (b * C + c) * hw + i;
                          if (batch_stats)
                            (*gx)[k] += scale * (go[k] - sum_dy / n - xhat[k] * sum_dy_xhat / n);
                          else
                            (*gx)[k] += scale * go[k];
                        }
                    }
                  });
}

NodeId dropout(Graph& g, NodeId x, double rate, Mode mode, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw Error(ErrorCode::InvalidRate, "dropout rate must lie in [0, 1), got " + std::to_string(rate));
  if (mode == Mode::Eval || rate == 0.0) return x;
  const Tensor& xv = g.value(x);
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor mask(xv.shape());
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    mask[i] = unit_double(rng()) < rate ? 0.0 : keep_scale;
    out[i] = xv[i] * mask[i];
  }
  return g.record(std::move(out), {x}, [mask = std::move(mask)](const BackwardArgs& args) {
    Tensor& gx = *args.grad_inputs[0];
    for (std::size_t i = 0; i < mask.size(); ++i) gx[i] += args.grad_output[i] * mask[i];
  });
}

}  // namespace ops

Conv2dLayer Conv2dLayer::make(const std::string& name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                              bool with_bias, std::uint64_t seed) {
  if (kernel % 2 == 0) throw Error(ErrorCode::InvalidConfig, "conv kernel must be odd");
  Conv2dLayer layer;
  layer.weight = {name + ".weight", Tensor::fan_in_gaussian({out_ch, in_ch, kernel, kernel}, seed)};
  if (with_bias) layer.bias = Parameter{name + ".bias", Tensor::zeros({out_ch})};
  layer.padding = (kernel - 1) / 2;
  return layer;
}

NodeId Conv2dLayer::forward(Graph& g, NodeId x) {
  const NodeId w = g.param(weight);
  std::optional<NodeId> b;
  if (bias) b = g.param(*bias);
  return ops::conv2d(g, x, w, b, stride, padding);
}

BatchNormLayer BatchNormLayer::make(const std::string& name, std::size_t channels) {
  BatchNormLayer layer;
  layer.gamma = {name + ".gamma", Tensor::constant({channels}, 1.0)};
  layer.beta = {name + ".beta", Tensor::zeros({channels})};
  layer.running_mean = {name + ".running_mean", Tensor::zeros({channels}), false, true};
  layer.running_var = {name + ".running_var", Tensor::constant({channels}, 1.0), false, true};
  return layer;
}

NodeId BatchNormLayer::forward(Graph& g, NodeId x, Mode mode) {
  const NodeId gm = g.param(gamma);
  const NodeId bt = g.param(beta);
  const Mode effective = frozen ? Mode::Eval : mode;
  return ops::batchnorm(g, x, gm, bt, &running_mean.value, &running_var.value, momentum, eps, effective);
}

DropoutLayer::DropoutLayer(double r, std::uint64_t seed) : rate(r), rng(seed) {
  if (!(r >= 0.0 && r < 1.0))
    throw Error(ErrorCode::InvalidRate, "dropout rate must lie in [0, 1), got " + std::to_string(r));
}

NodeId DropoutLayer::forward(Graph& g, NodeId x, Mode mode) { return ops::dropout(g, x, rate, mode, rng); }

LinearLayer LinearLayer::make(const std::string& name, std::size_t in, std::size_t out, std::uint64_t seed) {
  return {{name + ".weight", Tensor::fan_in_gaussian({out, in}, seed)}, {name + ".bias", Tensor::zeros({out})}};
}

NodeId LinearLayer::forward(Graph& g, NodeId x) {
  const NodeId w = g.param(weight);
  const NodeId b = g.param(bias);
  return ops::linear(g, x, w, b);
}

}  // namespace bonenet
