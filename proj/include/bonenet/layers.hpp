#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "bonenet/autograd.hpp"

namespace bonenet {

enum class Mode { Train, Eval };

namespace ops {

/// Cross-correlation of x[B,C,H,W] with w[O,C,kh,kw]; bias[O] optional.
NodeId conv2d(Graph& g, NodeId x, NodeId weight, std::optional<NodeId> bias, std::size_t stride,
              std::size_t padding);

/// Window max; backward routes to the first maximal element in row-major
/// window order.
NodeId maxpool2d(Graph& g, NodeId x, std::size_t window, std::size_t stride);

/// Per-channel spatial mean: [B,C,H,W] -> [B,C].
NodeId global_avg_pool(Graph& g, NodeId x);

/// x[B,in] * W[out,in]^T + b[out].
NodeId linear(Graph& g, NodeId x, NodeId weight, NodeId bias);

/// Batch normalization over (B,H,W) per channel of x[B,C,H,W].
///
/// Train mode normalizes with biased batch statistics and, when running_mean
/// and running_var are given, blends them in with
/// running <- (1 - momentum) * running + momentum * batch.
/// Eval mode normalizes with the running statistics.
NodeId batchnorm(Graph& g, NodeId x, NodeId gamma, NodeId beta, Tensor* running_mean,
                 Tensor* running_var, double momentum, double eps, Mode mode);

/// Inverted dropout. Train mode zeroes each element with probability `rate`
/// and scales survivors by 1/(1-rate); eval mode returns x untouched and
/// does not touch the rng.
NodeId dropout(Graph& g, NodeId x, double rate, Mode mode, std::mt19937_64& rng);

}  // namespace ops

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// 3x3 "same" convolution by default. The backbone convs carry no bias since
/// batch norm follows each of them.
struct Conv2dLayer {
  Parameter weight;
  std::optional<Parameter> bias;
  std::size_t stride = 1;
  std::size_t padding = 1;

  static Conv2dLayer make(const std::string& name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                          bool with_bias, std::uint64_t seed);
  NodeId forward(Graph& g, NodeId x);
};

struct BatchNormLayer {
  Parameter gamma;
  Parameter beta;
  Parameter running_mean;
  Parameter running_var;
  double momentum = kBatchNormMomentum;
  double eps = kBatchNormEps;
  /// Frozen layers always normalize with running statistics and never
  /// update them.
  bool frozen = false;

  static BatchNormLayer make(const std::string& name, std::size_t channels);
  NodeId forward(Graph& g, NodeId x, Mode mode);
};

struct DropoutLayer {
  double rate = 0.5;
  std::mt19937_64 rng;

  DropoutLayer() = default;
  DropoutLayer(double r, std::uint64_t seed);
  NodeId forward(Graph& g, NodeId x, Mode mode);
};

struct LinearLayer {
  Parameter weight;  // [out, in]
  Parameter bias;    // [out]

  static LinearLayer make(const std::string& name, std::size_t in, std::size_t out, std::uint64_t seed);
  NodeId forward(Graph& g, NodeId x);
};

}  // namespace bonenet
