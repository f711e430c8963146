#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bonenet/data.hpp"
#include "bonenet/model.hpp"

namespace bonenet {

inline constexpr const char* kDefaultCamLayer = "block4.pool";

struct Heatmap {
  std::string layer;
  /// [h, w] at the layer's spatial resolution.
  Tensor values;
  /// [S, S] at input resolution.
  Tensor upsampled;
  /// d(age)/dA_k averaged over the layer's spatial positions.
  std::vector<double> channel_weights;
};

/// Grad-CAM of the scalar age output with respect to a named activation.
/// `image` is a single eval-mode input [1,1,S,S].
Heatmap grad_cam(Model& model, const Tensor& image, const std::string& layer = kDefaultCamLayer);

/// Share of the upsampled heatmap mass in the upper or lower half of the
/// rows. Throws Error(Undefined) for an all-zero map.
double region_mass(const Heatmap& heatmap, Region region);

/// Upsampled map scaled to 0..255.
Image heatmap_image(const Heatmap& heatmap);
void export_heatmap(const Heatmap& heatmap, const std::filesystem::path& path);

}  // namespace bonenet
