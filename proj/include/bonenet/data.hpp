#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "bonenet/layers.hpp"
#include "bonenet/tensor.hpp"

namespace bonenet {

enum class Gender { Female, Male };
enum class Region { Full, Upper, Lower };

const char* to_string(Gender g) noexcept;  // "F" / "M"
const char* to_string(Region r) noexcept;  // "full" / "upper" / "lower"
Gender parse_gender(const std::string& s);
Region parse_region(const std::string& s);

/// 8-bit grayscale raster.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  bool operator==(const Image&) const = default;
};

/// Binary PGM (P5, maxval 255) only.
Image load_pgm(const std::filesystem::path& path);
void save_pgm(const Image& image, const std::filesystem::path& path);

/// Top half (floor(h/2) rows), bottom half, or the whole image.
Image crop_region(const Image& image, Region region);

struct ManifestRow {
  int id = 0;
  std::string path;  // relative to the manifest's directory
  double age_years = 0.0;
  Gender gender = Gender::Female;
};

struct Manifest {
  std::filesystem::path base_dir;
  std::vector<ManifestRow> rows;

  std::size_t count(Gender g) const;
  std::filesystem::path resolve(const ManifestRow& row) const { return base_dir / row.path; }
};

/// CSV `id,path,age_years,gender`, ages with 4 decimals.
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

struct GenParams {
  std::size_t n = 813;
  double female_fraction = 679.0 / 813.0;
  /// Mass on ages [0.67, 40), [40, 60], (60, 87].
  std::array<double, 3> band_weights{0.08487, 0.73432, 0.18081};
  std::size_t canvas_height = 192;
  std::size_t canvas_width = 64;
  std::uint64_t seed = 42;
  /// Share of the age-driven feature variation rendered in the top half.
  double upper_signal_weight = 0.8;
  /// Std of the additive per-pixel noise, in gray levels.
  double noise_std = 6.0;

  void validate() const;
  bool operator==(const GenParams&) const = default;
};

inline constexpr double kMinAge = 0.67;
inline constexpr double kMaxAge = 87.0;

/// Per-band sample counts (largest remainder), summing to n.
std::array<std::size_t, 3> band_counts(std::size_t n, const std::array<double, 3>& weights);

/// Renders one skeleton. Deterministic in (params, age, gender, sample_seed).
Image render_skeleton(const GenParams& params, double age_years, Gender gender, std::uint64_t sample_seed);

/// Writes `images/NNNNNN.pgm` and `manifest.csv` under out_dir.
Manifest generate(const GenParams& params, const std::filesystem::path& out_dir);

/// Seeded shuffle; train gets floor(n * train_fraction) rows.
std::pair<Manifest, Manifest> split(const Manifest& manifest, double train_fraction, std::uint64_t seed);

/// Zero-pads to a centered square, then bilinear-resizes to side x side.
Tensor letterbox_resize(const Image& image, std::size_t side);

struct CropDraw {
  std::size_t offset_y = 0;
  std::size_t offset_x = 0;
  bool flip = false;
};

inline constexpr std::size_t kAugmentMargin = 8;

CropDraw draw_crop(std::mt19937_64& rng, std::size_t margin = kAugmentMargin);

/// Crop (random + flip in train mode, centered in eval mode) of a
/// letterboxed image of side target+margin, then per-image standardization
/// with a std floor of 1e-6. Returns [1,target,target].
Tensor augment_resized(const Tensor& resized, std::size_t target, Mode mode, std::mt19937_64* rng);

/// Full pipeline from a raw image.
Tensor augment(const Image& image, std::size_t target, Mode mode, std::mt19937_64* rng);

/// In-memory training/evaluation set: letterboxed, resized images plus
/// labels.
struct Dataset {
  std::size_t target_size = 0;
  Region region = Region::Full;
  std::vector<int> ids;
  std::vector<Tensor> images;  // [target+margin, target+margin], gray levels
  std::vector<double> ages;
  std::vector<Gender> genders;

  std::size_t size() const noexcept { return ids.size(); }
  bool empty() const noexcept { return ids.empty(); }

  static Dataset from_manifest(const Manifest& manifest, std::size_t target_size, Region region);
  Dataset subset(const std::vector<std::size_t>& indices) const;
};

}  // namespace bonenet
