#include "bonenet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "bonenet/error.hpp"
#include "bonenet/rng.hpp"

namespace bonenet {

const char* to_string(Gender g) noexcept { return g == Gender::Female ? "F" : "M"; }

const char* to_string(Region r) noexcept {
  switch (r) {
    case Region::Full: return "full";
    case Region::Upper: return "upper";
    case Region::Lower: return "lower";
  }
  return "full";
}

Gender parse_gender(const std::string& s) {
  if (s == "F") return Gender::Female;
  if (s == "M") return Gender::Male;
  throw Error(ErrorCode::FormatError, "gender must be F or M, got '" + s + "'");
}

Region parse_region(const std::string& s) {
  if (s == "full") return Region::Full;
  if (s == "upper") return Region::Upper;
  if (s == "lower") return Region::Lower;
  throw Error(ErrorCode::InvalidConfig, "region must be full, upper or lower, got '" + s + "'");
}

Image crop_region(const Image& image, Region region) {
  if (region == Region::Full) return image;
  if (image.height < 2) throw Error(ErrorCode::InvalidShape, "crop_region needs at least 2 rows");
  const std::size_t half = image.height / 2;
  const std::size_t first = region == Region::Upper ? 0 : half;
  const std::size_t rows = region == Region::Upper ? half : image.height - half;
  Image out{rows, image.width, {}};
  out.pixels.assign(image.pixels.begin() + static_cast<std::ptrdiff_t>(first * image.width),
                    image.pixels.begin() + static_cast<std::ptrdiff_t>((first + rows) * image.width));
  return out;
}

// ---------------------------------------------------------------- manifest

std::size_t Manifest::count(Gender g) const {
  return static_cast<std::size_t>(
      std::count_if(rows.begin(), rows.end(), [g](const ManifestRow& r) { return r.gender == g; }));
}

namespace {

constexpr const char* kManifestHeader = "id,path,age_years,gender";

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string format_age(double age) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", age);
  return buf;
}

}  // namespace

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open manifest " + path.string());
  Manifest m;
  m.base_dir = path.parent_path();
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::FormatError, path.string() + ": empty manifest");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader) throw Error(ErrorCode::FormatError, path.string() + ": unexpected header '" + line + "'");
  std::set<int> ids;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = split_csv(line);
    if (f.size() != 4)
      throw Error(ErrorCode::FormatError, path.string() + ":" + std::to_string(lineno) + ": expected 4 fields");
    ManifestRow row;
    try {
      std::size_t used = 0;
      row.id = std::stoi(f[0], &used);
      if (used != f[0].size()) throw std::invalid_argument("id");
      row.age_years = std::stod(f[2], &used);
      if (used != f[2].size()) throw std::invalid_argument("age");
    } catch (const std::exception&) {
      throw Error(ErrorCode::FormatError, path.string() + ":" + std::to_string(lineno) + ": bad number");
    }
    row.path = f[1];
    row.gender = parse_gender(f[3]);
    if (!ids.insert(row.id).second)
      throw Error(ErrorCode::FormatError, path.string() + ": duplicate id " + f[0]);
    m.rows.push_back(std::move(row));
  }
  return m;
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write manifest " + path.string());
  out << kManifestHeader << '\n';
  for (const auto& r : manifest.rows)
    out << r.id << ',' << r.path << ',' << format_age(r.age_years) << ',' << to_string(r.gender) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

// --------------------------------------------------------------- generator

void GenParams::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
  if (n < 2) fail("generator needs n >= 2");
  if (!(female_fraction >= 0.0 && female_fraction <= 1.0)) fail("female_fraction must lie in [0, 1]");
  double s = 0.0;
  for (double w : band_weights) {
    if (!(w >= 0.0)) fail("band weights must be non-negative");
    s += w;
  }
  if (std::fabs(s - 1.0) > 1e-6) fail("band weights must sum to 1");
  if (canvas_height < 16 || canvas_width < 8) fail("canvas must be at least 16x8");
  if (!(upper_signal_weight > 0.0 && upper_signal_weight < 1.0)) fail("upper_signal_weight must lie in (0, 1)");
  if (!(noise_std >= 0.0)) fail("noise_std must be non-negative");
}

std::array<std::size_t, 3> band_counts(std::size_t n, const std::array<double, 3>& weights) {
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t used = 0;
  for (std::size_t b = 0; b < 3; ++b) {
    const double exact = weights[b] * static_cast<double>(n);
    counts[b] = static_cast<std::size_t>(std::floor(exact));
    rem[b] = exact - std::floor(exact);
    used += counts[b];
  }
  while (used < n) {
    const auto b = static_cast<std::size_t>(std::max_element(rem.begin(), rem.end()) - rem.begin());
    ++counts[b];
    rem[b] = -1.0;
    ++used;
  }
  return counts;
}

namespace {

// Canvas painter in the reference 64x192 frame; coordinates are mapped
// through the sample's placement jitter and the actual canvas scale.
class Painter {
 public:
  Painter(std::size_t h, std::size_t w, double scale, double shift_x, double shift_y)
      : h_(h), w_(w), sx_(static_cast<double>(w) / 64.0), sy_(static_cast<double>(h) / 192.0),
        scale_(scale), shift_x_(shift_x), shift_y_(shift_y), px_(h * w, 0.0) {}

  void ellipse(double cx, double cy, double rx, double ry, double value) {
    const double X = mapx(cx), Y = mapy(cy), RX = rx * scale_ * sx_, RY = ry * scale_ * sy_;
    const double soft = std::min(RX, RY);
    for_box(X - RX - 1, X + RX + 1, Y - RY - 1, Y + RY + 1, [&](double x, double y) {
      const double d = std::hypot((x - X) / RX, (y - Y) / RY);
      return std::clamp((1.0 - d) * soft + 0.5, 0.0, 1.0);
    }, value);
  }

  void line(double x0, double y0, double x1, double y1, double thickness, double value) {
    const double X0 = mapx(x0), Y0 = mapy(y0), X1 = mapx(x1), Y1 = mapy(y1);
    const double half = 0.5 * thickness * scale_ * std::min(sx_, sy_);
    const double dx = X1 - X0, dy = Y1 - Y0, len2 = dx * dx + dy * dy;
    for_box(std::min(X0, X1) - half - 1, std::max(X0, X1) + half + 1, std::min(Y0, Y1) - half - 1,
            std::max(Y0, Y1) + half + 1,
            [&](double x, double y) {
              double t = len2 > 0 ? ((x - X0) * dx + (y - Y0) * dy) / len2 : 0.0;
              t = std::clamp(t, 0.0, 1.0);
              const double d = std::hypot(x - (X0 + t * dx), y - (Y0 + t * dy));
              return std::clamp(half - d + 0.5, 0.0, 1.0);
            },
            value);
  }

  Image finish(double noise_std, std::mt19937_64& rng) {
    std::normal_distribution<double> noise(0.0, noise_std > 0 ? noise_std : 1.0);
    Image img{h_, w_, std::vector<std::uint8_t>(h_ * w_)};
    for (std::size_t i = 0; i < px_.size(); ++i) {
      const double v = px_[i] + (noise_std > 0 ? noise(rng) : 0.0);
      img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
    }
    return img;
  }

 private:
  double mapx(double x) const { return ((x - 32.0) * scale_ + 32.0 + shift_x_) * sx_; }
  double mapy(double y) const { return ((y - 96.0) * scale_ + 96.0 + shift_y_) * sy_; }

  template <class Coverage>
  void for_box(double x0, double x1, double y0, double y1, Coverage cov, double value) {
    const long ylo = std::max(0L, static_cast<long>(std::floor(y0)));
    const long yhi = std::min(static_cast<long>(h_) - 1, static_cast<long>(std::ceil(y1)));
    const long xlo = std::max(0L, static_cast<long>(std::floor(x0)));
    const long xhi = std::min(static_cast<long>(w_) - 1, static_cast<long>(std::ceil(x1)));
    for (long y = ylo; y <= yhi; ++y)
      for (long x = xlo; x <= xhi; ++x) {
        const double c = cov(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5);
        if (c <= 0.0) continue;
        double& p = px_[static_cast<std::size_t>(y) * w_ + static_cast<std::size_t>(x)];
        if (value > p) p += (value - p) * c;
      }
  }

  std::size_t h_, w_;
  double sx_, sy_, scale_, shift_x_, shift_y_;
  std::vector<double> px_;
};

constexpr double kTissue = 45.0;
constexpr double kBoneBase = 225.0;
constexpr double kIntensitySpan = 150.0;
constexpr double kMaleBoneBoost = 18.0;

}  // namespace

Image render_skeleton(const GenParams& params, double age_years, Gender gender, std::uint64_t sample_seed) {
  std::mt19937_64 rng(sample_seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  std::normal_distribution<double> jitter(0.0, 1.0);

  const double t = std::clamp(age_years / kMaxAge, 0.0, 1.0);
  const double wu = params.upper_signal_weight;
  const double wl = 1.0 - wu;
  const bool male = gender == Gender::Male;

  // Placement nuisance.
  const double scale = 1.0 + 0.04 * unif(rng);
  const double shift_x = 2.0 * unif(rng);
  const double shift_y = 3.0 * unif(rng);

  // Age-driven features, each with its own age-independent nuisance.
  const double boost = male ? kMaleBoneBoost : 0.0;
  const double bone_upper = kBoneBase - kIntensitySpan * wu * t + boost + 5.0 * jitter(rng);
  const double bone_lower = kBoneBase - kIntensitySpan * wl * t + boost + 5.0 * jitter(rng);
  const double rib_gap = 5.0 + 8.0 * wu * t + 0.4 * jitter(rng);
  const double skull_ry = 16.0 * (1.25 - 0.6 * wu * t) * (male ? 1.06 : 1.0) + 0.4 * jitter(rng);
  const double femur_width = 3.0 + 10.0 * wl * t + 0.3 * jitter(rng);

  // Sexually dimorphic shape.
  const double shoulder_half = (male ? 23.0 : 17.0) + 0.8 * unif(rng);
  const double pelvis_half = (male ? 14.0 : 20.0) + 0.8 * unif(rng);

  Painter p(params.canvas_height, params.canvas_width, scale, shift_x, shift_y);

  const double skull_rx = 0.8 * skull_ry;
  const double skull_cy = 4.0 + skull_ry;
  const double skull_bottom = skull_cy + skull_ry;

  // Soft tissue silhouette.
  p.ellipse(32.0, skull_cy, skull_rx + 3.0, skull_ry + 3.0, kTissue);
  p.ellipse(32.0, 84.0, shoulder_half + 5.0, 44.0, kTissue);
  p.line(32.0 - 8.0, 112.0, 32.0 - 9.0, 186.0, 10.0, kTissue);
  p.line(32.0 + 8.0, 112.0, 32.0 + 9.0, 186.0, 10.0, kTissue);

  // Upper body: skull, clavicles, arms, ribs, thoracic spine.
  p.ellipse(32.0, skull_cy, skull_rx, skull_ry, 0.9 * bone_upper);
  const double shoulder_y = std::max(48.0, skull_bottom + 4.0);
  p.line(32.0 - shoulder_half, shoulder_y, 32.0 + shoulder_half, shoulder_y, 3.0, bone_upper);
  p.line(32.0 - shoulder_half, shoulder_y, 32.0 - shoulder_half - 3.0, 93.0, 3.0, bone_upper);
  p.line(32.0 + shoulder_half, shoulder_y, 32.0 + shoulder_half + 3.0, 93.0, 3.0, bone_upper);
  p.line(32.0, skull_bottom, 32.0, 95.0, 4.0, bone_upper);
  const double rib_top = shoulder_y + 5.0;
  for (int r = 0; r < 6; ++r) {
    const double y = rib_top + r * rib_gap;
    if (y > 92.0) break;
    const double half = shoulder_half - 3.0 - 0.8 * r;
    p.line(32.0 - half, y + 3.0, 32.0, y, 2.0, bone_upper);
    p.line(32.0, y, 32.0 + half, y + 3.0, 2.0, bone_upper);
  }

  // Lower body: lumbar spine, pelvis, legs.
  p.line(32.0, 97.0, 32.0, 106.0, 4.0, bone_lower);
  p.ellipse(32.0, 112.0, pelvis_half, 7.0, bone_lower);
  p.ellipse(32.0, 112.0, pelvis_half - 4.0, 3.5, kTissue);
  for (double side : {-1.0, 1.0}) {
    p.line(32.0 + side * 8.0, 118.0, 32.0 + side * 9.0, 150.0, femur_width, bone_lower);
    p.line(32.0 + side * 9.0, 152.0, 32.0 + side * 9.0, 186.0, 0.8 * femur_width, bone_lower);
  }

  return p.finish(params.noise_std, rng);
}

Manifest generate(const GenParams& params, const std::filesystem::path& out_dir) {
  params.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + (out_dir / "images").string() + ": " + ec.message());

  const std::size_t n = params.n;
  const auto counts = band_counts(n, params.band_weights);
  const auto n_female = static_cast<std::size_t>(std::llround(params.female_fraction * static_cast<double>(n)));

  // Band and gender labels are assigned by seeded permutations so the
  // per-band and per-gender counts are exact.
  std::vector<int> band(n);
  std::size_t k = 0;
  for (int b = 0; b < 3; ++b)
    for (std::size_t i = 0; i < counts[static_cast<std::size_t>(b)]; ++i) band[k++] = b;
  std::vector<Gender> gender(n, Gender::Male);
  std::fill_n(gender.begin(), n_female, Gender::Female);
  std::mt19937_64 label_rng(derive_seed(params.seed, {0xba4d}));
  std::shuffle(band.begin(), band.end(), label_rng);
  std::shuffle(gender.begin(), gender.end(), label_rng);

  static constexpr double lo[3] = {kMinAge, 40.0, 60.0001};
  static constexpr double hi[3] = {39.9999, 60.0, kMaxAge};

  Manifest m;
  m.base_dir = out_dir;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t s = derive_seed(params.seed, {i});
    std::mt19937_64 rng(s);
    const int b = band[i];
    double age = lo[b] + (hi[b] - lo[b]) * unit_double(rng());
    age = std::round(age * 1e4) / 1e4;
    const Image img = render_skeleton(params, age, gender[i], derive_seed(s, {1}));
    char name[32];
    std::snprintf(name, sizeof name, "images/%06zu.pgm", i);
    save_pgm(img, out_dir / name);
    m.rows.push_back({static_cast<int>(i), name, age, gender[i]});
  }
  write_manifest(m, out_dir / "manifest.csv");
  return m;
}

std::pair<Manifest, Manifest> split(const Manifest& manifest, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw Error(ErrorCode::InvalidConfig, "train_fraction must lie in (0, 1)");
  const std::size_t n = manifest.rows.size();
  if (n < 2) throw Error(ErrorCode::TooFewSamples, "cannot split fewer than 2 samples");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, {0x5b11}));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * train_fraction));
  Manifest train{manifest.base_dir, {}}, test{manifest.base_dir, {}};
  for (std::size_t i = 0; i < n; ++i) (i < n_train ? train : test).rows.push_back(manifest.rows[order[i]]);
  return {std::move(train), std::move(test)};
}

// ------------------------------------------------------------ augmentation

Tensor letterbox_resize(const Image& image, std::size_t side) {
  if (image.height == 0 || image.width == 0 || side == 0) throw Error(ErrorCode::InvalidShape, "empty image");
  const std::size_t L = std::max(image.height, image.width);
  const std::size_t off_y = (L - image.height) / 2, off_x = (L - image.width) / 2;
  auto src = [&](long y, long x) -> double {
    const long iy = y - static_cast<long>(off_y), ix = x - static_cast<long>(off_x);
    if (iy < 0 || ix < 0 || iy >= static_cast<long>(image.height) || ix >= static_cast<long>(image.width)) return 0.0;
    return image.at(static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
  };
  const double ratio = static_cast<double>(L) / static_cast<double>(side);
  const double max_coord = static_cast<double>(L - 1);
  Tensor out({side, side});
  for (std::size_t y = 0; y < side; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * ratio - 0.5, 0.0, max_coord);
    const long y0 = static_cast<long>(fy);
    const long y1 = std::min(y0 + 1, static_cast<long>(L - 1));
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < side; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * ratio - 0.5, 0.0, max_coord);
      const long x0 = static_cast<long>(fx);
      const long x1 = std::min(x0 + 1, static_cast<long>(L - 1));
      const double wx = fx - static_cast<double>(x0);
      const double top = src(y0, x0) * (1.0 - wx) + src(y0, x1) * wx;
      const double bot = src(y1, x0) * (1.0 - wx) + src(y1, x1) * wx;
      out[y * side + x] = top * (1.0 - wy) + bot * wy;
    }
  }
  return out;
}

CropDraw draw_crop(std::mt19937_64& rng, std::size_t margin) {
  CropDraw d;
  d.offset_y = static_cast<std::size_t>(rng() % (margin + 1));
  d.offset_x = static_cast<std::size_t>(rng() % (margin + 1));
  d.flip = unit_double(rng()) < 0.5;
  return d;
}

Tensor augment_resized(const Tensor& resized, std::size_t target, Mode mode, std::mt19937_64* rng) {
  if (resized.rank() != 2 || resized.dim(0) != resized.dim(1) || resized.dim(0) < target)
    throw Error(ErrorCode::ShapeMismatch, "augment: resized image must be square and at least the target size");
  const std::size_t R = resized.dim(0);
  const std::size_t margin = R - target;
  CropDraw d{margin / 2, margin / 2, false};
  if (mode == Mode::Train) {
    if (!rng) throw Error(ErrorCode::InvalidConfig, "train-mode augmentation needs an rng");
    d = draw_crop(*rng, margin);
  }
  Tensor out({1, target, target});
  for (std::size_t y = 0; y < target; ++y)
    for (std::size_t x = 0; x < target; ++x) {
      const std::size_t sx = d.flip ? target - 1 - x : x;
      out[y * target + x] = resized[(y + d.offset_y) * R + sx + d.offset_x];
    }
  double mean = 0.0;
  for (double v : out.data()) mean += v;
  mean /= static_cast<double>(out.size());
  double var = 0.0;
  for (double v : out.data()) var += (v - mean) * (v - mean);
  const double sd = std::max(std::sqrt(var / static_cast<double>(out.size())), 1e-6);
  for (auto& v : out.data()) v = (v - mean) / sd;
  return out;
}

Tensor augment(const Image& image, std::size_t target, Mode mode, std::mt19937_64* rng) {
  return augment_resized(letterbox_resize(image, target + kAugmentMargin), target, mode, rng);
}

Dataset Dataset::from_manifest(const Manifest& manifest, std::size_t target_size, Region region) {
  Dataset d;
  d.target_size = target_size;
  d.region = region;
  for (const auto& row : manifest.rows) {
    const Image img = crop_region(load_pgm(manifest.resolve(row)), region);
    d.ids.push_back(row.id);
    d.images.push_back(letterbox_resize(img, target_size + kAugmentMargin));
    d.ages.push_back(row.age_years);
    d.genders.push_back(row.gender);
  }
  return d;
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset d;
  d.target_size = target_size;
  d.region = region;
  for (auto i : indices) {
    d.ids.push_back(ids.at(i));
    d.images.push_back(images.at(i));
    d.ages.push_back(ages.at(i));
    d.genders.push_back(genders.at(i));
  }
  return d;
}

}  // namespace bonenet
