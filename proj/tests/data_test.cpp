#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "bonenet/data.hpp"
#include "support/expect_error.hpp"
#include "support/oracle.hpp"

using namespace bonenet;
using testing_support::code_of;
using testing_support::TempDir;

namespace {

Image ramp(std::size_t h, std::size_t w) {
  Image img{h, w, std::vector<std::uint8_t>(h * w)};
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i % 256);
  return img;
}

const Manifest& default_manifest() {
  static TempDir dir("data_default");
  static Manifest m = generate(GenParams{}, dir.path());
  return m;
}

}  // namespace

TEST(Pgm, RoundTrip) {
  TempDir dir("pgm");
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{1, 1}, {192, 64}, {3, 7}}) {
    const Image img = ramp(h, w);
    save_pgm(img, dir / "a.pgm");
    EXPECT_EQ(load_pgm(dir / "a.pgm"), img);
  }
}

TEST(Pgm, RejectsMalformedFiles) {
  TempDir dir("pgm_bad");
  std::ofstream(dir / "p2.pgm") << "P2\n2 1\n255\n0 1\n";
  EXPECT_EQ(code_of([&] { load_pgm(dir / "p2.pgm"); }), ErrorCode::FormatError);
  std::ofstream(dir / "short.pgm", std::ios::binary) << "P5\n4 4\n255\nabc";
  EXPECT_EQ(code_of([&] { load_pgm(dir / "short.pgm"); }), ErrorCode::FormatError);
  std::ofstream(dir / "maxval.pgm", std::ios::binary) << "P5\n1 1\n65535\nab";
  EXPECT_EQ(code_of([&] { load_pgm(dir / "maxval.pgm"); }), ErrorCode::FormatError);
  EXPECT_EQ(code_of([&] { load_pgm(dir / "none.pgm"); }), ErrorCode::IoError);
}

TEST(Pgm, CommentsInHeader) {
  TempDir dir("pgm_comment");
  std::ofstream(dir / "c.pgm", std::ios::binary) << "P5\n# made by hand\n2 1\n255\n" << '\x07' << '\xff';
  const Image img = load_pgm(dir / "c.pgm");
  EXPECT_EQ(img.width, 2u);
  EXPECT_EQ(img.pixels, (std::vector<std::uint8_t>{7, 255}));
}

TEST(Generator, DefaultCohortCounts) {
  const Manifest& m = default_manifest();
  ASSERT_EQ(m.rows.size(), 813u);
  EXPECT_EQ(m.count(Gender::Female), 679u);
  EXPECT_EQ(m.count(Gender::Male), 134u);

  std::array<int, 3> bands{};
  double lo = 1e9, hi = -1e9;
  for (const auto& r : m.rows) {
    lo = std::min(lo, r.age_years);
    hi = std::max(hi, r.age_years);
    ++bands[r.age_years < 40.0 ? 0 : r.age_years <= 60.0 ? 1 : 2];
  }
  EXPECT_NEAR(bands[0], 0.08487 * 813, 2.0);
  EXPECT_NEAR(bands[1], 0.73432 * 813, 2.0);
  EXPECT_NEAR(bands[2], 0.18081 * 813, 2.0);
  EXPECT_GE(lo, 8.0 / 12.0 - 1e-4);
  EXPECT_LE(hi, 87.0);
}

TEST(Generator, BandCountsSumToN) {
  for (std::size_t n : {1u, 2u, 7u, 100u, 813u, 1001u}) {
    const auto c = band_counts(n, GenParams{}.band_weights);
    EXPECT_EQ(c[0] + c[1] + c[2], n);
  }
}

TEST(Generator, ImagesMatchManifest) {
  const Manifest& m = default_manifest();
  for (std::size_t i : {0u, 400u, 812u}) {
    const Image img = load_pgm(m.resolve(m.rows[i]));
    EXPECT_EQ(img.height, 192u);
    EXPECT_EQ(img.width, 64u);
  }
  const Manifest reread = read_manifest(m.base_dir / "manifest.csv");
  ASSERT_EQ(reread.rows.size(), m.rows.size());
  EXPECT_EQ(reread.rows[17].age_years, m.rows[17].age_years);
  EXPECT_EQ(reread.rows[17].path, m.rows[17].path);
}

TEST(Generator, SameSeedSameBytes) {
  TempDir a("gen_a"), b("gen_b"), c("gen_c");
  GenParams p;
  p.n = 12;
  p.seed = 9;
  generate(p, a.path());
  generate(p, b.path());
  p.seed = 10;
  generate(p, c.path());
  auto bytes = [](const std::filesystem::path& f) {
    std::ifstream in(f, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), {});
  };
  EXPECT_EQ(bytes(a / "manifest.csv"), bytes(b / "manifest.csv"));
  EXPECT_EQ(bytes(a / "images/000005.pgm"), bytes(b / "images/000005.pgm"));
  EXPECT_NE(bytes(a / "manifest.csv"), bytes(c / "manifest.csv"));
}

TEST(Generator, InvalidParams) {
  TempDir dir("gen_bad");
  GenParams p;
  p.band_weights = {0.5, 0.5, 0.5};
  EXPECT_EQ(code_of([&] { generate(p, dir.path()); }), ErrorCode::InvalidConfig);
  p = GenParams{};
  p.n = 1;
  EXPECT_EQ(code_of([&] { generate(p, dir.path()); }), ErrorCode::InvalidConfig);
}

TEST(Split, SizesAndPartition) {
  const Manifest& m = default_manifest();
  const auto [train, test] = split(m, 0.7, 42);
  EXPECT_EQ(train.rows.size(), 569u);
  EXPECT_EQ(test.rows.size(), 244u);
  std::set<int> ids;
  for (const auto& r : train.rows) ids.insert(r.id);
  for (const auto& r : test.rows) EXPECT_TRUE(ids.insert(r.id).second);
  EXPECT_EQ(ids.size(), 813u);

  Manifest ten;
  ten.rows.assign(m.rows.begin(), m.rows.begin() + 10);
  const auto [a, b] = split(ten, 0.7, 1);
  EXPECT_EQ(a.rows.size(), 7u);
  EXPECT_EQ(b.rows.size(), 3u);

  const auto again = split(m, 0.7, 42);
  EXPECT_EQ(again.first.rows.front().id, train.rows.front().id);
  EXPECT_EQ(code_of([&] { split(ten, 1.0, 1); }), ErrorCode::InvalidConfig);
  Manifest one;
  one.rows.push_back({});
  EXPECT_EQ(code_of([&] { split(one, 0.5, 1); }), ErrorCode::TooFewSamples);
}

TEST(Region, CropRows) {
  const Image img = ramp(192, 64);
  const Image up = crop_region(img, Region::Upper);
  const Image low = crop_region(img, Region::Lower);
  EXPECT_EQ(up.height, 96u);
  EXPECT_EQ(low.height, 96u);
  EXPECT_EQ(up.at(95, 63), img.at(95, 63));
  EXPECT_EQ(low.at(0, 0), img.at(96, 0));
  EXPECT_EQ(crop_region(img, Region::Full), img);
  const Image odd = crop_region(ramp(5, 2), Region::Lower);
  EXPECT_EQ(odd.height, 3u);
}

TEST(Augment, StandardizedOutput) {
  const Image img = load_pgm(default_manifest().resolve(default_manifest().rows[3]));
  std::mt19937_64 rng(1);
  for (Mode mode : {Mode::Train, Mode::Eval}) {
    const Tensor t = augment(img, 32, mode, &rng);
    ASSERT_EQ(t.shape(), (Shape{1, 32, 32}));
    double mean = 0, sq = 0;
    for (double v : t.data()) mean += v;
    mean /= static_cast<double>(t.size());
    for (double v : t.data()) sq += (v - mean) * (v - mean);
    EXPECT_NEAR(mean, 0.0, 1e-6);
    EXPECT_NEAR(std::sqrt(sq / static_cast<double>(t.size())), 1.0, 1e-6);
  }
  EXPECT_EQ(augment(img, 32, Mode::Eval, nullptr), augment(img, 32, Mode::Eval, nullptr));
  EXPECT_EQ(code_of([&] { augment(img, 32, Mode::Train, nullptr); }), ErrorCode::InvalidConfig);
}

TEST(Augment, ConstantImageUsesStdFloor) {
  const Image flat{10, 10, std::vector<std::uint8_t>(100, 77)};
  const Tensor t = augment(flat, 8, Mode::Eval, nullptr);
  for (double v : t.data()) EXPECT_EQ(v, 0.0);
}

TEST(Augment, CropGridCoverage) {
  std::mt19937_64 rng(3);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  int flips = 0;
  for (int i = 0; i < 10000; ++i) {
    const CropDraw d = draw_crop(rng);
    ASSERT_LE(d.offset_y, kAugmentMargin);
    ASSERT_LE(d.offset_x, kAugmentMargin);
    seen.insert({d.offset_y, d.offset_x});
    flips += d.flip;
  }
  EXPECT_EQ(seen.size(), (kAugmentMargin + 1) * (kAugmentMargin + 1));
  EXPECT_NEAR(flips / 10000.0, 0.5, 0.03);
}

TEST(Augment, FlipMirrorsCenterCrop) {
  // A crop whose draw is a flip with zero offset equals the mirrored source.
  Tensor resized({4, 4});
  for (std::size_t i = 0; i < 16; ++i) resized[i] = static_cast<double>(i * i);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 probe(seed), rng(seed);
    const CropDraw d = draw_crop(probe, 0);
    const Tensor t = augment_resized(resized, 4, Mode::Train, &rng);
    const Tensor ref = augment_resized(resized, 4, Mode::Eval, nullptr);
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x)
        EXPECT_EQ(t[y * 4 + x], ref[y * 4 + (d.flip ? 3 - x : x)]);
  }
}

TEST(Letterbox, CentersAndResizes) {
  const Image tall{4, 2, {10, 10, 10, 10, 10, 10, 10, 10}};
  const Tensor t = letterbox_resize(tall, 4);
  EXPECT_EQ(t.shape(), (Shape{4, 4}));
  EXPECT_EQ(t[0], 0.0);
  EXPECT_EQ(t[1], 10.0);
  EXPECT_EQ(t[2], 10.0);
  EXPECT_EQ(t[3], 0.0);
}

TEST(Manifest, RejectsBadRows) {
  TempDir dir("manifest_bad");
  std::ofstream(dir / "dup.csv") << "id,path,age_years,gender\n1,a.pgm,3.0,F\n1,b.pgm,4.0,M\n";
  EXPECT_EQ(code_of([&] { read_manifest(dir / "dup.csv"); }), ErrorCode::FormatError);
  std::ofstream(dir / "gender.csv") << "id,path,age_years,gender\n1,a.pgm,3.0,X\n";
  EXPECT_EQ(code_of([&] { read_manifest(dir / "gender.csv"); }), ErrorCode::FormatError);
  std::ofstream(dir / "header.csv") << "id,file,age,gender\n";
  EXPECT_EQ(code_of([&] { read_manifest(dir / "header.csv"); }), ErrorCode::FormatError);
  std::ofstream(dir / "age.csv") << "id,path,age_years,gender\n1,a.pgm,old,F\n";
  EXPECT_EQ(code_of([&] { read_manifest(dir / "age.csv"); }), ErrorCode::FormatError);
}

TEST(Dataset, FromManifestAndSubset) {
  Manifest m = default_manifest();
  m.rows.resize(5);
  const Dataset d = Dataset::from_manifest(m, 32, Region::Upper);
  ASSERT_EQ(d.size(), 5u);
  EXPECT_EQ(d.images[0].shape(), (Shape{40, 40}));
  const Dataset s = d.subset({4, 1});
  EXPECT_EQ(s.ids, (std::vector<int>{m.rows[4].id, m.rows[1].id}));
  EXPECT_EQ(s.region, Region::Upper);
}
