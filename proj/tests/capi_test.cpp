#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <string>

#include "bonenet/bonenet.h"
#include "support/oracle.hpp"

using testing_support::TempDir;

namespace {

constexpr const char* kTinyConfig = R"({
  "seed": 5,
  "model": {"input_size": 32, "block_channels": [2, 3, 4, 4, 4], "convs_per_block": 1,
            "n_units": 4, "head_dims": [6, 5]},
  "train": {"epochs": 2, "batch_size": 4},
  "data": {"n": 24}
})";

struct ConfigHandle {
  bn_config* cfg = nullptr;
  ~ConfigHandle() { bn_config_free(cfg); }
};

}  // namespace

TEST(CApi, NullArgumentsAreUsageErrors) {
  EXPECT_EQ(bn_config_default(nullptr), BN_ERR_USAGE);
  EXPECT_EQ(bn_config_parse(nullptr, nullptr), BN_ERR_USAGE);
  EXPECT_EQ(bn_model_load(nullptr, nullptr), BN_ERR_USAGE);
  EXPECT_STRNE(bn_last_error(), "");
  bn_config_free(nullptr);
  bn_model_free(nullptr);
  bn_string_free(nullptr);
}

TEST(CApi, ConfigErrorsReportKeyPath) {
  bn_config* cfg = nullptr;
  EXPECT_EQ(bn_config_parse(R"({"train": {"lr0": 0}})", &cfg), BN_ERR_INVALID);
  EXPECT_EQ(cfg, nullptr);
  EXPECT_NE(std::string(bn_last_error()).find("train.lr0"), std::string::npos);
}

TEST(CApi, ConfigJsonAndFingerprint) {
  ConfigHandle a, b;
  ASSERT_EQ(bn_config_default(&a.cfg), BN_OK);
  ASSERT_EQ(bn_config_parse("{}", &b.cfg), BN_OK);
  char fa[65], fb[65];
  ASSERT_EQ(bn_config_fingerprint(a.cfg, fa), BN_OK);
  ASSERT_EQ(bn_config_fingerprint(b.cfg, fb), BN_OK);
  EXPECT_STREQ(fa, fb);
  EXPECT_EQ(std::strlen(fa), 64u);
  char* json = nullptr;
  ASSERT_EQ(bn_config_to_json(a.cfg, &json), BN_OK);
  EXPECT_NE(std::string(json).find("\"lr0\""), std::string::npos);
  bn_string_free(json);
  EXPECT_STRNE(bn_version(), "");
}

TEST(CApi, EndToEnd) {
  TempDir dir("capi");
  ConfigHandle h;
  ASSERT_EQ(bn_config_parse(kTinyConfig, &h.cfg), BN_OK);
  const std::string data = (dir / "data").string();
  ASSERT_EQ(bn_config_set_data_dir(h.cfg, data.c_str()), BN_OK);
  std::size_t rows = 0;
  ASSERT_EQ(bn_generate(h.cfg, data.c_str(), &rows), BN_OK);
  EXPECT_EQ(rows, 24u);

  int epochs_seen = 0;
  bn_train_summary summary{};
  const std::string run = (dir / "run").string();
  ASSERT_EQ(bn_train(h.cfg, "hier", "full", run.c_str(),
                     [](int, double, double, double, void* user) { ++*static_cast<int*>(user); }, &epochs_seen,
                     &summary),
            BN_OK)
      << bn_last_error();
  EXPECT_EQ(epochs_seen, 2);
  EXPECT_EQ(summary.epochs_run, 2);
  EXPECT_TRUE(std::filesystem::exists(dir / "run" / "model.ckpt"));

  bn_model* model = nullptr;
  const std::string ckpt = (dir / "run" / "model.ckpt").string();
  ASSERT_EQ(bn_model_load(ckpt.c_str(), &model), BN_OK);
  EXPECT_EQ(bn_model_param_count(model, 0), summary.param_count);
  EXPECT_GT(bn_model_connection_params(model, 4), 0u);
  bn_model_free(model);

  double mae = -1.0;
  char* report = nullptr;
  const std::string manifest = (dir / "run" / "test_manifest.csv").string();
  ASSERT_EQ(bn_evaluate(ckpt.c_str(), manifest.c_str(), 1, nullptr, &mae, &report), BN_OK) << bn_last_error();
  EXPECT_DOUBLE_EQ(mae, summary.test_mae);
  EXPECT_EQ(std::string(report).rfind("group,count,mae\n", 0), 0u);
  bn_string_free(report);

  const char* members[] = {ckpt.c_str(), ckpt.c_str()};
  char* descriptor = nullptr;
  const std::string fused = (dir / "late").string();
  ASSERT_EQ(bn_fuse(h.cfg, "late", members, 2, fused.c_str(), 0, 0, nullptr, nullptr, &descriptor), BN_OK)
      << bn_last_error();
  double fused_mae = -1.0;
  ASSERT_EQ(bn_evaluate(descriptor, manifest.c_str(), 0, nullptr, &fused_mae, nullptr), BN_OK) << bn_last_error();
  EXPECT_DOUBLE_EQ(fused_mae, mae);
  bn_string_free(descriptor);
  EXPECT_EQ(bn_fuse(h.cfg, "late", members, 1, fused.c_str(), 0, 0, nullptr, nullptr, nullptr), BN_ERR_INVALID);

  double upper = 0, lower = 0;
  int defined = 0;
  const std::string image = (dir / "data" / "images" / "000000.pgm").string();
  const std::string heat = (dir / "heat.pgm").string();
  ASSERT_EQ(bn_explain(ckpt.c_str(), image.c_str(), "block4.pool", heat.c_str(), &upper, &lower, &defined), BN_OK)
      << bn_last_error();
  if (defined) EXPECT_NEAR(upper + lower, 1.0, 1e-12);
  EXPECT_EQ(bn_explain(ckpt.c_str(), image.c_str(), "nope", heat.c_str(), &upper, &lower, &defined), BN_ERR_INVALID);
}

TEST(CApi, DivergenceHasItsOwnStatus) {
  TempDir dir("capi_div");
  ConfigHandle h;
  ASSERT_EQ(bn_config_parse(R"({
    "model": {"input_size": 32, "block_channels": [2, 3, 4, 4, 4], "convs_per_block": 1,
              "n_units": 4, "head_dims": [6, 5]},
    "train": {"epochs": 20, "batch_size": 4, "lr0": 1e308},
    "data": {"n": 16}})",
                            &h.cfg),
            BN_OK);
  const std::string data = (dir / "data").string();
  ASSERT_EQ(bn_config_set_data_dir(h.cfg, data.c_str()), BN_OK);
  ASSERT_EQ(bn_generate(h.cfg, data.c_str(), nullptr), BN_OK);
  const std::string out = (dir / "run").string();
  EXPECT_EQ(bn_train(h.cfg, "hier", "full", out.c_str(), nullptr, nullptr, nullptr), BN_ERR_DIVERGED);
}
