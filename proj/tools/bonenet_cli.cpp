// Command-line front end over the C API.
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bonenet/bonenet.h"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string data;
  std::string out;
};

int report(bn_status status) {
  if (status != BN_OK) std::fprintf(stderr, "error: %s\n", bn_last_error());
  return static_cast<int>(status);
}

// Loads --config (or defaults) and applies --seed / --data overrides.
bn_status load_config(const Common& c, bn_config** cfg) {
  bn_status s = c.config.empty() ? bn_config_default(cfg) : bn_config_load(c.config.c_str(), cfg);
  if (s != BN_OK) return s;
  if (c.seed) bn_config_set_seed(*cfg, *c.seed);
  if (!c.data.empty()) bn_config_set_data_dir(*cfg, c.data.c_str());
  return BN_OK;
}

void print_epoch(int epoch, double train_loss, double val_mae, double lr, void*) {
  std::printf("epoch %d train_loss %.6f val_mae %.6f lr %.6g\n", epoch, train_loss, val_mae, lr);
  std::fflush(stdout);
}

void print_check(const char* name, size_t cases, double max_rel_err, int passed, void*) {
  std::printf("%-26s cases %2zu max_rel_err %.3e %s\n", name, cases, max_rel_err, passed ? "ok" : "FAIL");
  std::fflush(stdout);
}

void add_config_flags(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON run config")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Override the config seed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bone age regression from synthetic whole-body images"};
  app.require_subcommand(1);

  Common gen_opts;
  auto* gen = app.add_subcommand("gen-data", "Render the synthetic skeleton dataset");
  add_config_flags(gen, gen_opts);
  gen->add_option("--out", gen_opts.out, "Output directory")->required();

  Common train_opts;
  std::string arch = "hier", region = "full";
  auto* train = app.add_subcommand("train", "Train a regressor");
  add_config_flags(train, train_opts);
  train->add_option("--arch", arch, "hier or plain")->check(CLI::IsMember({"hier", "plain"}));
  train->add_option("--region", region, "full, upper or lower")->check(CLI::IsMember({"full", "upper", "lower"}));
  train->add_option("--data", train_opts.data, "Dataset directory (overrides paths.data_dir)");
  train->add_option("--out", train_opts.out, "Output directory")->required();

  std::string checkpoint, manifest, eval_out;
  bool by_gender = false;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint or ensemble on a manifest");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint or ensemble descriptor")->required();
  eval->add_option("--manifest", manifest, "Manifest CSV")->required()->check(CLI::ExistingFile);
  eval->add_flag("--by-gender", by_gender, "Break the MAE down by gender");
  eval->add_option("--out", eval_out, "Directory for eval.csv and predictions.csv");

  Common fuse_opts;
  std::string mode;
  std::vector<std::string> checkpoints;
  int head_epochs = 0;
  bool unfreeze = false;
  auto* fuse = app.add_subcommand("fuse", "Build a late or early fusion ensemble");
  add_config_flags(fuse, fuse_opts);
  fuse->add_option("--mode", mode, "late or early")->required()->check(CLI::IsMember({"late", "early"}));
  fuse->add_option("--checkpoints", checkpoints, "Member checkpoints")->required()->expected(2, -1);
  fuse->add_option("--train-head", head_epochs, "Early fusion: head training epochs (default: config epochs)")
      ->check(CLI::PositiveNumber);
  fuse->add_flag("--unfreeze-members", unfreeze, "Early fusion: fine-tune the members with the head");
  fuse->add_option("--data", fuse_opts.data, "Dataset directory for head training");
  fuse->add_option("--out", fuse_opts.out, "Output directory")->required();

  std::string image, layer = "block4.pool", explain_out, explain_manifest;
  std::string explain_ckpt;
  auto* explain = app.add_subcommand("explain", "Grad-CAM heatmap and region mass");
  explain->add_option("--checkpoint", explain_ckpt, "Model checkpoint")->required();
  auto* image_opt = explain->add_option("--image", image, "Input PGM")->check(CLI::ExistingFile);
  auto* manifest_opt =
      explain->add_option("--manifest", explain_manifest, "Explain every manifest image")->check(CLI::ExistingFile);
  image_opt->excludes(manifest_opt);
  explain->add_option("--layer", layer, "Target activation, e.g. block4.pool");
  explain->add_option("--out", explain_out, "Heatmap PGM (directory with --manifest)")->required();

  std::uint64_t gc_seed = 1234;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient self-test");
  gradcheck->add_option("--seed", gc_seed, "Shape/value seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return BN_ERR_USAGE;
  }

  if (*gen) {
    bn_config* cfg = nullptr;
    if (bn_status s = load_config(gen_opts, &cfg); s != BN_OK) return report(s);
    size_t rows = 0;
    const bn_status s = bn_generate(cfg, gen_opts.out.c_str(), &rows);
    bn_config_free(cfg);
    if (s == BN_OK) std::printf("wrote %zu images to %s\n", rows, gen_opts.out.c_str());
    return report(s);
  }

  if (*train) {
    bn_config* cfg = nullptr;
    if (bn_status s = load_config(train_opts, &cfg); s != BN_OK) return report(s);
    bn_train_summary sum{};
    const bn_status s = bn_train(cfg, arch.c_str(), region.c_str(), train_opts.out.c_str(), print_epoch, nullptr, &sum);
    bn_config_free(cfg);
    if (s == BN_OK)
      std::printf("best_epoch %d best_val_mae %.6f test_mae %.6f final_lr %.6g params %llu\n", sum.best_epoch,
                  sum.best_val_mae, sum.test_mae, sum.final_lr, static_cast<unsigned long long>(sum.param_count));
    return report(s);
  }

  if (*eval) {
    double mae = 0.0;
    char* csv = nullptr;
    const bn_status s = bn_evaluate(checkpoint.c_str(), manifest.c_str(), by_gender ? 1 : 0,
                                    eval_out.empty() ? nullptr : eval_out.c_str(), &mae, &csv);
    if (s == BN_OK) std::fputs(csv, stdout);
    bn_string_free(csv);
    return report(s);
  }

  if (*fuse) {
    bn_config* cfg = nullptr;
    if (bn_status s = load_config(fuse_opts, &cfg); s != BN_OK) return report(s);
    std::vector<const char*> paths;
    for (const auto& p : checkpoints) paths.push_back(p.c_str());
    char* descriptor = nullptr;
    const bn_status s = bn_fuse(cfg, mode.c_str(), paths.data(), paths.size(), fuse_opts.out.c_str(), head_epochs,
                                unfreeze ? 1 : 0, print_epoch, nullptr, &descriptor);
    bn_config_free(cfg);
    if (s == BN_OK) std::printf("wrote %s\n", descriptor);
    bn_string_free(descriptor);
    return report(s);
  }

  if (*explain) {
    if (!explain_manifest.empty()) {
      size_t images = 0, undefined = 0;
      double median = 0.0;
      const bn_status s = bn_explain_manifest(explain_ckpt.c_str(), explain_manifest.c_str(), layer.c_str(),
                                              explain_out.c_str(), &images, &undefined, &median);
      if (s == BN_OK)
        std::printf("images %zu undefined %zu median_upper_mass %.6f\n", images, undefined, median);
      return report(s);
    }
    if (image.empty()) {
      std::fprintf(stderr, "error: explain needs --image or --manifest\n");
      return BN_ERR_USAGE;
    }
    double upper = 0.0, lower = 0.0;
    int defined = 0;
    const bn_status s =
        bn_explain(explain_ckpt.c_str(), image.c_str(), layer.c_str(), explain_out.c_str(), &upper, &lower, &defined);
    if (s == BN_OK) {
      if (defined)
        std::printf("upper_mass %.6f lower_mass %.6f\n", upper, lower);
      else
        std::printf("upper_mass undefined lower_mass undefined (all-zero heatmap)\n");
    }
    return report(s);
  }

  if (*gradcheck) {
    int all_passed = 0;
    const bn_status s = bn_gradcheck(gc_seed, print_check, nullptr, &all_passed);
    if (s != BN_OK) return report(s);
    std::printf("%s\n", all_passed ? "all checks passed" : "gradient check FAILED");
    return all_passed ? 0 : BN_ERR_INVALID;
  }
  return BN_ERR_USAGE;
}
