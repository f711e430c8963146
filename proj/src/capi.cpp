#include "bonenet/bonenet.h"

#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "bonenet/error.hpp"
#include "bonenet/gradcheck.hpp"
#include "bonenet/pipeline.hpp"

struct bn_config {
  bonenet::RunConfig cfg;
};

struct bn_model {
  bonenet::LoadedModel loaded;
};

namespace {

thread_local std::string g_last_error;

bn_status fail(bn_status status, const std::string& msg) {
  g_last_error = msg;
  return status;
}

bn_status status_of(bonenet::ErrorCode code) {
  return code == bonenet::ErrorCode::DivergedTraining ? BN_ERR_DIVERGED : BN_ERR_INVALID;
}

template <typename F>
bn_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return BN_OK;
  } catch (const bonenet::Error& e) {
    return fail(status_of(e.code()), e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(BN_ERR_INVALID, std::string("IoError: ") + e.what());
  } catch (const std::bad_alloc&) {
    return fail(BN_ERR_INVALID, "out of memory");
  } catch (const std::exception& e) {
    return fail(BN_ERR_INVALID, e.what());
  }
}

char* dup_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

bonenet::EpochCallback epoch_adapter(bn_epoch_fn fn, void* user) {
  if (!fn) return {};
  return [fn, user](const bonenet::HistoryRow& r) { fn(r.epoch, r.train_loss, r.val_mae, r.lr, user); };
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw bonenet::Error(bonenet::ErrorCode::IoError, "cannot write " + p.string());
  out << text;
}

}  // namespace

extern "C" {

const char* bn_last_error(void) { return g_last_error.c_str(); }

const char* bn_version(void) { return "0.1.0"; }

void bn_string_free(char* s) { delete[] s; }

bn_status bn_config_default(bn_config** out) {
  if (!out) return fail(BN_ERR_USAGE, "null output handle");
  return guarded([&] { *out = new bn_config{bonenet::parse_config("{}")}; });
}

bn_status bn_config_parse(const char* json_text, bn_config** out) {
  if (!json_text || !out) return fail(BN_ERR_USAGE, "null argument");
  return guarded([&] { *out = new bn_config{bonenet::parse_config(json_text)}; });
}

bn_status bn_config_load(const char* path, bn_config** out) {
  if (!path || !out) return fail(BN_ERR_USAGE, "null argument");
  return guarded([&] {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw bonenet::Error(bonenet::ErrorCode::IoError, std::string("cannot open config ") + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    *out = new bn_config{bonenet::parse_config(ss.str())};
  });
}

void bn_config_free(bn_config* cfg) { delete cfg; }

bn_status bn_config_set_seed(bn_config* cfg, uint64_t seed) {
  if (!cfg) return fail(BN_ERR_USAGE, "null config");
  cfg->cfg.set_seed(seed);
  return BN_OK;
}

bn_status bn_config_set_data_dir(bn_config* cfg, const char* dir) {
  if (!cfg || !dir) return fail(BN_ERR_USAGE, "null argument");
  cfg->cfg.paths.data_dir = dir;
  return BN_OK;
}

bn_status bn_config_to_json(const bn_config* cfg, char** out) {
  if (!cfg || !out) return fail(BN_ERR_USAGE, "null argument");
  return guarded([&] { *out = dup_string(bonenet::to_json(cfg->cfg).dump(2)); });
}

bn_status bn_config_fingerprint(const bn_config* cfg, char out_hex[65]) {
  if (!cfg || !out_hex) return fail(BN_ERR_USAGE, "null argument");
  return guarded([&] {
    const std::string hex = bonenet::to_hex(bonenet::config_fingerprint(cfg->cfg.model, cfg->cfg.train));
    std::memcpy(out_hex, hex.c_str(), 65);
  });
}

bn_status bn_generate(const bn_config* cfg, const char* out_dir, size_t* rows_written) {
  if (!cfg || !out_dir) return fail(BN_ERR_USAGE, "null argument");
  return guarded([&] {
    const auto m = bonenet::generate_data(cfg->cfg, out_dir);
    if (rows_written) *rows_written = m.rows.size();
  });
}

bn_status bn_train(const bn_config* cfg, const char* arch, const char* region, const char* out_dir,
                   bn_epoch_fn on_epoch, void* user, bn_train_summary* summary) {
  if (!cfg || !arch || !region || !out_dir) return fail(BN_ERR_USAGE, "null argument");
  return guarded([&] {
    bonenet::TrainRequest req;
    req.arch = arch;
    req.region = bonenet::parse_region(region);
    req.out_dir = out_dir;
    req.on_epoch = epoch_adapter(on_epoch, user);
    const auto out = bonenet::run_train(cfg->cfg, req);
    if (summary) {
      summary->epochs_run = static_cast<int>(out.result.history.size());
      summary->best_epoch = out.result.best_epoch;
      summary->best_val_mae = out.result.best_val_mae;
      summary->final_lr = out.result.final_lr;
      summary->test_mae = out.test.mae;
      summary->param_count = out.param_count;
    }
  });
}

bn_status bn_model_load(const char* checkpoint, bn_model** out) {
  if (!checkpoint || !out) return fail(BN_ERR_USAGE, "null argument");
  return guarded([&] { *out = new bn_model{bonenet::load_model(checkpoint)}; });
}

void bn_model_free(bn_model* model) { delete model; }

uint64_t bn_model_param_count(const bn_model* model, int trainable_only) {
  return model ? model->loaded.model.count_params(trainable_only != 0) : 0;
}

uint64_t bn_model_connection_params(const bn_model* model, int block) {
  if (!model) return 0;
  const std::string prefix = "conn.block" + std::to_string(block) + ".";
  uint64_t n = 0;
  for (const auto* p : model->loaded.model.parameters())
    if (p->name.rfind(prefix, 0) == 0) n += p->value.size();
  return n;
}

bn_status bn_evaluate(const char* model_path, const char* manifest, int by_gender, const char* out_dir, double* mae,
                      char** report_csv) {
  if (!model_path || !manifest) return fail(BN_ERR_USAGE, "null argument");
  return guarded([&] {
    const auto out =
        bonenet::run_eval(model_path, manifest, by_gender ? bonenet::GroupBy::Gender : bonenet::GroupBy::None);
    const std::string csv = bonenet::report_csv(out.report);
    if (out_dir) {
      std::filesystem::create_directories(out_dir);
      write_file(std::filesystem::path(out_dir) / "eval.csv", csv);
      write_file(std::filesystem::path(out_dir) / "predictions.csv",
                 bonenet::predictions_csv(out.report, bonenet::read_manifest(manifest)));
    }
    if (mae) *mae = out.report.mae;
    if (report_csv) *report_csv = dup_string(csv);
  });
}

bn_status bn_fuse(const bn_config* cfg, const char* mode, const char* const* checkpoints, size_t count,
                  const char* out_dir, int head_epochs, int unfreeze_members, bn_epoch_fn on_epoch, void* user,
                  char** descriptor_path) {
  if (!cfg || !mode || !out_dir || (count > 0 && !checkpoints)) return fail(BN_ERR_USAGE, "null argument");
  return guarded([&] {
    bonenet::FuseRequest req;
    req.mode = mode;
    for (size_t i = 0; i < count; ++i) req.members.emplace_back(checkpoints[i]);
    req.out_dir = out_dir;
    req.head_epochs = head_epochs;
    req.unfreeze_members = unfreeze_members != 0;
    req.on_epoch = epoch_adapter(on_epoch, user);
    const auto out = bonenet::run_fuse(cfg->cfg, req);
    if (descriptor_path) *descriptor_path = dup_string(out.descriptor.string());
  });
}

bn_status bn_explain(const char* checkpoint, const char* image, const char* layer, const char* out_pgm,
                     double* upper_mass, double* lower_mass, int* defined) {
  if (!checkpoint || !image || !out_pgm) return fail(BN_ERR_USAGE, "null argument");
  return guarded([&] {
    const auto out = bonenet::run_explain(checkpoint, image, layer ? layer : bonenet::kDefaultCamLayer, out_pgm);
    if (defined) *defined = out.upper_mass.has_value();
    if (upper_mass && out.upper_mass) *upper_mass = *out.upper_mass;
    if (lower_mass && out.lower_mass) *lower_mass = *out.lower_mass;
  });
}

bn_status bn_explain_manifest(const char* checkpoint, const char* manifest, const char* layer, const char* out_dir,
                              size_t* images, size_t* undefined, double* median_upper_mass) {
  if (!checkpoint || !manifest || !out_dir) return fail(BN_ERR_USAGE, "null argument");
  return guarded([&] {
    const auto out =
        bonenet::run_explain_manifest(checkpoint, manifest, layer ? layer : bonenet::kDefaultCamLayer, out_dir);
    if (images) *images = out.images;
    if (undefined) *undefined = out.undefined;
    if (median_upper_mass) *median_upper_mass = out.median_upper_mass;
  });
}

bn_status bn_gradcheck(uint64_t seed, bn_gradcheck_fn on_result, void* user, int* all_passed) {
  return guarded([&] {
    bool ok = true;
    bonenet::run_gradcheck_suite(seed, [&](const bonenet::GradCheckResult& r) {
      ok = ok && r.passed;
      if (on_result) on_result(r.name.c_str(), r.cases, r.max_rel_err, r.passed ? 1 : 0, user);
    });
    if (all_passed) *all_passed = ok ? 1 : 0;
  });
}

}  // extern "C"
