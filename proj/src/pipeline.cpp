#include "bonenet/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "bonenet/error.hpp"
#include "bonenet/rng.hpp"

namespace bonenet {

using nlohmann::json;

namespace {

constexpr const char* kModelKind = "model";
constexpr const char* kEarlyKind = "early_fusion";
constexpr const char* kDescriptorName = "ensemble.json";
constexpr const char* kEarlyCheckpointName = "early_fusion.ckpt";

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// Rows point at absolute image paths so the manifest stays valid wherever
// it is written.
Manifest with_absolute_paths(Manifest m) {
  for (auto& row : m.rows) row.path = fs::absolute(m.resolve(row)).lexically_normal().string();
  return m;
}

json parse_meta(const Checkpoint& ckpt, const fs::path& path) {
  try {
    return json::parse(ckpt.meta_json);
  } catch (const json::exception&) {
    throw Error(ErrorCode::FormatError, path.string() + ": unreadable checkpoint metadata");
  }
}

std::string meta_kind(const json& meta) { return meta.is_object() ? meta.value("kind", std::string()) : ""; }

Fingerprint early_fingerprint(const std::vector<Fingerprint>& members, const json& head) {
  json j;
  for (const auto& fp : members) j["members"].push_back(to_hex(fp));
  j["head"] = head;
  return sha256(j.dump());
}

std::vector<const Parameter*> const_params(const std::vector<Parameter*>& params) {
  return {params.begin(), params.end()};
}

// Member parameters are stored under a "memberI." prefix when they were
// fine-tuned together with the head.
std::vector<Parameter> prefixed_member_params(EarlyFusionModel& fused) {
  std::vector<Parameter> out;
  for (std::size_t i = 0; i < fused.members().size(); ++i)
    for (auto* p : fused.members()[i].parameters()) {
      Parameter copy = *p;
      copy.name = "member" + std::to_string(i) + "." + p->name;
      out.push_back(std::move(copy));
    }
  return out;
}

struct LoadedEarly {
  EarlyFusionModel model;
  Region region = Region::Full;
};

LoadedEarly load_early(const fs::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  const json meta = parse_meta(ckpt, path);
  if (meta_kind(meta) != kEarlyKind) throw Error(ErrorCode::FormatError, path.string() + ": not an early-fusion checkpoint");
  std::vector<Model> members;
  std::vector<Fingerprint> fps;
  Region region = Region::Full;
  const auto& entries = meta.at("members");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    LoadedModel m = load_model(entries[i].at("path").get<std::string>());
    if (to_hex(m.fingerprint) != entries[i].at("fingerprint").get<std::string>())
      throw Error(ErrorCode::FormatError, "member checkpoint changed since fusion: " + entries[i].at("path").get<std::string>());
    if (i > 0 && m.region != region) throw Error(ErrorCode::InvalidConfig, "early fusion members disagree on region");
    region = m.region;
    fps.push_back(m.fingerprint);
    members.push_back(std::move(m.model));
  }
  const json& head = meta.at("head");
  if (early_fingerprint(fps, head) != ckpt.fingerprint)
    throw Error(ErrorCode::FormatError, path.string() + ": fingerprint does not match its metadata");
  const bool unfrozen = head.at("unfreeze_members").get<bool>();
  EarlyFusionModel fused = EarlyFusionModel::build(std::move(members), head.at("dims").get<std::vector<std::size_t>>(),
                                                   head.at("dropout_rate").get<double>(), 0, !unfrozen);
  load_parameters(ckpt, fused.head_parameters());
  if (unfrozen) {
    auto stored = prefixed_member_params(fused);
    std::vector<Parameter*> ptrs;
    for (auto& p : stored) ptrs.push_back(&p);
    load_parameters(ckpt, ptrs);
    std::size_t k = 0;
    for (auto& m : fused.members())
      for (auto* p : m.parameters()) p->value = stored[k++].value;
  }
  return {std::move(fused), region};
}

struct MemberRef {
  fs::path path;
  std::string fingerprint;
};

struct Descriptor {
  std::string mode;
  std::vector<MemberRef> members;
  fs::path head;
};

Descriptor read_descriptor(const fs::path& path) {
  Descriptor d;
  try {
    const json j = json::parse(read_text(path));
    d.mode = j.at("mode").get<std::string>();
    for (const auto& m : j.at("members"))
      d.members.push_back({m.at("path").get<std::string>(), m.at("fingerprint").get<std::string>()});
    if (d.mode == "early") d.head = j.at("head_checkpoint").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, path.string() + ": bad ensemble descriptor: " + e.what());
  }
  if (d.mode != "late" && d.mode != "early")
    throw Error(ErrorCode::FormatError, path.string() + ": unknown fusion mode '" + d.mode + "'");
  if (d.members.size() < 2) throw Error(ErrorCode::FormatError, path.string() + ": ensemble needs two members");
  if (d.head.is_relative() && !d.head.empty()) d.head = path.parent_path() / d.head;
  return d;
}

EvalOutcome eval_late(const Descriptor& d, const Manifest& manifest, GroupBy group_by) {
  EvalOutcome out;
  std::vector<Tensor> preds;
  Dataset labels;
  for (const auto& ref : d.members) {
    LoadedModel m = load_model(ref.path);
    if (to_hex(m.fingerprint) != ref.fingerprint)
      throw Error(ErrorCode::FormatError, "member checkpoint changed since fusion: " + ref.path.string());
    const Dataset data = Dataset::from_manifest(manifest, m.model.input_size(), m.region);
    auto p = predict(m.model, data);
    preds.emplace_back(Shape{p.size()}, p);
    out.members.push_back(report_from_predictions(std::move(p), data, group_by));
    labels = data;
  }
  const Tensor fused = late_fuse(preds);
  out.report = report_from_predictions({fused.data().begin(), fused.data().end()}, labels, group_by);
  return out;
}

}  // namespace

ModelConfig arch_config(const ModelConfig& base, const std::string& arch) {
  ModelConfig mc = base;
  if (arch == "plain") {
    mc.connection_blocks.clear();
  } else if (arch == "hier") {
    if (mc.connection_blocks.empty()) throw Error(ErrorCode::InvalidConfig, "hier architecture needs connection blocks");
  } else {
    throw Error(ErrorCode::InvalidConfig, "unknown architecture '" + arch + "' (expected hier or plain)");
  }
  return mc;
}

DataSplits split_for_training(const Manifest& manifest, const TrainConfig& cfg) {
  auto [train, test] = split(manifest, cfg.train_fraction, cfg.seed);
  DataSplits s{{manifest.base_dir, {}}, {manifest.base_dir, {}}, std::move(test)};
  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(train.rows.size()) * cfg.val_fraction));
  if (n_val == 0) {
    s.train = train;
    s.val = train;
    return s;
  }
  for (std::size_t i = 0; i < train.rows.size(); ++i) (i < n_val ? s.val : s.train).rows.push_back(train.rows[i]);
  return s;
}

Manifest generate_data(const RunConfig& cfg, const fs::path& out_dir) { return generate(cfg.data, out_dir); }

void save_model(const fs::path& path, Model& model, const TrainConfig& train, Region region, const std::string& arch,
                const TrainResult& result) {
  json meta;
  meta["kind"] = kModelKind;
  meta["arch"] = arch;
  meta["region"] = to_string(region);
  meta["model"] = to_json(model.config());
  meta["train"] = to_json(train);
  meta["epochs"] = result.history.size();
  meta["best_epoch"] = result.best_epoch;
  meta["final_lr"] = result.final_lr;
  write_checkpoint(path, config_fingerprint(model.config(), train), const_params(model.parameters()), meta.dump());
}

LoadedModel load_model(const fs::path& checkpoint) {
  const Checkpoint ckpt = read_checkpoint(checkpoint);
  json meta = parse_meta(ckpt, checkpoint);
  if (meta_kind(meta) != kModelKind)
    throw Error(ErrorCode::FormatError, checkpoint.string() + ": not a single-model checkpoint");
  ModelConfig mc;
  TrainConfig tc;
  Region region;
  try {
    mc = model_config_from_json(meta.at("model"));
    tc = train_config_from_json(meta.at("train"));
    region = parse_region(meta.at("region").get<std::string>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, checkpoint.string() + ": bad metadata: " + e.what());
  }
  if (config_fingerprint(mc, tc) != ckpt.fingerprint)
    throw Error(ErrorCode::FormatError, checkpoint.string() + ": fingerprint does not match its metadata");
  LoadedModel out{Model::build(mc, tc.seed), region, tc, ckpt.fingerprint, std::move(meta)};
  load_parameters(ckpt, out.model.parameters());
  return out;
}

TrainOutcome run_train(const RunConfig& cfg, const TrainRequest& request) {
  const ModelConfig mc = arch_config(cfg.model, request.arch);
  mc.validate();
  cfg.train.validate();
  const Manifest manifest = read_manifest(fs::path(cfg.paths.data_dir) / "manifest.csv");
  const DataSplits splits = split_for_training(manifest, cfg.train);

  const Dataset train_set = Dataset::from_manifest(splits.train, mc.input_size, request.region);
  const Dataset val_set = Dataset::from_manifest(splits.val, mc.input_size, request.region);
  const Dataset test_set = Dataset::from_manifest(splits.test, mc.input_size, request.region);

  Model model = Model::build(mc, cfg.train.seed);
  TrainOutcome out;
  out.result = train(model, train_set, val_set, cfg.train, request.on_epoch);
  // Report what the checkpoint will reproduce.
  round_to_f32(model.parameters());
  out.test = evaluate(model, test_set, GroupBy::Gender);
  out.param_count = model.count_params(false);

  fs::create_directories(request.out_dir);
  out.checkpoint = request.out_dir / "model.ckpt";
  out.history = request.out_dir / "history.csv";
  save_model(out.checkpoint, model, cfg.train, request.region, request.arch, out.result);
  write_text(out.history, history_csv(out.result.history));
  write_manifest(with_absolute_paths(splits.train), request.out_dir / "train_manifest.csv");
  write_manifest(with_absolute_paths(splits.val), request.out_dir / "val_manifest.csv");
  write_manifest(with_absolute_paths(splits.test), request.out_dir / "test_manifest.csv");

  std::string metrics = "metric,value\n";
  metrics += "test_mae," + fmt(out.test.mae) + "\n";
  for (const auto& [name, g] : out.test.groups) metrics += "test_mae_" + name + "," + fmt(g.mae) + "\n";
  metrics += "best_epoch," + std::to_string(out.result.best_epoch) + "\n";
  metrics += "best_val_mae," + fmt(out.result.best_val_mae) + "\n";
  metrics += "final_lr," + fmt(out.result.final_lr) + "\n";
  metrics += "params," + std::to_string(out.param_count) + "\n";
  write_text(request.out_dir / "metrics.csv", metrics);
  return out;
}

EvalOutcome run_eval(const fs::path& model_path, const fs::path& manifest_path, GroupBy group_by) {
  const Manifest manifest = read_manifest(manifest_path);
  if (manifest.rows.empty()) throw Error(ErrorCode::EmptyDataset, manifest_path.string() + ": no rows");
  if (is_checkpoint_file(model_path)) {
    const json meta = parse_meta(read_checkpoint(model_path), model_path);
    if (meta_kind(meta) == kEarlyKind) {
      LoadedEarly e = load_early(model_path);
      return {evaluate(e.model, Dataset::from_manifest(manifest, e.model.input_size(), e.region), group_by), {}};
    }
    LoadedModel m = load_model(model_path);
    return {evaluate(m.model, Dataset::from_manifest(manifest, m.model.input_size(), m.region), group_by), {}};
  }
  const Descriptor d = read_descriptor(model_path);
  if (d.mode == "late") return eval_late(d, manifest, group_by);
  LoadedEarly e = load_early(d.head);
  return {evaluate(e.model, Dataset::from_manifest(manifest, e.model.input_size(), e.region), group_by), {}};
}

std::string report_csv(const EvalReport& report) {
  std::string out = "group,count,mae\n";
  out += "all," + std::to_string(report.count) + "," + fmt(report.mae) + "\n";
  for (const auto& [name, g] : report.groups) out += name + "," + std::to_string(g.count) + "," + fmt(g.mae) + "\n";
  return out;
}

std::string predictions_csv(const EvalReport& report, const Manifest& manifest) {
  std::string out = "id,age_years,predicted\n";
  for (std::size_t i = 0; i < report.predictions.size() && i < manifest.rows.size(); ++i) {
    const auto& row = manifest.rows[i];
    out += std::to_string(row.id) + "," + fmt(row.age_years) + "," + fmt(report.predictions[i]) + "\n";
  }
  return out;
}

FuseOutcome run_fuse(const RunConfig& cfg, const FuseRequest& request) {
  if (request.mode != "late" && request.mode != "early")
    throw Error(ErrorCode::InvalidConfig, "unknown fusion mode '" + request.mode + "' (expected late or early)");
  if (request.members.size() < 2) throw Error(ErrorCode::InvalidConfig, "fusion needs at least two checkpoints");

  std::vector<LoadedModel> members;
  json descriptor;
  descriptor["mode"] = request.mode;
  for (const auto& p : request.members) {
    members.push_back(load_model(p));
    descriptor["members"].push_back(
        {{"path", fs::absolute(p).lexically_normal().string()}, {"fingerprint", to_hex(members.back().fingerprint)}});
  }
  fs::create_directories(request.out_dir);
  FuseOutcome out;
  out.descriptor = request.out_dir / kDescriptorName;

  if (request.mode == "early") {
    const Region region = members.front().region;
    std::vector<Model> models;
    std::vector<Fingerprint> fps;
    for (auto& m : members) {
      if (m.region != region) throw Error(ErrorCode::InvalidConfig, "early fusion members disagree on region");
      fps.push_back(m.fingerprint);
      models.push_back(std::move(m.model));
    }
    TrainConfig tc = cfg.train;
    if (request.head_epochs > 0) tc.epochs = request.head_epochs;
    json head;
    head["dims"] = cfg.model.head_dims;
    head["dropout_rate"] = cfg.model.dropout_rate;
    head["unfreeze_members"] = request.unfreeze_members;
    head["train"] = to_json(tc);

    EarlyFusionModel fused = EarlyFusionModel::build(std::move(models), cfg.model.head_dims, cfg.model.dropout_rate,
                                                     derive_seed(tc.seed, {0xf05e}), !request.unfreeze_members);
    const Manifest manifest = read_manifest(fs::path(cfg.paths.data_dir) / "manifest.csv");
    const DataSplits splits = split_for_training(manifest, tc);
    const std::size_t s = fused.input_size();
    out.head_training = train(fused, Dataset::from_manifest(splits.train, s, region),
                              Dataset::from_manifest(splits.val, s, region), tc, request.on_epoch);
    round_to_f32(fused.parameters());

    json meta;
    meta["kind"] = kEarlyKind;
    meta["members"] = descriptor["members"];
    meta["head"] = head;
    meta["epochs"] = out.head_training->history.size();
    meta["best_epoch"] = out.head_training->best_epoch;
    meta["final_lr"] = out.head_training->final_lr;
    std::vector<const Parameter*> stored = const_params(fused.head_parameters());
    std::vector<Parameter> member_params;
    if (request.unfreeze_members) {
      member_params = prefixed_member_params(fused);
      for (const auto& p : member_params) stored.push_back(&p);
    }
    write_checkpoint(request.out_dir / kEarlyCheckpointName, early_fingerprint(fps, head), stored, meta.dump());
    write_text(request.out_dir / "head_history.csv", history_csv(out.head_training->history));
    descriptor["head_checkpoint"] = kEarlyCheckpointName;
  }
  write_text(out.descriptor, descriptor.dump(2) + "\n");
  return out;
}

namespace {

Tensor preprocess(const Image& raw, const LoadedModel& m) {
  const std::size_t s = m.model.input_size();
  return augment(crop_region(raw, m.region), s, Mode::Eval, nullptr).reshaped({1, 1, s, s});
}

ExplainOutcome explain_one(LoadedModel& m, const Image& raw, const std::string& layer) {
  ExplainOutcome out{grad_cam(m.model, preprocess(raw, m), layer), std::nullopt, std::nullopt};
  try {
    out.upper_mass = region_mass(out.heatmap, Region::Upper);
    out.lower_mass = region_mass(out.heatmap, Region::Lower);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::Undefined) throw;
  }
  return out;
}

}  // namespace

ExplainOutcome run_explain(const fs::path& checkpoint, const fs::path& image, const std::string& layer,
                           const fs::path& out_pgm) {
  LoadedModel m = load_model(checkpoint);
  ExplainOutcome out = explain_one(m, load_pgm(image), layer);
  if (out_pgm.has_parent_path()) fs::create_directories(out_pgm.parent_path());
  export_heatmap(out.heatmap, out_pgm);
  return out;
}

ExplainManifestOutcome run_explain_manifest(const fs::path& checkpoint, const fs::path& manifest_path,
                                            const std::string& layer, const fs::path& out_dir) {
  LoadedModel m = load_model(checkpoint);
  const Manifest manifest = read_manifest(manifest_path);
  fs::create_directories(out_dir / "heatmaps");
  ExplainManifestOutcome out;
  std::vector<double> uppers;
  std::string csv = "image_id,upper_mass,lower_mass\n";
  for (const auto& row : manifest.rows) {
    const ExplainOutcome e = explain_one(m, load_pgm(manifest.resolve(row)), layer);
    char name[32];
    std::snprintf(name, sizeof name, "%06d.pgm", row.id);
    export_heatmap(e.heatmap, out_dir / "heatmaps" / name);
    ++out.images;
    if (!e.upper_mass) {
      ++out.undefined;
      csv += std::to_string(row.id) + ",undefined,undefined\n";
      continue;
    }
    uppers.push_back(*e.upper_mass);
    csv += std::to_string(row.id) + "," + fmt(*e.upper_mass) + "," + fmt(*e.lower_mass) + "\n";
  }
  write_text(out_dir / "region_mass.csv", csv);
  if (!uppers.empty()) {
    std::sort(uppers.begin(), uppers.end());
    const std::size_t n = uppers.size();
    out.median_upper_mass = n % 2 ? uppers[n / 2] : 0.5 * (uppers[n / 2 - 1] + uppers[n / 2]);
  }
  return out;
}

}  // namespace bonenet
