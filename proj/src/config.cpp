#include "bonenet/config.hpp"

#include <functional>
#include <set>

#include "bonenet/error.hpp"

namespace bonenet {

using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& path, const std::string& msg) {
  throw Error(ErrorCode::ConfigError, "at " + path + ": " + msg);
}

// Pulls typed fields out of one JSON object and rejects leftovers.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) config_error(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* take(const std::string& key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  double number(const std::string& key, double def, const std::function<bool(double)>& ok, const char* rule) {
    const json* v = take(key);
    if (!v) return def;
    if (!v->is_number()) config_error(key_path(key), "expected a number");
    const double x = v->get<double>();
    if (!ok(x)) config_error(key_path(key), rule);
    return x;
  }

  std::int64_t integer(const std::string& key, std::int64_t def, std::int64_t lo, std::int64_t hi) {
    const json* v = take(key);
    if (!v) return def;
    if (!v->is_number_integer()) config_error(key_path(key), "expected an integer");
    const auto x = v->get<std::int64_t>();
    if (x < lo || x > hi)
      config_error(key_path(key), "must lie in " + std::to_string(lo) + ".." + std::to_string(hi));
    return x;
  }

  bool boolean(const std::string& key, bool def) {
    const json* v = take(key);
    if (!v) return def;
    if (!v->is_boolean()) config_error(key_path(key), "expected true or false");
    return v->get<bool>();
  }

  std::string string(const std::string& key, const std::string& def) {
    const json* v = take(key);
    if (!v) return def;
    if (!v->is_string()) config_error(key_path(key), "expected a string");
    return v->get<std::string>();
  }

  std::vector<std::int64_t> int_list(const std::string& key, std::vector<std::int64_t> def, std::int64_t lo) {
    const json* v = take(key);
    if (!v) return def;
    if (!v->is_array()) config_error(key_path(key), "expected an array of integers");
    std::vector<std::int64_t> out;
    for (const auto& e : *v) {
      if (!e.is_number_integer()) config_error(key_path(key), "expected an array of integers");
      const auto x = e.get<std::int64_t>();
      if (x < lo) config_error(key_path(key), "entries must be >= " + std::to_string(lo));
      out.push_back(x);
    }
    return out;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) config_error(key_path(it.key()), "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

template <class T>
std::vector<std::int64_t> widen(const std::vector<T>& v) {
  return {v.begin(), v.end()};
}

template <class T>
std::vector<T> narrow(const std::vector<std::int64_t>& v) {
  return {v.begin(), v.end()};
}

constexpr std::int64_t kBig = 1 << 30;

auto positive = [](double x) { return x > 0.0; };
auto unit_open = [](double x) { return x > 0.0 && x < 1.0; };
auto unit_halfopen = [](double x) { return x >= 0.0 && x < 1.0; };

// Re-throws a struct-level InvalidConfig as a ConfigError under `path`.
template <class F>
void validated(const std::string& path, F f) {
  try {
    f();
  } catch (const Error& e) {
    if (e.code() != ErrorCode::InvalidConfig) throw;
    config_error(path, e.what());
  }
}

ModelConfig parse_model(const json& j, const std::string& path) {
  Fields f(j, path);
  ModelConfig c;
  c.input_size = static_cast<std::size_t>(f.integer("input_size", static_cast<std::int64_t>(c.input_size), 32, 4096));
  if (c.input_size % 32 != 0) config_error(f.key_path("input_size"), "must be a multiple of 32");
  c.block_channels = narrow<std::size_t>(f.int_list("block_channels", widen(c.block_channels), 1));
  if (c.block_channels.size() != ModelConfig::kBlocks) config_error(f.key_path("block_channels"), "needs 5 entries");
  c.convs_per_block = static_cast<std::size_t>(f.integer("convs_per_block", static_cast<std::int64_t>(c.convs_per_block), 1, 16));
  c.connection_blocks = narrow<int>(f.int_list("connection_blocks", widen(c.connection_blocks), 1));
  c.n_units = static_cast<std::size_t>(f.integer("n_units", static_cast<std::int64_t>(c.n_units), 1, kBig));
  c.head_dims = narrow<std::size_t>(f.int_list("head_dims", widen(c.head_dims), 1));
  if (c.head_dims.size() != 2) config_error(f.key_path("head_dims"), "needs 2 entries");
  c.dropout_rate = f.number("dropout_rate", c.dropout_rate, unit_halfopen, "must lie in [0, 1)");
  c.global_pool_connections = f.boolean("global_pool_connections", c.global_pool_connections);
  c.frozen_blocks = static_cast<int>(f.integer("frozen_blocks", c.frozen_blocks, 0, 5));
  c.allow_early_connections = f.boolean("allow_early_connections", c.allow_early_connections);
  f.finish();
  validated(path, [&] { c.validate(); });
  return c;
}

TrainConfig parse_train(const json& j, const std::string& path, bool allow_seed) {
  Fields f(j, path);
  TrainConfig c;
  c.epochs = static_cast<int>(f.integer("epochs", c.epochs, 1, 1000000));
  c.batch_size = static_cast<std::size_t>(f.integer("batch_size", static_cast<std::int64_t>(c.batch_size), 2, kBig));
  c.lr0 = f.number("lr0", c.lr0, positive, "must be positive");
  c.lr_min = f.number("lr_min", c.lr_min, positive, "must be positive");
  c.plateau_factor = f.number("plateau_factor", c.plateau_factor, unit_open, "must lie in (0, 1)");
  c.patience = static_cast<int>(f.integer("patience", c.patience, 1, 1000000));
  c.min_delta = f.number("min_delta", c.min_delta, [](double x) { return x >= 0.0; }, "must be non-negative");
  c.beta1 = f.number("beta1", c.beta1, unit_halfopen, "must lie in [0, 1)");
  c.beta2 = f.number("beta2", c.beta2, unit_halfopen, "must lie in [0, 1)");
  c.adam_eps = f.number("adam_eps", c.adam_eps, positive, "must be positive");
  const std::string loss = f.string("loss", c.loss == LossKind::L1 ? "l1" : "l2");
  if (loss == "l1") c.loss = LossKind::L1;
  else if (loss == "l2") c.loss = LossKind::L2;
  else config_error(f.key_path("loss"), "must be \"l1\" or \"l2\"");
  c.train_fraction = f.number("train_fraction", c.train_fraction, unit_open, "must lie in (0, 1)");
  c.val_fraction = f.number("val_fraction", c.val_fraction, unit_halfopen, "must lie in [0, 1)");
  c.init_output_bias = f.boolean("init_output_bias", c.init_output_bias);
  c.augment = f.boolean("augment", c.augment);
  if (allow_seed) c.seed = static_cast<std::uint64_t>(f.integer("seed", 42, 0, std::numeric_limits<std::int64_t>::max()));
  f.finish();
  if (c.lr_min > c.lr0) config_error(f.key_path("lr_min"), "must not exceed lr0");
  validated(path, [&] { c.validate(); });
  return c;
}

GenParams parse_data(const json& j, const std::string& path) {
  Fields f(j, path);
  GenParams p;
  p.n = static_cast<std::size_t>(f.integer("n", static_cast<std::int64_t>(p.n), 2, kBig));
  p.female_fraction = f.number("female_fraction", p.female_fraction, [](double x) { return x >= 0.0 && x <= 1.0; },
                               "must lie in [0, 1]");
  if (const json* w = f.take("band_weights")) {
    if (!w->is_array() || w->size() != 3) config_error(f.key_path("band_weights"), "expected 3 numbers");
    for (std::size_t i = 0; i < 3; ++i) {
      if (!(*w)[i].is_number()) config_error(f.key_path("band_weights"), "expected 3 numbers");
      p.band_weights[i] = (*w)[i].get<double>();
    }
  }
  p.canvas_height = static_cast<std::size_t>(f.integer("canvas_height", static_cast<std::int64_t>(p.canvas_height), 16, 16384));
  p.canvas_width = static_cast<std::size_t>(f.integer("canvas_width", static_cast<std::int64_t>(p.canvas_width), 8, 16384));
  p.upper_signal_weight = f.number("upper_signal_weight", p.upper_signal_weight, unit_open, "must lie in (0, 1)");
  p.noise_std = f.number("noise_std", p.noise_std, [](double x) { return x >= 0.0; }, "must be non-negative");
  f.finish();
  validated(path, [&] { p.validate(); });
  return p;
}

}  // namespace

RunConfig parse_config(std::string_view text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ConfigError, std::string("at <root>: invalid JSON: ") + e.what());
  }
  Fields f(root, "");
  RunConfig c;
  const auto seed = static_cast<std::uint64_t>(f.integer("seed", 42, 0, std::numeric_limits<std::int64_t>::max()));
  if (const json* m = f.take("model")) c.model = parse_model(*m, "model");
  if (const json* t = f.take("train")) c.train = parse_train(*t, "train", false);
  if (const json* d = f.take("data")) c.data = parse_data(*d, "data");
  if (const json* p = f.take("paths")) {
    Fields pf(*p, "paths");
    c.paths.data_dir = pf.string("data_dir", c.paths.data_dir);
    pf.finish();
  }
  f.finish();
  c.set_seed(seed);
  return c;
}

json to_json(const ModelConfig& c) {
  return {{"input_size", c.input_size},
          {"block_channels", c.block_channels},
          {"convs_per_block", c.convs_per_block},
          {"connection_blocks", c.connection_blocks},
          {"n_units", c.n_units},
          {"head_dims", c.head_dims},
          {"dropout_rate", c.dropout_rate},
          {"global_pool_connections", c.global_pool_connections},
          {"frozen_blocks", c.frozen_blocks},
          {"allow_early_connections", c.allow_early_connections}};
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr0", c.lr0},
          {"lr_min", c.lr_min},
          {"plateau_factor", c.plateau_factor},
          {"patience", c.patience},
          {"min_delta", c.min_delta},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"seed", c.seed},
          {"loss", c.loss == LossKind::L1 ? "l1" : "l2"},
          {"train_fraction", c.train_fraction},
          {"val_fraction", c.val_fraction},
          {"init_output_bias", c.init_output_bias},
          {"augment", c.augment}};
}

json to_json(const GenParams& p) {
  return {{"n", p.n},
          {"female_fraction", p.female_fraction},
          {"band_weights", p.band_weights},
          {"canvas_height", p.canvas_height},
          {"canvas_width", p.canvas_width},
          {"upper_signal_weight", p.upper_signal_weight},
          {"noise_std", p.noise_std}};
}

json to_json(const RunConfig& c) {
  json t = to_json(c.train);
  t.erase("seed");
  return {{"seed", c.seed},
          {"model", to_json(c.model)},
          {"train", t},
          {"data", to_json(c.data)},
          {"paths", {{"data_dir", c.paths.data_dir}}}};
}

ModelConfig model_config_from_json(const json& j) { return parse_model(j, "model"); }
TrainConfig train_config_from_json(const json& j) { return parse_train(j, "train", true); }

Fingerprint config_fingerprint(const ModelConfig& model, const TrainConfig& train) {
  const json canonical = {{"model", to_json(model)}, {"train", to_json(train)}};
  return sha256(canonical.dump());
}

}  // namespace bonenet
