#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "rkan/backbone.hpp"
#include "rkan/data.hpp"
#include "rkan/training.hpp"

namespace rkan {

using json = nlohmann::json;

struct DataConfig {
  std::string source = "synthetic";  // synthetic | cifar10 | cifar100
  std::string path;
  std::size_t classes = 3;
  std::size_t train_per_class = 100;
  std::size_t val_per_class = 50;
  double noise = 0.1;
  std::uint64_t seed = 1;
  bool fixed_position = false;
  std::size_t train_limit = 0;  // 0 keeps every record
  std::size_t val_limit = 0;
};

struct RkanSettings {
  bool enabled = false;
  std::set<int> stages{4};
  RkanTemplate block{};
};

/// Fully defaulted run description, one-to-one with the JSON config file.
struct RunConfig {
  BackboneSpec model{};  // model.num_classes == 0 means "take it from the data"
  RkanSettings rkan{};
  TrainConfig train{};
  DataConfig data{};
  std::string output_dir = "out";

  RunConfig() { model.num_classes = 0; }

  /// Backbone spec with RKAN attachments resolved.
  BackboneSpec backbone(std::size_t num_classes) const {
    BackboneSpec spec = model;
    spec.num_classes = model.num_classes ? model.num_classes : num_classes;
    spec.rkan_stages = rkan.enabled ? rkan.stages : std::set<int>{};
    spec.rkan = rkan.block;
    return spec;
  }
};

namespace detail {

class KeyReader {
 public:
  KeyReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError("config key '" + path_ + "' must be an object");
  }

  template <typename V>
  void get(const char* key, V& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      out = it->template get<V>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + qualified(key) + "' has the wrong type");
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  std::string qualified(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  void reject_unknown() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!seen_.contains(it.key())) throw ConfigError("unknown config key '" + qualified(it.key()) + "'");
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

inline BasisFamily parse_family(const std::string& s) {
  if (s == "chebyshev") return BasisFamily::chebyshev;
  if (s == "rbf") return BasisFamily::rbf;
  throw ConfigError("config key 'rkan.basis' must be \"chebyshev\" or \"rbf\", got \"" + s + "\"");
}

}  // namespace detail

inline RunConfig parse_run_config(const json& root) {
  RunConfig cfg;
  detail::KeyReader top(root, "");
  if (const json* m = top.sub("model")) {
    detail::KeyReader r(*m, "model");
    r.get("in_channels", cfg.model.in_channels);
    r.get("stem_channels", cfg.model.stem_channels);
    r.get("num_classes", cfg.model.num_classes);
    r.get("affine_norm", cfg.model.affine_norm);
    if (const json* stages = r.sub("stages")) {
      if (!stages->is_array() || stages->size() != 4)
        throw ConfigError("config key 'model.stages' must be an array of exactly 4 stages");
      for (std::size_t s = 0; s < 4; ++s) {
        detail::KeyReader sr((*stages)[s], "model.stages[" + std::to_string(s) + "]");
        sr.get("out_channels", cfg.model.stages[s].out_channels);
        sr.get("blocks", cfg.model.stages[s].num_blocks);
        sr.get("stride", cfg.model.stages[s].stride);
        sr.reject_unknown();
      }
    }
    r.reject_unknown();
  }
  if (const json* k = top.sub("rkan")) {
    detail::KeyReader r(*k, "rkan");
    r.get("enabled", cfg.rkan.enabled);
    std::vector<int> stages(cfg.rkan.stages.begin(), cfg.rkan.stages.end());
    r.get("stages", stages);
    cfg.rkan.stages = std::set<int>(stages.begin(), stages.end());
    r.get("reduce_factor", cfg.rkan.block.reduce_factor);
    std::string basis = "chebyshev";
    r.get("basis", basis);
    cfg.rkan.block.family = detail::parse_family(basis);
    std::vector<int> degrees{cfg.rkan.block.degrees[0], cfg.rkan.block.degrees[1]};
    r.get("degrees", degrees);
    if (degrees.size() != 2) throw ConfigError("config key 'rkan.degrees' must hold two degrees");
    cfg.rkan.block.degrees = {degrees[0], degrees[1]};
    if (const json* rbf = r.sub("rbf")) {
      detail::KeyReader rr(*rbf, "rkan.rbf");
      rr.get("centers", cfg.rkan.block.rbf.centers);
      rr.get("width", cfg.rkan.block.rbf.width);
      rr.reject_unknown();
    }
    r.get("zero_init_expand", cfg.rkan.block.zero_init_expand);
    r.get("second_kan", cfg.rkan.block.second_kan);
    r.reject_unknown();
  }
  if (const json* t = top.sub("train")) {
    detail::KeyReader r(*t, "train");
    r.get("epochs", cfg.train.epochs);
    r.get("batch_size", cfg.train.batch_size);
    r.get("base_lr", cfg.train.base_lr);
    r.get("peak_lr", cfg.train.peak_lr);
    r.get("final_lr", cfg.train.final_lr);
    r.get("warmup_epochs", cfg.train.warmup_epochs);
    r.get("momentum", cfg.train.momentum);
    r.get("weight_decay", cfg.train.weight_decay);
    r.get("seed", cfg.train.seed);
    r.get("flip", cfg.train.flip);
    r.get("grad_clip", cfg.train.grad_clip);
    r.reject_unknown();
  }
  if (const json* d = top.sub("data")) {
    detail::KeyReader r(*d, "data");
    r.get("source", cfg.data.source);
    r.get("path", cfg.data.path);
    r.get("train_limit", cfg.data.train_limit);
    r.get("val_limit", cfg.data.val_limit);
    if (const json* syn = r.sub("synthetic")) {
      detail::KeyReader sr(*syn, "data.synthetic");
      sr.get("classes", cfg.data.classes);
      sr.get("train_per_class", cfg.data.train_per_class);
      sr.get("val_per_class", cfg.data.val_per_class);
      sr.get("noise", cfg.data.noise);
      sr.get("seed", cfg.data.seed);
      sr.get("fixed_position", cfg.data.fixed_position);
      sr.reject_unknown();
    }
    r.reject_unknown();
    if (cfg.data.source != "synthetic" && cfg.data.source != "cifar10" &&
        cfg.data.source != "cifar100")
      throw ConfigError("config key 'data.source' must be synthetic, cifar10 or cifar100, got \"" +
                        cfg.data.source + "\"");
  }
  if (const json* o = top.sub("output")) {
    detail::KeyReader r(*o, "output");
    r.get("dir", cfg.output_dir);
    r.reject_unknown();
  }
  top.reject_unknown();
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json root;
  try {
    root = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  return parse_run_config(root);
}

inline json to_json(const RunConfig& cfg) {
  json stages = json::array();
  for (const auto& s : cfg.model.stages)
    stages.push_back({{"out_channels", s.out_channels}, {"blocks", s.num_blocks}, {"stride", s.stride}});
  const auto& b = cfg.rkan.block;
  return {
      {"model",
       {{"in_channels", cfg.model.in_channels},
        {"stem_channels", cfg.model.stem_channels},
        {"stages", stages},
        {"num_classes", cfg.model.num_classes},
        {"affine_norm", cfg.model.affine_norm}}},
      {"rkan",
       {{"enabled", cfg.rkan.enabled},
        {"stages", std::vector<int>(cfg.rkan.stages.begin(), cfg.rkan.stages.end())},
        {"reduce_factor", b.reduce_factor},
        {"basis", b.family == BasisFamily::rbf ? "rbf" : "chebyshev"},
        {"degrees", {b.degrees[0], b.degrees[1]}},
        {"rbf", {{"centers", b.rbf.centers}, {"width", b.rbf.width}}},
        {"zero_init_expand", b.zero_init_expand},
        {"second_kan", b.second_kan}}},
      {"train",
       {{"epochs", cfg.train.epochs},
        {"batch_size", cfg.train.batch_size},
        {"base_lr", cfg.train.base_lr},
        {"peak_lr", cfg.train.peak_lr},
        {"final_lr", cfg.train.final_lr},
        {"warmup_epochs", cfg.train.warmup_epochs},
        {"momentum", cfg.train.momentum},
        {"weight_decay", cfg.train.weight_decay},
        {"seed", cfg.train.seed},
        {"flip", cfg.train.flip},
        {"grad_clip", cfg.train.grad_clip}}},
      {"data",
       {{"source", cfg.data.source},
        {"path", cfg.data.path},
        {"train_limit", cfg.data.train_limit},
        {"val_limit", cfg.data.val_limit},
        {"synthetic",
         {{"classes", cfg.data.classes},
          {"train_per_class", cfg.data.train_per_class},
          {"val_per_class", cfg.data.val_per_class},
          {"noise", cfg.data.noise},
          {"seed", cfg.data.seed},
          {"fixed_position", cfg.data.fixed_position}}}}},
      {"output", {{"dir", cfg.output_dir}}}};
}

struct TrainValData {
  Dataset train;
  Dataset val;
};

namespace detail {
inline void truncate(Dataset& ds, std::size_t limit) {
  if (limit == 0 || limit >= ds.size()) return;
  ds.labels.resize(limit);
  ds.images.resize(limit * ds.image_bytes());
  if (!ds.coarse_labels.empty()) ds.coarse_labels.resize(limit);
}
}  // namespace detail

/// Materializes the train and validation splits a config describes.
inline TrainValData load_data(const DataConfig& d) {
  TrainValData out;
  if (d.source == "synthetic") {
    SyntheticConfig sc;
    sc.classes = d.classes;
    sc.noise = d.noise;
    sc.fixed_position = d.fixed_position;
    sc.per_class = d.train_per_class;
    sc.seed = d.seed;
    out.train = generate_synthetic(sc);
    sc.per_class = d.val_per_class;
    sc.seed = d.seed + 1;
    out.val = generate_synthetic(sc);
    out.train.split = "train";
    out.val.split = "val";
  } else {
    if (d.path.empty()) throw InputError("data.path is required for source " + d.source);
    if (!std::filesystem::exists(d.path)) throw InputError("data path does not exist: " + d.path);
    if (d.source == "cifar10") {
      out.train = load_cifar10(d.path, "train");
      out.val = std::filesystem::is_regular_file(d.path) ? out.train : load_cifar10(d.path, "test");
    } else {
      out.train = load_cifar100(d.path, "train");
      out.val = std::filesystem::is_regular_file(d.path) ? out.train : load_cifar100(d.path, "test");
    }
  }
  detail::truncate(out.train, d.train_limit);
  detail::truncate(out.val, d.val_limit);
  return out;
}

}  // namespace rkan
