#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "rkan/config.hpp"
#include "rkan/gradcheck.hpp"
#include "rkan/rkan.hpp"

namespace rkan {

enum ExitCode : int { kExitOk = 0, kExitFailed = 1, kExitConfig = 2, kExitInput = 3 };

namespace detail {

inline std::filesystem::path ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw InputError("cannot create output directory " + dir);
  return std::filesystem::path(dir);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
  if (!out) throw InputError("short write to " + path.string());
}

template <typename T>
json parameter_manifest(Model<T>& model) {
  json params = json::array();
  for (auto* p : model.parameters())
    params.push_back({{"name", p->name}, {"shape", p->value.shape()}, {"size", p->value.size()}});
  return params;
}

}  // namespace detail

// ----------------------------------------------------------------------------
// train / eval
// ----------------------------------------------------------------------------

struct TrainOutcome {
  RunMetrics metrics;
  std::filesystem::path out_dir;
  int exit_code = kExitOk;
};

/// Runs one training job and writes metrics.csv, checkpoint.bin,
/// effective_config.json and model.json into the output directory.
inline TrainOutcome cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& log) {
  cfg.train.validate();
  const TrainValData data = load_data(cfg.data);
  const BackboneSpec spec = cfg.backbone(data.train.num_classes);
  auto model = build_model<double>(spec, cfg.train.seed);

  TrainOutcome result;
  result.out_dir = detail::ensure_dir(cfg.output_dir);
  RunConfig effective = cfg;
  effective.model.num_classes = spec.num_classes;
  detail::write_text(result.out_dir / "effective_config.json", to_json(effective).dump(2) + "\n");

  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& r) {
    log << "epoch " << r.epoch << "  loss " << std::setprecision(5) << r.train_loss << "  val "
        << r.val_top1 << "  lr " << r.lr << "  " << std::setprecision(4) << r.throughput
        << " img/s\n";
  };
  result.metrics = train_run(*model, data.train, data.val, cfg.train, hooks);
  const auto params = model->parameters();
  write_metrics_csv((result.out_dir / "metrics.csv").string(), result.metrics);
  save_checkpoint((result.out_dir / "checkpoint.bin").string(), params);
  json manifest = {{"parameters", detail::parameter_manifest(*model)},
                   {"total_parameters", model->parameter_census()},
                   {"rkan_parameters", model->rkan_parameter_census()},
                   {"num_classes", spec.num_classes}};
  detail::write_text(result.out_dir / "model.json", manifest.dump(2) + "\n");

  json summary = {{"epochs_completed", result.metrics.epochs.size()},
                  {"best_val_top1", result.metrics.best_top1},
                  {"init_val_top1", result.metrics.init_val_top1},
                  {"final_train_top1", result.metrics.final_train_top1},
                  {"cv_full", result.metrics.cv_full},
                  {"cv_last_half", result.metrics.cv_last_half},
                  {"aborted", result.metrics.aborted},
                  {"output_dir", result.out_dir.string()}};
  if (result.metrics.aborted) {
    summary["abort_reason"] = result.metrics.abort_reason;
    log << "training aborted at " << result.metrics.abort_reason << "\n";
    result.exit_code = kExitFailed;
  }
  out << summary.dump() << "\n";
  return result;
}

/// Top-1 of a stored checkpoint on both splits of the configured data.
inline int cmd_eval(const RunConfig& cfg, const std::string& checkpoint, std::ostream& out,
                    std::ostream& log) {
  const TrainValData data = load_data(cfg.data);
  const BackboneSpec spec = cfg.backbone(data.train.num_classes);
  auto model = build_model<double>(spec, cfg.train.seed);
  load_checkpoint(checkpoint, model->parameters());
  const Preprocessor pre = Preprocessor::fit(data.train);
  const double val = evaluate_top1(*model, data.val, pre);
  const double train = evaluate_top1(*model, data.train, pre);
  log << "val top-1 " << val << "  train top-1 " << train << "\n";
  out << json{{"checkpoint", checkpoint}, {"val_top1", val}, {"train_top1", train}}.dump()
      << "\n";
  return kExitOk;
}

// ----------------------------------------------------------------------------
// gradcheck
// ----------------------------------------------------------------------------

struct GradcheckRequest {
  std::string target = "all";
  int degree = 3;
  std::uint64_t seed = 7;
};

inline const std::vector<std::string>& gradcheck_targets() {
  static const std::vector<std::string> names{"conv2d", "linear", "kanconv", "kanconv-rbf",
                                              "rkan",   "model",  "all"};
  return names;
}

/// Accepts "kanconv" plus the inline form "kanconv,D=2".
inline GradcheckRequest parse_gradcheck_target(const std::string& spec, int degree) {
  GradcheckRequest req;
  req.degree = degree;
  std::stringstream ss(spec);
  std::string part;
  std::getline(ss, req.target, ',');
  while (std::getline(ss, part, ',')) {
    const auto eq = part.find('=');
    const std::string key = part.substr(0, eq);
    if (eq == std::string::npos || (key != "D" && key != "degree"))
      throw ConfigError("gradcheck target option '" + part + "' not understood (use D=<degree>)");
    try {
      req.degree = std::stoi(part.substr(eq + 1));
    } catch (const std::exception&) {
      throw ConfigError("gradcheck target option '" + part + "' needs an integer degree");
    }
  }
  const auto& names = gradcheck_targets();
  if (std::find(names.begin(), names.end(), req.target) == names.end()) {
    std::string msg = "unknown gradcheck target '" + req.target + "'; available:";
    for (const auto& n : names) msg += " " + n;
    throw ConfigError(msg);
  }
  return req;
}

struct GradcheckRow {
  std::string target;
  GradcheckReport report;
};

namespace detail {

inline Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0,
                                    double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

class LinearProbe final : public Module<double> {
 public:
  LinearProbe(std::size_t in, std::size_t out) : layer_("head", in, out) {}
  Tensor<double> forward(const Tensor<double>& x) override { return layer_.forward(x); }
  Tensor<double> backward(const Tensor<double>& g) override { return layer_.backward(g); }
  void collect_parameters(ParameterList<double>& out) override { layer_.collect_parameters(out); }
  void init(std::uint64_t seed) override {
    layer_.init(seed);
    auto rng = stream_for(seed, "head.bias");
    std::uniform_real_distribution<double> dist(-0.5, 0.5);
    for (auto& v : layer_.bias().value.values()) v = dist(rng);
  }

 private:
  Linear<double> layer_;
};

}  // namespace detail

/// The micro backbone sized for a quick full-model check.
inline BackboneSpec gradcheck_model_spec(bool with_rkan) {
  BackboneSpec spec;
  spec.num_classes = 10;
  if (with_rkan) spec.rkan_stages = {4};
  return spec;
}

inline std::vector<GradcheckRow> run_gradcheck(const GradcheckRequest& req) {
  std::vector<GradcheckRow> rows;
  GradcheckOptions opt;
  opt.seed = req.seed;
  const bool all = req.target == "all";
  auto want = [&](const char* name) { return all || req.target == name; };

  if (want("conv2d")) {
    Conv2d<double> conv("conv", 3, 4, 3, 2, 1, true);
    conv.init(req.seed);
    for (auto& v : conv.bias().value.values()) v = 0.1;
    rows.push_back({"conv2d", gradcheck_module(conv, detail::random_tensor({2, 3, 7, 6}, req.seed))});
  }
  if (want("linear")) {
    detail::LinearProbe head(12, 5);
    head.init(req.seed);
    rows.push_back({"linear", gradcheck_module(head, detail::random_tensor({3, 12}, req.seed))});
  }
  auto kan_check = [&](const std::string& label, BasisKind basis) {
    KanConvOptions o;
    o.in_channels = 3;
    o.out_channels = 4;
    o.stride = 1;
    o.padding = 1;
    o.basis = basis;
    KanConv2d<double> kan("kan", o);
    kan.init(req.seed);
    rows.push_back({label, gradcheck_module(kan, detail::random_tensor({2, 3, 6, 6}, req.seed, -2, 2))});
  };
  if (want("kanconv")) {
    if (all) {
      kan_check("kanconv,D=2", Chebyshev{2});
      kan_check("kanconv,D=3", Chebyshev{3});
    } else {
      kan_check("kanconv,D=" + std::to_string(req.degree), Chebyshev{req.degree});
    }
  }
  if (want("kanconv-rbf")) kan_check("kanconv-rbf", GaussianRbf{});
  if (want("rkan")) {
    RkanBlockConfig c;
    c.in_channels = 8;
    c.stage_channels = 8;
    c.reduce_factor = 2;
    c.stride = 2;
    RkanBlock<double> block("rkan", c);
    block.init(req.seed);
    rows.push_back({"rkan", gradcheck_module(block, detail::random_tensor({2, 8, 6, 6}, req.seed))});
  }
  if (want("model")) {
    auto model = build_model<double>(gradcheck_model_spec(true), req.seed);
    GradcheckOptions mopt = opt;
    mopt.max_coords = 12;
    mopt.max_input_coords = 48;
    const auto x = detail::random_tensor({2, 3, 32, 32}, req.seed);
    rows.push_back({"model", gradcheck_model(*model, x, {1, 7}, mopt)});
  }
  return rows;
}

inline int cmd_gradcheck(const GradcheckRequest& req, std::ostream& out, std::ostream& log) {
  const auto rows = run_gradcheck(req);
  bool ok = true;
  out << "target,parameters,coords,max_rel_err,tolerance,pass\n";
  for (const auto& r : rows) {
    std::size_t coords = 0;
    for (const auto& e : r.report.entries) coords += e.coords;
    out << r.target << ',' << r.report.entries.size() << ',' << coords << ','
        << std::scientific << std::setprecision(3) << r.report.max_rel_err << ','
        << r.report.tolerance << std::defaultfloat << ',' << (r.report.passed ? 1 : 0) << '\n';
    ok = ok && r.report.passed;
    log << (r.report.passed ? "ok    " : "FAIL  ") << r.target << "  max rel err "
        << r.report.max_rel_err;
    if (r.report.kinks_skipped() > 0)
      log << "  (" << r.report.kinks_skipped() << " kink-crossing coordinates replaced)";
    log << "\n";
  }
  return ok ? kExitOk : kExitFailed;
}

// ----------------------------------------------------------------------------
// bench
// ----------------------------------------------------------------------------

struct BenchRequest {
  std::vector<std::string> bases{"chebyshev", "rbf"};
  std::vector<std::string> precisions{"double"};
  std::size_t repeat = 3;
  std::size_t batch = 16;
  std::size_t iterations = 2;
  std::uint64_t seed = 0;
};

struct BenchRow {
  std::string basis;
  std::string precision;
  std::string pass;  // forward | forward_backward
  double img_per_s = 0.0;
  std::size_t params = 0;
};

namespace detail {

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <typename T>
void bench_model(const BackboneSpec& spec, const BenchRequest& req, const std::string& basis,
                 const std::string& precision, std::vector<BenchRow>& rows) {
  auto model = build_model<T>(spec, req.seed);
  Tensor<T> x({req.batch, spec.in_channels, 32, 32});
  std::mt19937_64 rng(req.seed + 17);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& v : x.values()) v = static_cast<T>(dist(rng));
  std::vector<int> labels(req.batch);
  for (std::size_t b = 0; b < req.batch; ++b) labels[b] = static_cast<int>(b % spec.num_classes);

  auto fwd = [&] { model->forward(x); };
  auto fwd_bwd = [&] {
    model->zero_grad();
    model->backward(softmax_cross_entropy<T>(model->forward(x), labels).grad);
  };
  auto time_pass = [&](auto&& fn) {
    fn();  // warmup
    std::vector<double> rates;
    for (std::size_t r = 0; r < req.repeat; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      for (std::size_t i = 0; i < req.iterations; ++i) fn();
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      rates.push_back(throughput(static_cast<double>(req.batch * req.iterations),
                                 std::max(s, 1e-9)));
    }
    return median(rates);
  };
  const std::size_t params = model->parameter_census();
  rows.push_back({basis, precision, "forward", time_pass(fwd), params});
  rows.push_back({basis, precision, "forward_backward", time_pass(fwd_bwd), params});
}

}  // namespace detail

/// Throughput of the RKAN-augmented backbone per basis and precision on
/// in-memory batches; data loading never enters the timed region.
inline std::vector<BenchRow> run_bench(const RunConfig& cfg, const BenchRequest& req) {
  if (req.repeat == 0) throw ConfigError("bench --repeat must be positive");
  if (req.batch == 0) throw ConfigError("bench --batch must be positive");
  std::vector<BenchRow> rows;
  for (const auto& basis : req.bases) {
    RunConfig c = cfg;
    c.rkan.enabled = true;
    c.rkan.block.family = detail::parse_family(basis);
    const BackboneSpec spec = c.backbone(cfg.model.num_classes ? cfg.model.num_classes : 10);
    spec.validate();
    for (const auto& precision : req.precisions) {
      if (precision == "double")
        detail::bench_model<double>(spec, req, basis, precision, rows);
      else if (precision == "single")
        detail::bench_model<float>(spec, req, basis, precision, rows);
      else
        throw ConfigError("bench --precision must be double or single, got \"" + precision + "\"");
    }
  }
  return rows;
}

inline std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "basis,precision,pass,img_per_s,params\n";
  for (const auto& r : rows)
    os << r.basis << ',' << r.precision << ',' << r.pass << ',' << std::fixed
       << std::setprecision(2) << r.img_per_s << std::defaultfloat << ',' << r.params << '\n';
  return os.str();
}

inline int cmd_bench(const RunConfig& cfg, const BenchRequest& req, std::ostream& out,
                     std::ostream& log) {
  const auto rows = run_bench(cfg, req);
  out << bench_csv(rows);
  for (const auto& r : rows)
    log << r.basis << " " << r.precision << " " << r.pass << ": " << r.img_per_s << " img/s ("
        << r.params << " params)\n";
  return kExitOk;
}

// ----------------------------------------------------------------------------
// params
// ----------------------------------------------------------------------------

struct ParamsReport {
  std::vector<LayerParameterCount> layers;  // every KAN-branch layer of the augmented model
  std::size_t baseline_total = 0;
  std::size_t augmented_total = 0;
  std::size_t analytic_rkan_total = 0;
  bool census_matches = true;

  std::size_t delta() const { return augmented_total - baseline_total; }
  bool consistent() const { return census_matches && delta() == analytic_rkan_total; }
};

inline ParamsReport run_params(const RunConfig& cfg) {
  const std::size_t classes = cfg.model.num_classes ? cfg.model.num_classes : cfg.data.classes;
  RunConfig base = cfg;
  base.rkan.enabled = false;
  ParamsReport rep;
  rep.baseline_total = Model<double>(base.backbone(classes)).parameter_census();
  Model<double> augmented(cfg.backbone(classes));
  rep.augmented_total = augmented.parameter_census();
  for (int s = 1; s <= 4; ++s) {
    auto* block = augmented.rkan_block(s);
    if (!block) continue;
    for (auto& row : block->parameter_breakdown()) {
      rep.census_matches = rep.census_matches && row.census == row.analytic;
      rep.analytic_rkan_total += row.analytic;
      rep.layers.push_back(row);
    }
  }
  return rep;
}

inline std::string params_csv(const ParamsReport& rep) {
  std::ostringstream os;
  os << "layer,kind,census,analytic,match\n";
  for (const auto& l : rep.layers)
    os << l.name << ',' << l.kind << ',' << l.census << ',' << l.analytic << ','
       << (l.census == l.analytic ? 1 : 0) << '\n';
  os << "total.baseline,model," << rep.baseline_total << ',' << rep.baseline_total << ",1\n";
  os << "total.augmented,model," << rep.augmented_total << ','
     << rep.baseline_total + rep.analytic_rkan_total << ','
     << (rep.augmented_total == rep.baseline_total + rep.analytic_rkan_total ? 1 : 0) << '\n';
  os << "total.delta,rkan," << rep.delta() << ',' << rep.analytic_rkan_total << ','
     << (rep.delta() == rep.analytic_rkan_total ? 1 : 0) << '\n';
  return os.str();
}

inline int cmd_params(const RunConfig& cfg, std::ostream& out, std::ostream& log) {
  const auto rep = run_params(cfg);
  out << params_csv(rep);
  log << "baseline " << rep.baseline_total << "  augmented " << rep.augmented_total << "  delta "
      << rep.delta() << (rep.consistent() ? "  (census matches closed form)\n"
                                          : "  (MISMATCH against closed form)\n");
  return rep.consistent() ? kExitOk : kExitFailed;
}

// ----------------------------------------------------------------------------
// gen-data
// ----------------------------------------------------------------------------

struct GenDataOutcome {
  std::filesystem::path data_file;
  std::filesystem::path manifest_file;
  std::size_t records = 0;
};

inline std::string synthetic_manifest(const SyntheticConfig& sc, std::size_t records) {
  std::ostringstream os;
  os << "format cifar10-binary\n";
  os << "seed " << sc.seed << "\n";
  os << "records " << records << "\n";
  os << "per_class " << sc.per_class << "\n";
  os << "noise " << sc.noise << "\n";
  os << "fixed_position " << (sc.fixed_position ? 1 : 0) << "\n";
  for (std::size_t k = 0; k < sc.classes; ++k) os << "class " << k << " " << kShapeNames[k] << "\n";
  return os.str();
}

/// Writes <out>/synthetic.bin in the CIFAR-10 record layout and
/// <out>/manifest.txt with the seed and class map.
inline GenDataOutcome cmd_gen_data(const SyntheticConfig& sc, const std::string& out_dir,
                                   std::ostream& out, std::ostream& log) {
  if (sc.size != 32) throw ConfigError("gen-data writes 32x32 CIFAR records; size must be 32");
  const Dataset ds = generate_synthetic(sc);
  const auto dir = detail::ensure_dir(out_dir);
  GenDataOutcome res{dir / "synthetic.bin", dir / "manifest.txt", ds.size()};
  write_file_bytes(res.data_file.string(), serialize_cifar10(ds));
  detail::write_text(res.manifest_file, synthetic_manifest(sc, ds.size()));
  out << json{{"data", res.data_file.string()},
              {"manifest", res.manifest_file.string()},
              {"records", res.records}}
             .dump()
      << "\n";
  log << "wrote " << res.records << " records to " << res.data_file.string() << "\n";
  return res;
}

}  // namespace rkan
