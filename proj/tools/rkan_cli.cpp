#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rkan/commands.hpp"

namespace {

rkan::RunConfig resolve_config(const std::string& path, std::optional<std::uint64_t> seed,
                               const std::string& out) {
  rkan::RunConfig cfg = path.empty() ? rkan::RunConfig{} : rkan::load_run_config(path);
  if (seed) cfg.train.seed = *seed;
  if (!out.empty()) cfg.output_dir = out;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  rkan::tune_allocator();
  CLI::App app{"Residual KAN blocks on a micro ResNet: training, checks and benchmarks"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint;
  std::optional<std::uint64_t> seed;
  auto common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON run config")->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "overrides train.seed");
    cmd->add_option("--out", out_dir, "output directory");
  };

  auto* train = app.add_subcommand("train", "train a model and write metrics, checkpoint, config");
  common(train);
  auto* eval = app.add_subcommand("eval", "top-1 of a checkpoint on the configured data");
  common(eval);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file (default <out>/checkpoint.bin)");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  std::string target = "all";
  int degree = 3;
  grad->add_option("--target", target, "conv2d|linear|kanconv[,D=d]|kanconv-rbf|rkan|model|all");
  grad->add_option("--degree", degree, "Chebyshev degree for kanconv");
  grad->add_option("--seed", seed, "seed for inputs and weights");

  auto* bench = app.add_subcommand("bench", "forward and forward+backward throughput");
  common(bench);
  rkan::BenchRequest breq;
  bench->add_option("--basis", breq.bases, "chebyshev and/or rbf")->delimiter(',');
  bench->add_option("--precision", breq.precisions, "double and/or single")->delimiter(',');
  bench->add_option("--repeat", breq.repeat, "timed repetitions; the median is reported");
  bench->add_option("--batch", breq.batch, "images per timed batch");
  bench->add_option("--iterations", breq.iterations, "batches per repetition");

  auto* params = app.add_subcommand("params", "per-layer parameter census against closed form");
  common(params);

  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset in CIFAR-10 layout");
  rkan::SyntheticConfig sc;
  gen->add_option("--seed", seed, "generator seed");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--classes", sc.classes, "number of shape classes (2-4)");
  gen->add_option("--per-class", sc.per_class, "images per class");
  gen->add_option("--noise", sc.noise, "additive noise sigma");
  gen->add_flag("--fixed-position", sc.fixed_position, "centered shapes of fixed size");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      const auto cfg = resolve_config(config_path, seed, out_dir);
      return rkan::cmd_train(cfg, std::cout, std::cerr).exit_code;
    }
    if (*eval) {
      const auto cfg = resolve_config(config_path, seed, out_dir);
      const std::string ckpt =
          checkpoint.empty() ? (std::filesystem::path(cfg.output_dir) / "checkpoint.bin").string()
                             : checkpoint;
      return rkan::cmd_eval(cfg, ckpt, std::cout, std::cerr);
    }
    if (*grad) {
      auto req = rkan::parse_gradcheck_target(target, degree);
      if (seed) req.seed = *seed;
      return rkan::cmd_gradcheck(req, std::cout, std::cerr);
    }
    if (*bench) {
      const auto cfg = resolve_config(config_path, seed, out_dir);
      if (seed) breq.seed = *seed;
      return rkan::cmd_bench(cfg, breq, std::cout, std::cerr);
    }
    if (*params) return rkan::cmd_params(resolve_config(config_path, seed, out_dir), std::cout, std::cerr);
    if (*gen) {
      if (seed) sc.seed = *seed;
      rkan::cmd_gen_data(sc, out_dir, std::cout, std::cerr);
      return rkan::kExitOk;
    }
  } catch (const rkan::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return rkan::kExitConfig;
  } catch (const rkan::GeometryError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return rkan::kExitConfig;
  } catch (const rkan::InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return rkan::kExitInput;
  } catch (const rkan::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return rkan::kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return rkan::kExitFailed;
  }
  return rkan::kExitOk;
}
