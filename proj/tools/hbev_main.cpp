#include <optional>
#include <string>

#include <CLI11.hpp>

#include "hbev/cli.hpp"

using namespace hbev;

int main(int argc, char** argv) {
  CLI::App app{"hbev: camera-to-BEV pipeline with height-sequence attention"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  std::optional<int> precision;
  bool parallel = false;

  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--seed", seed, "random seed (overrides config)");
  app.add_option("--precision", precision, "float width: 32 or 64")
      ->check(CLI::IsMember({32, 64}));
  app.add_option("--out", out_dir, "output directory");
  app.add_flag("--parallel", parallel, "run kernels across hardware threads");

  auto* build = app.add_subcommand("build-table", "precompute the voxel mapping table");
  std::string calib_path;
  build->add_option("--calib", calib_path, "calibration JSON file")->required();

  auto* forward = app.add_subcommand("forward", "run the full forward pipeline");
  std::string table_path, features_path, params_path, dump_params_dir;
  forward->add_option("--table", table_path, "HMAP mapping table file")->required();
  forward->add_option("--features", features_path,
                      "HTEN image features; omitted -> synthetic from seed");
  forward->add_option("--params", params_path, "parameter bundle manifest.json");
  forward->add_option("--dump-params", dump_params_dir,
                      "write the parameter bundle to this directory");

  auto* verify = app.add_subcommand("verify", "run equivalence and gradient suites");
  bool inject_fault = false;
  verify->add_flag("--inject-fault", inject_fault,
                   "corrupt the bijection fixture (negative control)");

  auto* bench = app.add_subcommand("bench", "vanilla vs height attention scaling sweep");
  std::optional<int> repeats;
  bench->add_option("--repeats", repeats, "timing repeats per size (median)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::kExitInvalidInput;
  }

  RunConfig cfg;
  try {
    if (!config_path.empty()) cfg = load_config(config_path);
  } catch (const io_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kExitMissingFile;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kExitInvalidInput;
  }
  if (seed) cfg.seed = *seed;
  if (precision) cfg.precision = *precision;
  if (parallel) cfg.parallel = true;
  if (repeats) cfg.bench_repeats = *repeats;

  if (build->parsed()) return cli::cmd_build_table(calib_path, cfg, out_dir);
  if (forward->parsed()) {
    return cli::cmd_forward(table_path, features_path, cfg, out_dir, params_path,
                            dump_params_dir);
  }
  if (verify->parsed()) return cli::cmd_verify(cfg, inject_fault);
  if (bench->parsed()) return cli::cmd_bench(cfg, out_dir);
  return cli::kExitInvalidInput;
}
