#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "hbev/pipeline.hpp"
#include "hbev/verify.hpp"

namespace hbev::cli {

// Exit codes: 0 success, 1 verification failure, 2 invalid input, 3 missing
// file.
inline constexpr int kExitOk = 0;
inline constexpr int kExitVerifyFailed = 1;
inline constexpr int kExitInvalidInput = 2;
inline constexpr int kExitMissingFile = 3;

namespace detail {

template <typename Body>
int guard(Body&& body) {
  try {
    return body();
  } catch (const io_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitMissingFile;
  } catch (const config_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalidInput;
  } catch (const shape_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalidInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalidInput;
  }
}

inline void apply_thread_mode(const RunConfig& cfg) {
  threading::set_threads(cfg.parallel ? std::max(1u, std::thread::hardware_concurrency())
                                      : 1u);
}

// Every command that writes artifacts also records the run inputs (seed,
// precision, key config) beside them.
inline void write_run_record(const std::filesystem::path& out, const char* command,
                             const RunConfig& cfg, const FlopLedger* ledger = nullptr) {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["seed"] = cfg.seed;
  j["precision"] = cfg.precision;
  j["parallel"] = cfg.parallel;
  j["channels"] = cfg.channels;
  j["num_blocks"] = cfg.num_blocks;
  j["grid"] = {cfg.grid().dims.x, cfg.grid().dims.y, cfg.grid().dims.z};
  j["stride"] = cfg.stride;
  if (ledger != nullptr) {
    j["macs"] = {{"qk", ledger->qk_macs()},
                 {"sv", ledger->sv_macs()},
                 {"other", ledger->other_macs()}};
  }
  hbev::detail::atomic_write_file(out / "run.json", [&](std::ostream& os) {
    os << j.dump(2) << "\n";
  });
}

inline nlohmann::ordered_json check_to_json(const CheckResult& c) {
  nlohmann::ordered_json j;
  j["name"] = c.name;
  j["passed"] = c.passed;
  j["skipped"] = c.skipped;
  j["max_dev"] = c.max_dev;
  j["tolerance"] = c.tolerance;
  j["detail"] = c.detail;
  return j;
}

template <typename T>
int forward_with_precision(const MappingTable& table, const RunConfig& cfg,
                           const std::string& features_path,
                           const std::string& params_path,
                           const std::string& dump_params_dir,
                           const std::filesystem::path& out) {
  Tensor<T> img;
  if (features_path.empty()) {
    img = synthetic_features<T>(cfg);
  } else {
    img = load_tensor<T>(features_path);
    if (img.rank() != 3) throw config_error("features file must hold dims (C,Hf,Wf)");
  }

  PipelineParams<T> params;
  if (params_path.empty()) {
    params = seeded_params<T>(cfg, table.dims);
  } else {
    params = load_param_bundle<T>(params_path);
  }
  if (!dump_params_dir.empty()) {
    save_param_bundle(params, dump_params_dir);
    std::cout << "wrote parameter bundle to " << dump_params_dir << "\n";
  }

  const ForwardResult<T> result = run_forward(img, table, cfg, params);
  save_tensor(result.refined_voxels, out / "voxel_refined.hten");
  save_tensor(result.bev, out / "bev.hten");
  write_run_record(out, "forward", cfg, &result.ledger);

  const Dims3 d = table.dims;
  const PartitionSpec spec = cfg.partition_for(d);
  std::cout << "forward: grid (" << d.x << "," << d.y << "," << d.z << ") C="
            << cfg.channels << " blocks=" << cfg.num_blocks << " spec=(" << spec.x
            << "," << spec.y << "," << spec.z << ") precision=" << cfg.precision
            << " seed=" << cfg.seed << "\n";
  std::cout << "macs: qk=" << result.ledger.qk_macs()
            << " sv=" << result.ledger.sv_macs()
            << " other=" << result.ledger.other_macs()
            << " tracked=" << result.ledger.tracked_macs() << "\n";
  std::cout << "wrote " << (out / "voxel_refined.hten").string() << "\n";
  std::cout << "wrote " << (out / "bev.hten").string() << "\n";
  return kExitOk;
}

}  // namespace detail

// Builds the voxel->feature mapping table from a calibration file and writes
// the HMAP binary next to a short summary (dims, valid-entry fraction).
inline int cmd_build_table(const std::string& calib_path, const RunConfig& cfg,
                           const std::string& out_dir) {
  return detail::guard([&]() -> int {
    cfg.validate();
    const CameraCalib calib = load_calib(calib_path);
    const VoxelGrid grid = cfg.grid();
    detail::apply_thread_mode(cfg);
    const MappingTable table =
        build_mapping_table(calib, grid, calib.image_h, calib.image_w, cfg.stride);

    std::size_t valid = 0;
    for (std::size_t i = 0; i < table.dims.count(); ++i)
      if (table.valid_at(i)) ++valid;

    const std::filesystem::path out(out_dir);
    std::filesystem::create_directories(out);
    const std::filesystem::path path = out / "mapping_table.hmap";
    save_mapping_table(table, path);
    detail::write_run_record(out, "build-table", cfg);

    char frac[32];
    std::snprintf(frac, sizeof(frac), "%.6f",
                  static_cast<double>(valid) / static_cast<double>(table.dims.count()));
    std::cout << "mapping table: dims (" << table.dims.x << "," << table.dims.y << ","
              << table.dims.z << ") features (" << table.feat_h << "," << table.feat_w
              << ") valid_fraction=" << frac << "\n";
    std::cout << "wrote " << path.string() << "\n";
    return kExitOk;
  });
}

// Runs the full pipeline: view transform, transformer blocks on height
// sequences, height-distribution prediction, BEV compression. Features come
// from an HTEN file or are synthesized from the seed.
inline int cmd_forward(const std::string& table_path, const std::string& features_path,
                       const RunConfig& cfg, const std::string& out_dir,
                       const std::string& params_path = "",
                       const std::string& dump_params_dir = "") {
  return detail::guard([&]() -> int {
    cfg.validate();
    const MappingTable table = load_mapping_table(table_path);
    detail::apply_thread_mode(cfg);
    const std::filesystem::path out(out_dir);
    std::filesystem::create_directories(out);
    if (cfg.precision == 64) {
      return detail::forward_with_precision<double>(table, cfg, features_path,
                                                    params_path, dump_params_dir, out);
    }
    return detail::forward_with_precision<float>(table, cfg, features_path,
                                                 params_path, dump_params_dir, out);
  });
}

// Runs the equivalence and gradient suites; prints a machine-readable JSON
// summary. Exit 0 iff every check passes.
inline int cmd_verify(const RunConfig& cfg, bool inject_fault = false) {
  return detail::guard([&]() -> int {
    threading::set_threads(1);  // suites assert exact reproducibility
    EquivalenceOptions opts;
    opts.inject_fault = inject_fault;
    const SuiteReport equivalence =
        run_equivalence_suite(cfg.seed, default_equivalence_grids(), opts);
    const SuiteReport gradcheck = run_gradcheck_suite(cfg.seed);

    nlohmann::ordered_json summary;
    summary["command"] = "verify";
    summary["seed"] = cfg.seed;
    summary["checks"] = nlohmann::ordered_json::array();
    for (const auto& c : equivalence.checks)
      summary["checks"].push_back(detail::check_to_json(c));
    for (const auto& c : gradcheck.checks)
      summary["checks"].push_back(detail::check_to_json(c));
    const bool ok = equivalence.all_passed() && gradcheck.all_passed();
    summary["all_passed"] = ok;
    std::cout << summary.dump(2) << "\n";
    return ok ? kExitOk : kExitVerifyFailed;
  });
}

// Scaling sweep: vanilla vs height attention MACs and wall time per grid
// size, written as CSV with a fitted-slope summary.
inline int cmd_bench(const RunConfig& cfg, const std::string& out_dir) {
  return detail::guard([&]() -> int {
    cfg.validate();
    detail::apply_thread_mode(cfg);
    const std::vector<Dims3> grids =
        cfg.bench_grids.empty() ? default_bench_grids() : cfg.bench_grids;
    const PartitionSpec spec = cfg.partition_for(grids.front());

    BenchReport report;
    if (cfg.precision == 64) {
      report = run_scaling_benchmark<double>(grids, spec, cfg.channels,
                                             cfg.bench_repeats, cfg.seed);
    } else {
      report = run_scaling_benchmark<float>(grids, spec, cfg.channels,
                                            cfg.bench_repeats, cfg.seed);
    }

    const std::filesystem::path out(out_dir);
    std::filesystem::create_directories(out);
    const std::filesystem::path path = out / "bench.csv";
    hbev::detail::atomic_write_file(path,
                                    [&](std::ostream& os) { write_bench_csv(os, report); });
    detail::write_run_record(out, "bench", cfg);

    std::cout << "bench: C=" << cfg.channels << " spec=(" << spec.x << "," << spec.y
              << "," << spec.z << ") repeats=" << cfg.bench_repeats
              << " seed=" << cfg.seed << "\n";
    for (const OpSlopes& s : report.slopes) {
      if (s.valid) {
        char m[64], t[64];
        std::snprintf(m, sizeof(m), "%.12f", s.macs_slope);
        std::snprintf(t, sizeof(t), "%.6f", s.time_slope);
        std::cout << s.op << ": macs_slope=" << m << " time_slope=" << t << "\n";
      } else {
        std::cout << s.op << ": slopes not applicable (single-size sweep)\n";
      }
    }
    std::cout << "wrote " << path.string() << "\n";
    return kExitOk;
  });
}

}  // namespace hbev::cli
