#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hbev/attention.hpp"
#include "hbev/bev.hpp"
#include "hbev/geometry.hpp"
#include "hbev/kernels.hpp"
#include "hbev/rng.hpp"
#include "hbev/view_transform.hpp"

namespace hbev {

// One run's knobs. JSON config keys carry the same names; CLI flags override
// individual keys.
struct RunConfig {
  // perception range and grid
  double x_min = 0.0, x_max = 102.4;
  double y_min = -51.2, y_max = 51.2;
  double z_min = -1.0, z_max = 3.0;
  double resolution = 0.4;
  // image features
  std::size_t image_h = 864, image_w = 1536;
  std::size_t stride = 16;
  std::size_t channels = 16;
  // attention
  std::size_t part_x = 1, part_y = 1, part_z = 0;  // part_z 0 -> full height
  std::size_t num_blocks = 2;
  std::size_t num_heads = 1;
  std::size_t mlp_hidden = 0;  // 0 -> 4 * channels
  bool use_pos_embedding = false;
  // bev decoder
  std::string bev_mode = "weighted_sum";  // or "flatten_linear"
  // run
  int precision = 32;  // 32 or 64
  std::uint64_t seed = 0;
  bool parallel = false;
  int bench_repeats = 5;
  std::vector<Dims3> bench_grids;  // empty -> default sweep

  VoxelGrid grid() const {
    return make_voxel_grid({x_min, x_max}, {y_min, y_max}, {z_min, z_max},
                           resolution);
  }

  PartitionSpec partition_for(const Dims3& dims) const {
    return PartitionSpec{part_x, part_y, part_z == 0 ? dims.z : part_z};
  }

  std::size_t hidden() const { return mlp_hidden == 0 ? 4 * channels : mlp_hidden; }

  std::size_t feat_h() const { return image_h / stride; }
  std::size_t feat_w() const { return image_w / stride; }

  void validate() const {
    if (precision != 32 && precision != 64) {
      throw config_error("precision must be 32 or 64");
    }
    if (channels == 0) throw config_error("channels must be positive");
    if (num_heads == 0 || channels % num_heads != 0) {
      throw config_error("num_heads must divide channels");
    }
    if (stride == 0 || image_h % stride != 0 || image_w % stride != 0) {
      throw config_error("stride must divide image dims");
    }
    if (bev_mode != "weighted_sum" && bev_mode != "flatten_linear") {
      throw config_error("bev_mode must be weighted_sum or flatten_linear");
    }
    if (num_blocks == 0) throw config_error("num_blocks must be positive");
    const Dims3 dims = grid().dims;
    try {
      check_partition(dims, partition_for(dims));
    } catch (const shape_error& e) {
      throw config_error(e.what());
    }
  }
};

namespace detail {

inline void merge_config_json(RunConfig& cfg, const nlohmann::json& j) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
  };
  get("x_min", cfg.x_min);
  get("x_max", cfg.x_max);
  get("y_min", cfg.y_min);
  get("y_max", cfg.y_max);
  get("z_min", cfg.z_min);
  get("z_max", cfg.z_max);
  get("resolution", cfg.resolution);
  get("image_h", cfg.image_h);
  get("image_w", cfg.image_w);
  get("stride", cfg.stride);
  get("channels", cfg.channels);
  get("part_x", cfg.part_x);
  get("part_y", cfg.part_y);
  get("part_z", cfg.part_z);
  get("num_blocks", cfg.num_blocks);
  get("num_heads", cfg.num_heads);
  get("mlp_hidden", cfg.mlp_hidden);
  get("use_pos_embedding", cfg.use_pos_embedding);
  get("bev_mode", cfg.bev_mode);
  get("precision", cfg.precision);
  get("seed", cfg.seed);
  get("parallel", cfg.parallel);
  get("bench_repeats", cfg.bench_repeats);
  if (j.contains("bench_grids")) {
    cfg.bench_grids.clear();
    for (const auto& g : j["bench_grids"]) {
      if (!g.is_array() || g.size() != 3) {
        throw config_error("bench_grids entries must be [X, Y, Z]");
      }
      cfg.bench_grids.push_back(
          {g[0].get<std::size_t>(), g[1].get<std::size_t>(), g[2].get<std::size_t>()});
    }
  }
}

}  // namespace detail

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot open config file: " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("config JSON parse error: ") + e.what());
  }
  RunConfig cfg;
  detail::merge_config_json(cfg, j);
  return cfg;
}

// All learned weights of the forward pipeline. Seeded in a fixed draw order
// (blocks in order, then the height head, then optional extras), so a seed
// pins every value.
template <typename T>
struct PipelineParams {
  std::vector<LayerParams<T>> blocks;
  Tensor<T> head_w;   // (C)
  Tensor<T> head_b;   // (1)
  Tensor<T> pos_emb;  // (Z,C) when enabled, else empty
  Tensor<T> reducer_w, reducer_b;  // flatten_linear mode only

  bool has_pos_emb() const { return pos_emb.rank() != 0; }
  bool has_reducer() const { return reducer_w.rank() != 0; }
};

template <typename T>
PipelineParams<T> seeded_params(const RunConfig& cfg, const Dims3& dims) {
  NormalSampler rng(cfg.seed);
  PipelineParams<T> p;
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
    p.blocks.push_back(
        LayerParams<double>::seeded(cfg.channels, cfg.hidden(), rng)
            .template cast<T>());
  }
  Tensor<double> hw({cfg.channels});
  fill_normal(hw, rng, 1.0 / std::sqrt(static_cast<double>(cfg.channels)));
  Tensor<double> hb({1});
  fill_normal(hb, rng, 0.02);
  p.head_w = hw.template cast<T>();
  p.head_b = hb.template cast<T>();
  if (cfg.use_pos_embedding) {
    Tensor<double> emb({dims.z, cfg.channels});
    fill_normal(emb, rng, 0.02);
    p.pos_emb = emb.template cast<T>();
  }
  if (cfg.bev_mode == "flatten_linear") {
    Tensor<double> rw({cfg.channels * dims.z, cfg.channels});
    fill_normal(rw, rng, 1.0 / std::sqrt(static_cast<double>(cfg.channels * dims.z)));
    Tensor<double> rb({cfg.channels});
    fill_normal(rb, rng, 0.02);
    p.reducer_w = rw.template cast<T>();
    p.reducer_b = rb.template cast<T>();
  }
  return p;
}

// ---------------------------------------------------------------------------
// Parameter bundle: one HTEN file per named tensor plus a JSON manifest
// mapping name -> {file, dims}.
// ---------------------------------------------------------------------------

template <typename T>
void save_param_bundle(const PipelineParams<T>& params,
                       const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["version"] = 1;
  manifest["params"] = nlohmann::ordered_json::array();

  auto emit = [&](const std::string& name, const Tensor<T>& t) {
    std::string file = name;
    for (char& ch : file)
      if (ch == '.') ch = '_';
    file += ".hten";
    save_tensor(t, dir / file);
    nlohmann::ordered_json entry;
    entry["name"] = name;
    entry["file"] = file;
    entry["dims"] = t.dims();
    manifest["params"].push_back(entry);
  };

  const char* names[] = {"wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
                         "w1", "b1", "w2", "b2", "ln1_gain", "ln1_bias",
                         "ln2_gain", "ln2_bias"};
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    const LayerParams<T>& lp = params.blocks[b];
    const Tensor<T>* tensors[] = {&lp.wq, &lp.bq, &lp.wk, &lp.bk,
                                  &lp.wv, &lp.bv, &lp.wo, &lp.bo,
                                  &lp.w1, &lp.b1, &lp.w2, &lp.b2,
                                  &lp.ln1_gain, &lp.ln1_bias,
                                  &lp.ln2_gain, &lp.ln2_bias};
    for (std::size_t i = 0; i < 16; ++i) {
      emit("block" + std::to_string(b) + "." + names[i], *tensors[i]);
    }
  }
  emit("head.w", params.head_w);
  emit("head.b", params.head_b);
  if (params.has_pos_emb()) emit("pos_emb", params.pos_emb);
  if (params.has_reducer()) {
    emit("reducer.w", params.reducer_w);
    emit("reducer.b", params.reducer_b);
  }

  detail::atomic_write_file(dir / "manifest.json", [&](std::ostream& os) {
    os << manifest.dump(2) << "\n";
  });
}

template <typename T>
PipelineParams<T> load_param_bundle(const std::filesystem::path& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw io_error("cannot open manifest: " + manifest_path.string());
  nlohmann::json manifest;
  try {
    is >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("manifest parse error: ") + e.what());
  }
  const std::filesystem::path dir = manifest_path.parent_path();

  std::map<std::string, Tensor<T>> loaded;
  for (const auto& entry : manifest.at("params")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::string file = entry.at("file").get<std::string>();
    Tensor<T> t = load_tensor<T>(dir / file);
    const auto dims = entry.at("dims").get<std::vector<std::size_t>>();
    if (t.dims() != dims) {
      throw config_error("manifest dims disagree with tensor file for " + name);
    }
    loaded.emplace(name, std::move(t));
  }

  auto take = [&](const std::string& name) {
    auto it = loaded.find(name);
    if (it == loaded.end()) throw config_error("manifest missing parameter " + name);
    return it->second;
  };

  PipelineParams<T> p;
  for (std::size_t b = 0;; ++b) {
    const std::string prefix = "block" + std::to_string(b) + ".";
    if (loaded.find(prefix + "wq") == loaded.end()) break;
    LayerParams<T> lp;
    lp.wq = take(prefix + "wq");
    lp.bq = take(prefix + "bq");
    lp.wk = take(prefix + "wk");
    lp.bk = take(prefix + "bk");
    lp.wv = take(prefix + "wv");
    lp.bv = take(prefix + "bv");
    lp.wo = take(prefix + "wo");
    lp.bo = take(prefix + "bo");
    lp.w1 = take(prefix + "w1");
    lp.b1 = take(prefix + "b1");
    lp.w2 = take(prefix + "w2");
    lp.b2 = take(prefix + "b2");
    lp.ln1_gain = take(prefix + "ln1_gain");
    lp.ln1_bias = take(prefix + "ln1_bias");
    lp.ln2_gain = take(prefix + "ln2_gain");
    lp.ln2_bias = take(prefix + "ln2_bias");
    p.blocks.push_back(std::move(lp));
  }
  if (p.blocks.empty()) throw config_error("manifest holds no transformer blocks");
  p.head_w = take("head.w");
  p.head_b = take("head.b");
  if (loaded.count("pos_emb")) p.pos_emb = take("pos_emb");
  if (loaded.count("reducer.w")) {
    p.reducer_w = take("reducer.w");
    p.reducer_b = take("reducer.b");
  }
  return p;
}

// ---------------------------------------------------------------------------
// End-to-end forward pass
// ---------------------------------------------------------------------------

template <typename T>
struct ForwardResult {
  Tensor<T> refined_voxels;  // (C,X,Y,Z)
  Tensor<T> height_dist;     // (X,Y,Z)
  Tensor<T> bev;             // (C,X,Y)
  FlopLedger ledger;
};

// lift -> partition -> (optional position embedding) -> transformer blocks ->
// reverse -> height distribution -> compress.
template <typename T>
ForwardResult<T> run_forward(const Tensor<T>& img, const MappingTable& table,
                             const RunConfig& cfg, const PipelineParams<T>& params) {
  ForwardResult<T> result;
  const Tensor<T> vox = lift_features(img, table);
  const Dims3 dims = grid_dims(vox);
  const PartitionSpec spec = cfg.partition_for(dims);

  Tensor<T> seq = height_partition(vox, spec);
  if (params.has_pos_emb()) {
    seq = add_height_pos_embedding(seq, spec, dims, params.pos_emb);
  }
  for (const LayerParams<T>& block : params.blocks) {
    seq = transformer_block(seq, block, result.ledger, cfg.num_heads);
  }
  result.refined_voxels = height_reverse(seq, spec, dims);

  result.height_dist =
      predict_height_distribution(result.refined_voxels, params.head_w, params.head_b);
  if (cfg.bev_mode == "flatten_linear") {
    result.bev = compress_flatten_linear(result.refined_voxels, params.reducer_w,
                                         params.reducer_b, result.ledger);
  } else {
    result.bev = compress_to_bev(result.refined_voxels, result.height_dist);
  }
  return result;
}

// Synthetic image features: standard normal entries drawn from seed+1 so the
// feature stream is independent of the parameter stream.
template <typename T>
Tensor<T> synthetic_features(const RunConfig& cfg) {
  NormalSampler rng(cfg.seed + 1);
  Tensor<double> img({cfg.channels, cfg.feat_h(), cfg.feat_w()});
  fill_normal(img, rng);
  return img.template cast<T>();
}

}  // namespace hbev
