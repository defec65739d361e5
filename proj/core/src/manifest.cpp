#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "longctx/model.hpp"
#include "text_format.hpp"

namespace longctx {

static_assert(std::endian::native == std::endian::little,
              "weight files are little-endian f32; big-endian hosts need a "
              "byte-swapping reader");

namespace {

using nlohmann::json;

constexpr const char* kManifestName = "manifest.json";
constexpr const char* kWeightsName = "weights.bin";

std::string layer_prefix(std::size_t l) {
  return "layers." + std::to_string(l) + ".";
}

std::string shape_text(const std::vector<std::size_t>& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out;
}

// Canonical (name, data) views over a bundle, matching expected_tensors.
std::vector<std::pair<std::string, std::span<const float>>> tensor_views(
    const ModelBundle& bundle) {
  std::vector<std::pair<std::string, std::span<const float>>> out;
  out.emplace_back("embedding", bundle.embedding.flat());
  for (std::size_t l = 0; l < bundle.layers.size(); ++l) {
    const auto& w = bundle.layers[l];
    const auto p = layer_prefix(l);
    out.emplace_back(p + "norm", w.norm);
    out.emplace_back(p + "in_proj", w.in_proj.flat());
    out.emplace_back(p + "gate_proj", w.gate_proj.flat());
    out.emplace_back(p + "out_proj", w.out_proj.flat());
    out.emplace_back(p + "bc_proj", w.bc_proj.flat());
    out.emplace_back(p + "conv_weight", w.conv_weight.flat());
    out.emplace_back(p + "conv_bias", w.conv_bias);
    if (bundle.config.dt_rank == 0) {
      out.emplace_back(p + "delta_scale", w.delta_scale);
    } else {
      out.emplace_back(p + "delta_down", w.delta_down.flat());
      out.emplace_back(p + "delta_up", w.delta_up.flat());
    }
    out.emplace_back(p + "delta_bias", w.delta_bias);
    out.emplace_back(p + "A", w.a.values().flat());
    out.emplace_back(p + "D", w.d_skip);
  }
  out.emplace_back("final_norm", bundle.final_norm);
  if (!bundle.config.tie_embeddings) out.emplace_back("lm_head", bundle.lm_head.flat());
  return out;
}

json config_to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size},   {"d_model", c.d_model},
          {"d_inner", c.d_inner},         {"d_state", c.d_state},
          {"n_layers", c.n_layers},       {"conv_kernel", c.conv_kernel},
          {"dt_rank", c.dt_rank},         {"train_length", c.train_length},
          {"tie_embeddings", c.tie_embeddings}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.d_inner = j.at("d_inner").get<std::size_t>();
  c.d_state = j.at("d_state").get<std::size_t>();
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.conv_kernel = j.value("conv_kernel", std::size_t{4});
  c.dt_rank = j.value("dt_rank", std::size_t{0});
  c.train_length = j.at("train_length").get<std::size_t>();
  c.tie_embeddings = j.value("tie_embeddings", true);
  return c;
}

Matrix<float> take_matrix(std::map<std::string, std::vector<float>>& tensors,
                          const std::string& name, std::size_t rows,
                          std::size_t cols) {
  return Matrix<float>(rows, cols, std::move(tensors.at(name)));
}

}  // namespace

std::size_t TensorSpec::numel() const {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::vector<TensorSpec> expected_tensors(const ModelConfig& c) {
  std::vector<TensorSpec> out;
  out.push_back({"embedding", {c.vocab_size, c.d_model}});
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto p = layer_prefix(l);
    out.push_back({p + "norm", {c.d_model}});
    out.push_back({p + "in_proj", {c.d_inner, c.d_model}});
    out.push_back({p + "gate_proj", {c.d_inner, c.d_model}});
    out.push_back({p + "out_proj", {c.d_model, c.d_inner}});
    out.push_back({p + "bc_proj", {2 * c.d_state, c.d_inner}});
    out.push_back({p + "conv_weight", {c.d_inner, c.conv_kernel}});
    out.push_back({p + "conv_bias", {c.d_inner}});
    if (c.dt_rank == 0) {
      out.push_back({p + "delta_scale", {c.d_inner}});
    } else {
      out.push_back({p + "delta_down", {c.dt_rank, c.d_inner}});
      out.push_back({p + "delta_up", {c.d_inner, c.dt_rank}});
    }
    out.push_back({p + "delta_bias", {c.d_inner}});
    out.push_back({p + "A", {c.d_state, c.d_inner}});
    out.push_back({p + "D", {c.d_inner}});
  }
  out.push_back({"final_norm", {c.d_model}});
  if (!c.tie_embeddings) out.push_back({"lm_head", {c.vocab_size, c.d_model}});
  return out;
}

void validate_bundle(const ModelBundle& bundle) {
  bundle.config.validate();
  if (bundle.layers.size() != bundle.config.n_layers) {
    throw DataError("bundle has " + std::to_string(bundle.layers.size()) +
                    " layers, config says " +
                    std::to_string(bundle.config.n_layers));
  }
  const auto specs = expected_tensors(bundle.config);
  const auto views = tensor_views(bundle);
  if (specs.size() != views.size()) throw DataError("bundle tensor set mismatch");
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (views[i].second.size() != specs[i].numel()) {
      throw DataError("tensor " + specs[i].name + " holds " +
                      std::to_string(views[i].second.size()) +
                      " values, expected " + shape_text(specs[i].shape));
    }
    for (float v : views[i].second) {
      if (!std::isfinite(v)) throw DataError("tensor " + specs[i].name + " is not finite");
    }
  }
  for (const auto& w : bundle.layers) {
    if (w.a.d_state() != bundle.config.d_state ||
        w.a.d_inner() != bundle.config.d_inner) {
      throw DataError("decay matrix shape " + shape_string(w.a.values()) +
                      " does not match config");
    }
  }
}

std::string shape_report(const ModelBundle& bundle) {
  std::ostringstream out;
  const auto specs = expected_tensors(bundle.config);
  const auto views = tensor_views(bundle);
  for (std::size_t i = 0; i < specs.size() && i < views.size(); ++i) {
    out << views[i].first << ' ' << shape_text(specs[i].shape) << '\n';
  }
  return out.str();
}

void save_model(const ModelBundle& bundle, const std::filesystem::path& dir) {
  validate_bundle(bundle);
  std::filesystem::create_directories(dir);
  const auto specs = expected_tensors(bundle.config);
  const auto views = tensor_views(bundle);

  json tensors = json::array();
  auto bin = detail::open_for_write(dir / kWeightsName);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto data = views[i].second;
    bin.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size_bytes()));
    tensors.push_back({{"name", specs[i].name},
                       {"shape", specs[i].shape},
                       {"dtype", "f32"},
                       {"file", kWeightsName},
                       {"byte_offset", offset}});
    offset += data.size_bytes();
  }
  if (!bin) throw DataError("failed writing " + (dir / kWeightsName).string());

  json manifest;
  manifest["format_version"] = kManifestFormat;
  manifest["config"] = config_to_json(bundle.config);
  manifest["tensors"] = std::move(tensors);
  auto out = detail::open_for_write(dir / kManifestName);
  out << manifest.dump(2) << '\n';
}

ModelBundle load_model(const std::filesystem::path& dir,
                       const LoadOptions& options) {
  const auto manifest_path = dir / kManifestName;
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open " + manifest_path.string());

  json manifest;
  ModelConfig config;
  try {
    manifest = json::parse(in);
    const int version = manifest.at("format_version").get<int>();
    if (version != kManifestFormat) {
      throw DataError("unsupported manifest format_version " + std::to_string(version));
    }
    config = config_from_json(manifest.at("config"));
  } catch (const json::exception& e) {
    throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw DataError(std::string("manifest config invalid: ") + e.what());
  }

  std::map<std::string, json> declared;
  for (const auto& t : manifest.at("tensors")) {
    declared[t.at("name").get<std::string>()] = t;
  }

  std::map<std::string, std::vector<float>> tensors;
  for (const auto& spec : expected_tensors(config)) {
    auto it = declared.find(spec.name);
    if (it == declared.end()) throw DataError("manifest is missing tensor " + spec.name);
    const json& t = it->second;
    std::vector<std::size_t> shape;
    std::string dtype;
    std::string file;
    std::size_t offset = 0;
    try {
      shape = t.at("shape").get<std::vector<std::size_t>>();
      dtype = t.at("dtype").get<std::string>();
      file = t.at("file").get<std::string>();
      offset = t.at("byte_offset").get<std::size_t>();
    } catch (const json::exception& e) {
      throw DataError("tensor " + spec.name + " entry is malformed: " + e.what());
    }
    if (dtype != "f32") {
      throw DataError("tensor " + spec.name + " has dtype " + dtype + ", expected f32");
    }
    if (shape != spec.shape) {
      throw DataError("tensor " + spec.name + " has shape " + shape_text(shape) +
                      ", config implies " + shape_text(spec.shape));
    }
    declared.erase(it);

    const auto path = dir / file;
    std::ifstream bin(path, std::ios::binary);
    if (!bin) throw DataError("cannot open " + path.string() + " for tensor " + spec.name);
    bin.seekg(0, std::ios::end);
    const auto file_size = static_cast<std::size_t>(bin.tellg());
    const std::size_t need = spec.numel() * sizeof(float);
    if (offset > file_size || file_size - offset < need) {
      throw DataError("tensor " + spec.name + " needs " + std::to_string(need) +
                      " bytes at offset " + std::to_string(offset) + " but " +
                      path.string() + " has " + std::to_string(file_size) +
                      " bytes");
    }
    std::vector<float> data(spec.numel());
    bin.seekg(static_cast<std::streamoff>(offset));
    bin.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(need));
    if (!bin) throw DataError("short read for tensor " + spec.name);
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!std::isfinite(data[i])) {
        throw DataError("tensor " + spec.name + " has a non-finite value at index " +
                        std::to_string(i));
      }
    }
    tensors.emplace(spec.name, std::move(data));
  }
  if (!declared.empty()) {
    throw DataError("manifest declares unexpected tensor " + declared.begin()->first);
  }

  ModelBundle bundle;
  bundle.config = config;
  bundle.embedding = take_matrix(tensors, "embedding", config.vocab_size, config.d_model);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const auto p = layer_prefix(l);
    LayerWeights w;
    w.norm = std::move(tensors.at(p + "norm"));
    w.in_proj = take_matrix(tensors, p + "in_proj", config.d_inner, config.d_model);
    w.gate_proj = take_matrix(tensors, p + "gate_proj", config.d_inner, config.d_model);
    w.out_proj = take_matrix(tensors, p + "out_proj", config.d_model, config.d_inner);
    w.bc_proj = take_matrix(tensors, p + "bc_proj", 2 * config.d_state, config.d_inner);
    w.conv_weight = take_matrix(tensors, p + "conv_weight", config.d_inner, config.conv_kernel);
    w.conv_bias = std::move(tensors.at(p + "conv_bias"));
    if (config.dt_rank == 0) {
      w.delta_scale = std::move(tensors.at(p + "delta_scale"));
    } else {
      w.delta_down = take_matrix(tensors, p + "delta_down", config.dt_rank, config.d_inner);
      w.delta_up = take_matrix(tensors, p + "delta_up", config.d_inner, config.dt_rank);
    }
    w.delta_bias = std::move(tensors.at(p + "delta_bias"));
    w.d_skip = std::move(tensors.at(p + "D"));

    auto a = take_matrix(tensors, p + "A", config.d_state, config.d_inner);
    for (std::size_t s = 0; s < a.rows(); ++s) {
      for (std::size_t c = 0; c < a.cols(); ++c) {
        if (a(s, c) < 0.0f) continue;
        const std::string where = "tensor " + p + "A index (" + std::to_string(s) +
                                  ", " + std::to_string(c) + ") = " +
                                  std::to_string(a(s, c));
        if (!options.clamp_nonnegative_a) {
          throw DataError(where + " is not strictly negative");
        }
        if (options.warn) options.warn(where + " clamped to " + std::to_string(-options.clamp_floor));
        a(s, c) = -options.clamp_floor;
      }
    }
    w.a = DecayMatrix<float>(std::move(a));
    bundle.layers.push_back(std::move(w));
  }
  bundle.final_norm = std::move(tensors.at("final_norm"));
  if (!config.tie_embeddings) {
    bundle.lm_head = take_matrix(tensors, "lm_head", config.vocab_size, config.d_model);
  }
  return bundle;
}

}  // namespace longctx
