#pragma once

// Mamba-style block stack over token ids: weight manifests, prefill and
// recurrent decode in vanilla or token-filtered mode, and a synthetic model
// generator with planted global/local channels.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "longctx/channels.hpp"
#include "longctx/ssm.hpp"
#include "longctx/tensor.hpp"

namespace longctx {

using TokenId = std::uint32_t;

inline constexpr int kManifestFormat = 1;
inline constexpr float kNormEpsilon = 1e-5f;

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 0;
  std::size_t d_inner = 0;
  std::size_t d_state = 0;
  std::size_t n_layers = 0;
  std::size_t conv_kernel = 4;
  // 0: per-channel affine step-size map (identity by default); otherwise a
  // rank-dt_rank factored projection.
  std::size_t dt_rank = 0;
  std::size_t train_length = 0;
  bool tie_embeddings = true;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerWeights {
  std::vector<float> norm;         // d_model, pre-block RMS scale
  Matrix<float> in_proj;           // d_inner x d_model
  Matrix<float> gate_proj;         // d_inner x d_model
  Matrix<float> out_proj;          // d_model x d_inner
  Matrix<float> bc_proj;           // 2*d_state x d_inner; B rows then C rows
  Matrix<float> conv_weight;       // d_inner x conv_kernel, last tap = current
  std::vector<float> conv_bias;    // d_inner
  std::vector<float> delta_scale;  // d_inner (dt_rank == 0)
  Matrix<float> delta_down;        // dt_rank x d_inner (dt_rank > 0)
  Matrix<float> delta_up;          // d_inner x dt_rank (dt_rank > 0)
  std::vector<float> delta_bias;   // d_inner
  DecayMatrix<float> a;            // d_state x d_inner
  std::vector<float> d_skip;       // d_inner

  // Identity step-size map, zero biases and zero skip for the given shape;
  // projections, A and conv weights are zero/unset and must be filled in.
  static LayerWeights zeros(const ModelConfig& config);
};

struct ModelBundle {
  ModelConfig config;
  Matrix<float> embedding;  // vocab x d_model
  std::vector<LayerWeights> layers;
  std::vector<float> final_norm;  // d_model
  Matrix<float> lm_head;          // vocab x d_model; empty when tied

  const Matrix<float>& head() const noexcept {
    return config.tie_embeddings ? embedding : lm_head;
  }
};

enum class Variant { kVanilla, kLongMamba };

struct RunMode {
  Variant variant = Variant::kVanilla;
  std::vector<ChannelClassification> classification;  // one per layer
  std::optional<ThresholdTable> table;

  static RunMode vanilla() { return {}; }
  static RunMode longmamba(std::vector<ChannelClassification> classification,
                           ThresholdTable table);
  // Classification derived from the table's channel lists.
  static RunMode longmamba(const ThresholdTable& table,
                           const ModelConfig& config);

  void validate(const ModelConfig& config) const;
  // Policy for one layer at sequence length `length`; nullopt in vanilla.
  std::optional<FilterPolicy> policy(std::size_t layer,
                                     std::size_t length) const;
};

// Tensor name and shape as declared in a manifest. Vectors have one dim.
struct TensorSpec {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t numel() const;
};

// Every tensor a model with this config carries, in canonical order.
std::vector<TensorSpec> expected_tensors(const ModelConfig& config);

struct LoadOptions {
  // Replace non-negative A entries with -clamp_floor and warn instead of
  // rejecting the manifest.
  bool clamp_nonnegative_a = false;
  float clamp_floor = 1e-6f;
  std::function<void(const std::string&)> warn;
};

ModelBundle load_model(const std::filesystem::path& dir,
                       const LoadOptions& options = {});
// Writes manifest.json and weights.bin into `dir` (created if missing).
void save_model(const ModelBundle& bundle, const std::filesystem::path& dir);
// Throws DataError if any tensor shape disagrees with the config.
void validate_bundle(const ModelBundle& bundle);
// One line per tensor: "name dim0xdim1".
std::string shape_report(const ModelBundle& bundle);

// X = silu(conv(in_proj I)); delta = softplus(step map X); (B, C) = bc_proj X;
// Y = scan; O = out_proj(silu(gate_proj I) * (Y + D * X)).
// `input` is the already normalized block input (L x d_model).
Matrix<float> block_forward(const LayerWeights& weights,
                            const ModelConfig& config,
                            const Matrix<float>& input,
                            const FilterPolicy* policy = nullptr,
                            SsmInputs<float>* trace = nullptr);

struct ForwardTrace {
  std::vector<SsmInputs<float>> layers;  // scan inputs per layer
};

// Embedding, n_layers x (RMS norm, block, residual add), final norm, head.
// In longmamba mode the policies use the table row for tokens.size().
Matrix<float> forward(const ModelBundle& bundle, std::span<const TokenId> tokens,
                      const RunMode& mode, ForwardTrace* trace = nullptr);

// Recurrent decoding state: per layer the last conv_kernel - 1 projected
// inputs and the scan state.
class DecodeSession {
 public:
  // `policy_length` selects the table row in longmamba mode.
  DecodeSession(const ModelBundle& bundle, const RunMode& mode,
                std::size_t policy_length);

  // Consumes one token, returns its logits (vocab_size).
  std::vector<float> step(TokenId token);
  std::size_t position() const noexcept { return position_; }

 private:
  struct LayerState {
    Matrix<float> conv_window;  // (conv_kernel - 1) x d_inner, oldest first
    HiddenState<float> scan;
    std::optional<FilterPolicy> policy;
  };
  const ModelBundle& bundle_;
  std::vector<LayerState> layers_;
  std::size_t position_ = 0;
};

// Index of the largest logit; ties go to the smaller id.
TokenId argmax(std::span<const float> logits);

// Greedy continuation of `prompt` by `n_new` tokens using recurrent decode.
// In longmamba mode the table row is chosen for prompt.size() + n_new.
std::vector<TokenId> generate_greedy(const ModelBundle& bundle,
                                     std::span<const TokenId> prompt,
                                     std::size_t n_new, const RunMode& mode);

struct DeltaProfile {
  // Step sizes follow softplus(log(expm1(median)) + spread * z) with z the
  // per-channel standardized activation: roughly log-normal for small medians.
  double median = 0.1;
  double spread = 0.8;
};

struct DecayRange {
  double lo = 0.0;
  double hi = 0.0;
};

struct SynthOptions {
  double global_fraction = 0.25;
  DeltaProfile delta;
  // Target cumulative decay over the training length, drawn log-uniformly
  // per state entry of each channel.
  DecayRange global_decay{0.1, 0.9};
  DecayRange local_decay{1e-80, 1e-50};
  double bc_scale = 1.0;
  std::uint64_t seed = 0;
};

struct SynthModel {
  ModelBundle bundle;
  std::vector<std::vector<ChannelKind>> planted;  // per layer
  std::vector<TokenId> tuning_tokens;  // sequence used to tune step sizes
};

// Random weights with planted channels. Step-size maps are fitted layer by
// layer on a seeded random sequence of train_length tokens, then each A entry
// is set so the cumulative decay over that sequence hits its target.
SynthModel synth_model(const ModelConfig& config, const SynthOptions& options);

// Seeded uniform token sequence.
std::vector<TokenId> random_tokens(std::size_t count, std::size_t vocab_size,
                                   std::uint64_t seed);

}  // namespace longctx
