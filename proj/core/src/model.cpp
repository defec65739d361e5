#include "longctx/model.hpp"

#include "model_internal.hpp"

#include <cmath>
#include <string>

namespace longctx {

namespace {

void matvec(const Matrix<float>& w, std::span<const float> x,
            std::span<float> out) {
  for (std::size_t o = 0; o < w.rows(); ++o) {
    auto row = w.row(o);
    double acc = 0.0;
    for (std::size_t i = 0; i < row.size(); ++i) {
      acc += static_cast<double>(row[i]) * static_cast<double>(x[i]);
    }
    out[o] = static_cast<float>(acc);
  }
}

float silu(float v) { return v / (1.0f + std::exp(-v)); }

void rms_norm(std::span<const float> in, std::span<const float> scale,
              std::span<float> out) {
  double ss = 0.0;
  for (float v : in) ss += static_cast<double>(v) * static_cast<double>(v);
  const auto inv = static_cast<float>(
      1.0 / std::sqrt(ss / static_cast<double>(in.size()) + kNormEpsilon));
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * inv * scale[i];
}

// Scan inputs for one token. `taps` holds conv_kernel projected rows, oldest
// first; an empty span stands for left zero padding.
void token_features(const LayerWeights& w, const ModelConfig& cfg,
                    std::span<const std::span<const float>> taps,
                    std::span<float> x, std::span<float> delta,
                    std::span<float> b, std::span<float> c) {
  const std::size_t d_inner = cfg.d_inner;
  for (std::size_t ch = 0; ch < d_inner; ++ch) {
    double acc = w.conv_bias[ch];
    for (std::size_t k = 0; k < cfg.conv_kernel; ++k) {
      const double v = taps[k].empty() ? 0.0 : static_cast<double>(taps[k][ch]);
      acc += static_cast<double>(w.conv_weight(ch, k)) * v;
    }
    x[ch] = silu(static_cast<float>(acc));
  }

  if (cfg.dt_rank == 0) {
    for (std::size_t ch = 0; ch < d_inner; ++ch) {
      const double pre = static_cast<double>(w.delta_scale[ch]) * x[ch] +
                         static_cast<double>(w.delta_bias[ch]);
      delta[ch] = softplus(static_cast<float>(pre));
    }
  } else {
    std::vector<float> low(cfg.dt_rank);
    matvec(w.delta_down, x, low);
    std::vector<float> pre(d_inner);
    matvec(w.delta_up, low, pre);
    for (std::size_t ch = 0; ch < d_inner; ++ch) {
      delta[ch] = softplus(pre[ch] + w.delta_bias[ch]);
    }
  }

  std::vector<float> bc(2 * cfg.d_state);
  matvec(w.bc_proj, x, bc);
  std::copy(bc.begin(), bc.begin() + cfg.d_state, b.begin());
  std::copy(bc.begin() + cfg.d_state, bc.end(), c.begin());
}

void block_output(const LayerWeights& w, std::span<const float> input,
                  std::span<const float> x, std::span<const float> y,
                  std::span<float> out) {
  std::vector<float> gate(w.gate_proj.rows());
  matvec(w.gate_proj, input, gate);
  for (std::size_t ch = 0; ch < gate.size(); ++ch) {
    gate[ch] = silu(gate[ch]) * (y[ch] + w.d_skip[ch] * x[ch]);
  }
  matvec(w.out_proj, gate, out);
}

void check_tokens(std::span<const TokenId> tokens, std::size_t vocab) {
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] >= vocab) {
      throw DataError("token " + std::to_string(tokens[t]) + " at position " +
                      std::to_string(t) + " exceeds vocab size " +
                      std::to_string(vocab));
    }
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size == 0 || d_model == 0 || d_inner == 0 || d_state == 0 ||
      n_layers == 0 || conv_kernel == 0 || train_length == 0) {
    throw ConfigError(
        "model config needs positive vocab_size, d_model, d_inner, d_state, "
        "n_layers, conv_kernel and train_length");
  }
}

LayerWeights LayerWeights::zeros(const ModelConfig& cfg) {
  LayerWeights w;
  w.norm.assign(cfg.d_model, 1.0f);
  w.in_proj = Matrix<float>(cfg.d_inner, cfg.d_model);
  w.gate_proj = Matrix<float>(cfg.d_inner, cfg.d_model);
  w.out_proj = Matrix<float>(cfg.d_model, cfg.d_inner);
  w.bc_proj = Matrix<float>(2 * cfg.d_state, cfg.d_inner);
  w.conv_weight = Matrix<float>(cfg.d_inner, cfg.conv_kernel);
  w.conv_bias.assign(cfg.d_inner, 0.0f);
  if (cfg.dt_rank == 0) {
    w.delta_scale.assign(cfg.d_inner, 1.0f);
  } else {
    w.delta_down = Matrix<float>(cfg.dt_rank, cfg.d_inner);
    w.delta_up = Matrix<float>(cfg.d_inner, cfg.dt_rank);
  }
  w.delta_bias.assign(cfg.d_inner, 0.0f);
  w.a = DecayMatrix<float>(Matrix<float>(cfg.d_state, cfg.d_inner, -1.0f));
  w.d_skip.assign(cfg.d_inner, 0.0f);
  return w;
}

RunMode RunMode::longmamba(std::vector<ChannelClassification> classification,
                           ThresholdTable table) {
  RunMode mode;
  mode.variant = Variant::kLongMamba;
  mode.classification = std::move(classification);
  mode.table = std::move(table);
  return mode;
}

RunMode RunMode::longmamba(const ThresholdTable& table,
                           const ModelConfig& config) {
  std::vector<ChannelClassification> cls;
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    cls.push_back(classification_from_table(table, l, config.d_inner));
  }
  return longmamba(std::move(cls), table);
}

void RunMode::validate(const ModelConfig& config) const {
  if (variant == Variant::kVanilla) return;
  if (!table) throw ConfigError("longmamba mode requires a threshold table");
  if (classification.size() != config.n_layers ||
      table->layers.size() != config.n_layers) {
    throw ConfigError("longmamba mode needs one classification and one table "
                      "layer per model layer (" +
                      std::to_string(config.n_layers) + "); got " +
                      std::to_string(classification.size()) + " and " +
                      std::to_string(table->layers.size()));
  }
  for (const auto& cls : classification) {
    if (cls.labels.size() != config.d_inner) {
      throw ConfigError("classification of layer " + std::to_string(cls.layer) +
                        " covers " + std::to_string(cls.labels.size()) +
                        " channels, model has " +
                        std::to_string(config.d_inner));
    }
  }
}

std::optional<FilterPolicy> RunMode::policy(std::size_t layer,
                                            std::size_t length) const {
  if (variant == Variant::kVanilla) return std::nullopt;
  return policy_for_layer(*table, classification.at(layer), length);
}

Matrix<float> block_forward(const LayerWeights& w, const ModelConfig& cfg,
                            const Matrix<float>& input,
                            const FilterPolicy* policy,
                            SsmInputs<float>* trace) {
  if (input.cols() != cfg.d_model) {
    throw DataError("block input is " + shape_string(input) + ", expected d_model " +
                    std::to_string(cfg.d_model));
  }
  const std::size_t length = input.rows();
  Matrix<float> projected(length, cfg.d_inner);
  for (std::size_t t = 0; t < length; ++t) {
    matvec(w.in_proj, input.row(t), projected.row(t));
  }

  SsmInputs<float> ssm{Matrix<float>(length, cfg.d_inner),
                       Matrix<float>(length, cfg.d_inner),
                       Matrix<float>(length, cfg.d_state),
                       Matrix<float>(length, cfg.d_state)};
  std::vector<std::span<const float>> taps(cfg.conv_kernel);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t k = 0; k < cfg.conv_kernel; ++k) {
      const std::size_t back = cfg.conv_kernel - 1 - k;
      taps[k] = t >= back ? projected.row(t - back) : std::span<const float>{};
    }
    token_features(w, cfg, taps, ssm.x.row(t), ssm.delta.row(t), ssm.b.row(t),
                   ssm.c.row(t));
  }

  const auto h0 = HiddenState<float>::zeros(cfg.d_state, cfg.d_inner);
  const auto scan = policy != nullptr ? filtered_scan(ssm, w.a, h0, *policy)
                                      : selective_scan(ssm, w.a, h0);

  Matrix<float> out(length, cfg.d_model);
  for (std::size_t t = 0; t < length; ++t) {
    block_output(w, input.row(t), ssm.x.row(t), scan.y.row(t), out.row(t));
  }
  if (trace != nullptr) *trace = std::move(ssm);
  return out;
}

Matrix<float> embed(const ModelBundle& bundle, std::span<const TokenId> tokens) {
  const ModelConfig& cfg = bundle.config;
  check_tokens(tokens, cfg.vocab_size);
  Matrix<float> hidden(tokens.size(), cfg.d_model);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    auto src = bundle.embedding.row(tokens[t]);
    std::copy(src.begin(), src.end(), hidden.row(t).begin());
  }
  return hidden;
}

Matrix<float> normalize_rows(const Matrix<float>& hidden,
                             std::span<const float> scale) {
  Matrix<float> normed(hidden.rows(), hidden.cols());
  for (std::size_t t = 0; t < hidden.rows(); ++t) {
    rms_norm(hidden.row(t), scale, normed.row(t));
  }
  return normed;
}

void apply_layer(const ModelBundle& bundle, std::size_t layer,
                 Matrix<float>& hidden, const FilterPolicy* policy,
                 SsmInputs<float>* trace) {
  const LayerWeights& w = bundle.layers[layer];
  const auto normed = normalize_rows(hidden, w.norm);
  const auto out = block_forward(w, bundle.config, normed, policy, trace);
  for (std::size_t t = 0; t < hidden.rows(); ++t) {
    auto h = hidden.row(t);
    auto o = out.row(t);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += o[i];
  }
}

Matrix<float> forward(const ModelBundle& bundle,
                      std::span<const TokenId> tokens, const RunMode& mode,
                      ForwardTrace* trace) {
  const ModelConfig& cfg = bundle.config;
  mode.validate(cfg);
  const std::size_t length = tokens.size();
  Matrix<float> hidden = embed(bundle, tokens);
  if (trace != nullptr) trace->layers.assign(cfg.n_layers, {});

  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto policy = mode.policy(l, length);
    apply_layer(bundle, l, hidden, policy ? &*policy : nullptr,
                trace != nullptr ? &trace->layers[l] : nullptr);
  }

  Matrix<float> logits(length, cfg.vocab_size);
  std::vector<float> final_row(cfg.d_model);
  for (std::size_t t = 0; t < length; ++t) {
    rms_norm(hidden.row(t), bundle.final_norm, final_row);
    matvec(bundle.head(), final_row, logits.row(t));
  }
  return logits;
}

DecodeSession::DecodeSession(const ModelBundle& bundle, const RunMode& mode,
                             std::size_t policy_length)
    : bundle_(bundle) {
  const ModelConfig& cfg = bundle.config;
  mode.validate(cfg);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    layers_.push_back({Matrix<float>(cfg.conv_kernel - 1, cfg.d_inner, 0.0f),
                       HiddenState<float>::zeros(cfg.d_state, cfg.d_inner),
                       mode.policy(l, policy_length)});
  }
}

std::vector<float> DecodeSession::step(TokenId token) {
  const ModelConfig& cfg = bundle_.config;
  check_tokens(std::span<const TokenId>(&token, 1), cfg.vocab_size);

  auto emb = bundle_.embedding.row(token);
  std::vector<float> hidden(emb.begin(), emb.end());
  std::vector<float> normed(cfg.d_model), projected(cfg.d_inner);
  std::vector<float> x(cfg.d_inner), delta(cfg.d_inner);
  std::vector<float> b(cfg.d_state), c(cfg.d_state), out(cfg.d_model);
  std::vector<std::span<const float>> taps(cfg.conv_kernel);

  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const LayerWeights& w = bundle_.layers[l];
    LayerState& st = layers_[l];
    rms_norm(hidden, w.norm, normed);
    matvec(w.in_proj, normed, projected);
    for (std::size_t k = 0; k + 1 < cfg.conv_kernel; ++k) {
      // Window rows before the first token behave as zero padding.
      const std::size_t back = cfg.conv_kernel - 1 - k;
      taps[k] = position_ >= back ? st.conv_window.row(k) : std::span<const float>{};
    }
    taps[cfg.conv_kernel - 1] = projected;
    token_features(w, cfg, taps, x, delta, b, c);
    const auto y = scan_step<float>(st.scan, w.a, x, delta, b, c,
                                    st.policy ? &*st.policy : nullptr);
    block_output(w, normed, x, y, out);
    for (std::size_t i = 0; i < cfg.d_model; ++i) hidden[i] += out[i];

    if (cfg.conv_kernel > 1) {
      for (std::size_t k = 0; k + 2 < cfg.conv_kernel; ++k) {
        auto next = st.conv_window.row(k + 1);
        std::copy(next.begin(), next.end(), st.conv_window.row(k).begin());
      }
      std::copy(projected.begin(), projected.end(),
                st.conv_window.row(cfg.conv_kernel - 2).begin());
    }
  }
  ++position_;

  std::vector<float> final_row(cfg.d_model), logits(cfg.vocab_size);
  rms_norm(hidden, bundle_.final_norm, final_row);
  matvec(bundle_.head(), final_row, logits);
  return logits;
}

TokenId argmax(std::span<const float> logits) {
  if (logits.empty()) throw DataError("argmax of empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return static_cast<TokenId>(best);
}

std::vector<TokenId> generate_greedy(const ModelBundle& bundle,
                                     std::span<const TokenId> prompt,
                                     std::size_t n_new, const RunMode& mode) {
  std::vector<TokenId> out(prompt.begin(), prompt.end());
  if (n_new == 0) return out;
  if (prompt.empty()) throw ConfigError("generation needs a non-empty prompt");

  DecodeSession session(bundle, mode, prompt.size() + n_new);
  std::vector<float> logits;
  for (TokenId t : prompt) logits = session.step(t);
  for (std::size_t n = 0; n < n_new; ++n) {
    const TokenId next = argmax(logits);
    out.push_back(next);
    if (n + 1 < n_new) logits = session.step(next);
  }
  return out;
}

}  // namespace longctx
