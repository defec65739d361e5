#include <algorithm>
#include <cmath>
#include <numeric>

#include "longctx/model.hpp"
#include "longctx/rng.hpp"
#include "model_internal.hpp"

namespace longctx {

namespace {

void fill_normal(Matrix<float>& m, Rng& rng, double stddev) {
  for (float& v : m.flat()) v = static_cast<float>(rng.normal(0.0, stddev));
}

void check_range(const DecayRange& r, const char* name) {
  if (!(r.lo > 0.0 && r.lo <= r.hi && r.hi < 1.0)) {
    throw ConfigError(std::string(name) +
                      " decay range must satisfy 0 < lo <= hi < 1");
  }
}

double log_uniform(Rng& rng, const DecayRange& r) {
  const double lo = std::log(r.lo);
  const double hi = std::log(r.hi);
  return lo + (hi - lo) * rng.uniform();
}

std::vector<ChannelKind> plant_labels(std::size_t d_inner, double fraction,
                                      Rng& rng) {
  const auto n_global = static_cast<std::size_t>(
      std::llround(fraction * static_cast<double>(d_inner)));
  std::vector<std::size_t> order(d_inner);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i + 1 < d_inner; ++i) {
    const std::size_t j = i + rng.below(d_inner - i);
    std::swap(order[i], order[j]);
  }
  std::vector<ChannelKind> labels(d_inner, ChannelKind::kLocal);
  for (std::size_t i = 0; i < n_global; ++i) labels[order[i]] = ChannelKind::kGlobal;
  return labels;
}

}  // namespace

std::vector<TokenId> random_tokens(std::size_t count, std::size_t vocab_size,
                                   std::uint64_t seed) {
  if (vocab_size == 0) throw ConfigError("vocab size must be positive");
  Rng rng(seed);
  std::vector<TokenId> out(count);
  for (auto& t : out) t = static_cast<TokenId>(rng.below(vocab_size));
  return out;
}

SynthModel synth_model(const ModelConfig& config, const SynthOptions& options) {
  config.validate();
  if (config.dt_rank != 0) {
    throw ConfigError("synthetic models use the per-channel step map (dt_rank 0)");
  }
  if (!(options.global_fraction >= 0.0 && options.global_fraction <= 1.0)) {
    throw ConfigError("global fraction must be in [0, 1]");
  }
  if (!(options.delta.median > 0.0) || !(options.delta.spread >= 0.0)) {
    throw ConfigError("delta profile needs a positive median and nonnegative spread");
  }
  if (!(options.bc_scale > 0.0)) throw ConfigError("bc scale must be positive");
  check_range(options.global_decay, "global");
  check_range(options.local_decay, "local");

  Rng rng(options.seed);
  SynthModel out;
  ModelBundle& bundle = out.bundle;
  bundle.config = config;
  bundle.config.tie_embeddings = true;
  bundle.embedding = Matrix<float>(config.vocab_size, config.d_model);
  fill_normal(bundle.embedding, rng, 1.0);
  bundle.final_norm.assign(config.d_model, 1.0f);

  out.tuning_tokens = random_tokens(config.train_length, config.vocab_size,
                                    options.seed ^ 0x9e3779b97f4a7c15ULL);
  Matrix<float> hidden = embed(bundle, out.tuning_tokens);

  const double base = std::log(std::expm1(options.delta.median));
  const double in_std = 1.0 / std::sqrt(static_cast<double>(config.d_model));
  const double out_std = 0.5 / std::sqrt(static_cast<double>(config.d_inner));
  const double conv_std = 1.0 / std::sqrt(static_cast<double>(config.conv_kernel));
  const double length = static_cast<double>(config.train_length);

  for (std::size_t l = 0; l < config.n_layers; ++l) {
    LayerWeights w = LayerWeights::zeros(config);
    fill_normal(w.in_proj, rng, in_std);
    fill_normal(w.gate_proj, rng, in_std);
    fill_normal(w.out_proj, rng, out_std);
    fill_normal(w.conv_weight, rng, conv_std);
    for (float& v : w.bc_proj.flat()) {
      v = static_cast<float>(rng.uniform(0.0, 2.0 / static_cast<double>(config.d_inner)));
    }
    auto labels = plant_labels(config.d_inner, options.global_fraction, rng);

    bundle.layers.push_back(w);
    const auto normed = normalize_rows(hidden, w.norm);

    // Activations do not depend on the step map, B/C gates or A.
    SsmInputs<float> trace;
    block_forward(w, config, normed, nullptr, &trace);
    for (std::size_t c = 0; c < config.d_inner; ++c) {
      double mean = 0.0;
      for (std::size_t t = 0; t < trace.length(); ++t) mean += trace.x(t, c);
      mean /= length;
      double var = 0.0;
      for (std::size_t t = 0; t < trace.length(); ++t) {
        var += (trace.x(t, c) - mean) * (trace.x(t, c) - mean);
      }
      const double stddev = std::max(std::sqrt(var / length), 1e-6);
      const double scale = options.delta.spread / stddev;
      w.delta_scale[c] = static_cast<float>(scale);
      w.delta_bias[c] = static_cast<float>(base - scale * mean);
    }

    // Rescale the gate projections so B and C average bc_scale on the
    // tuning sequence.
    for (std::size_t s = 0; s < config.d_state; ++s) {
      double mean_b = 0.0;
      double mean_c = 0.0;
      for (std::size_t t = 0; t < trace.length(); ++t) {
        mean_b += trace.b(t, s);
        mean_c += trace.c(t, s);
      }
      mean_b /= length;
      mean_c /= length;
      if (mean_b > 0.0) {
        for (float& v : w.bc_proj.row(s)) v = static_cast<float>(v * options.bc_scale / mean_b);
      }
      if (mean_c > 0.0) {
        for (float& v : w.bc_proj.row(config.d_state + s)) {
          v = static_cast<float>(v * options.bc_scale / mean_c);
        }
      }
    }

    bundle.layers.back() = w;
    block_forward(w, config, normed, nullptr, &trace);
    Matrix<float> a(config.d_state, config.d_inner);
    for (std::size_t c = 0; c < config.d_inner; ++c) {
      double total = 0.0;
      for (std::size_t t = 0; t < trace.length(); ++t) total += trace.delta(t, c);
      const DecayRange& range = labels[c] == ChannelKind::kGlobal
                                    ? options.global_decay
                                    : options.local_decay;
      for (std::size_t s = 0; s < config.d_state; ++s) {
        a(s, c) = static_cast<float>(log_uniform(rng, range) / total);
      }
    }
    w.a = DecayMatrix<float>(std::move(a));
    bundle.layers.back() = std::move(w);
    out.planted.push_back(std::move(labels));

    apply_layer(bundle, l, hidden, nullptr, nullptr);
  }
  return out;
}

}  // namespace longctx
