#include "longctx/channels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "longctx/attention.hpp"

namespace longctx {

namespace {

double log_sum_exp(std::span<const double> xs) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : xs) hi = std::max(hi, x);
  if (!std::isfinite(hi)) return hi;
  double sum = 0.0;
  for (double x : xs) sum += std::exp(x - hi);
  return hi + std::log(sum);
}

// Sum of samples[k..n) accumulated from the largest sample downwards.
std::vector<double> suffix_sums_from_top(std::span<const double> samples) {
  std::vector<double> suffix(samples.size() + 1, 0.0);
  double acc = 0.0;
  for (std::size_t k = samples.size(); k-- > 0;) {
    acc += samples[k];
    suffix[k] = acc;
  }
  return suffix;
}

double objective(double kept_sum, double total_sum, std::size_t n,
                 std::size_t train_length, std::size_t target_length) {
  const double count = static_cast<double>(n);
  return std::abs(static_cast<double>(target_length) * (kept_sum / count) -
                  static_cast<double>(train_length) * (total_sum / count));
}

double above_max(std::span<const double> sorted) {
  return std::nextafter(sorted.back(), std::numeric_limits<double>::infinity());
}

}  // namespace

DecayStatistic cumulative_decay_at_length(
    std::span<const Matrix<double>> deltas, const DecayMatrix<double>& a) {
  if (deltas.empty()) {
    throw DataError("cumulative decay needs at least one calibration sequence");
  }
  const std::size_t d_inner = a.d_inner();
  DecayStatistic stat;
  stat.values.resize(d_inner);
  stat.log_values.resize(d_inner);
  std::vector<double> per_sequence(deltas.size());
  for (std::size_t ch = 0; ch < d_inner; ++ch) {
    for (std::size_t n = 0; n < deltas.size(); ++n) {
      const Matrix<double>& delta = deltas[n];
      if (delta.cols() != d_inner) {
        throw DataError("calibration delta is " + shape_string(delta) +
                        " but decay matrix is " + shape_string(a.values()));
      }
      // Same accumulation order as decay_curve so the two agree exactly.
      double cumulative = 0.0;
      for (std::size_t t = 0; t < delta.rows(); ++t) {
        cumulative += delta(t, ch);
      }
      per_sequence[n] = log_mean_decay(cumulative, a, ch);
    }
    const double log_value = log_sum_exp(per_sequence) -
                             std::log(static_cast<double>(deltas.size()));
    stat.log_values[ch] = log_value;
    stat.values[ch] = decay_from_log(log_value);
  }
  return stat;
}

std::size_t ChannelClassification::n_global() const noexcept {
  return static_cast<std::size_t>(
      std::count(labels.begin(), labels.end(), ChannelKind::kGlobal));
}

std::vector<std::size_t> ChannelClassification::global_channels() const {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < labels.size(); ++c) {
    if (labels[c] == ChannelKind::kGlobal) out.push_back(c);
  }
  return out;
}

ChannelClassification classify_channels(std::span<const double> decay,
                                        double theta, std::size_t layer,
                                        std::size_t train_length) {
  if (!(theta > 0.0) || !std::isfinite(theta)) {
    throw ConfigError("theta must be positive and finite, got " +
                      std::to_string(theta));
  }
  ChannelClassification out;
  out.layer = layer;
  out.theta = theta;
  out.train_length = train_length;
  out.decay_at_length.assign(decay.begin(), decay.end());
  out.labels.reserve(decay.size());
  for (std::size_t c = 0; c < decay.size(); ++c) {
    if (!(decay[c] >= 0.0 && decay[c] <= 1.0)) {
      throw DataError("decay of channel " + std::to_string(c) + " is " +
                      std::to_string(decay[c]) + ", outside [0, 1]");
    }
    out.labels.push_back(decay[c] > theta ? ChannelKind::kGlobal
                                          : ChannelKind::kLocal);
  }
  return out;
}

DeltaDistribution DeltaDistribution::from_samples(std::size_t layer,
                                                  std::size_t channel,
                                                  std::vector<double> samples) {
  if (samples.empty()) {
    throw DataError("delta distribution for layer " + std::to_string(layer) +
                    " channel " + std::to_string(channel) + " is empty");
  }
  for (double v : samples) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw DataError("delta samples must be positive and finite; layer " +
                      std::to_string(layer) + " channel " +
                      std::to_string(channel) + " has " + std::to_string(v));
    }
  }
  std::sort(samples.begin(), samples.end());
  return {layer, channel, std::move(samples), 0.0};
}

double DeltaDistribution::mean() const {
  const auto suffix = suffix_sums_from_top(samples);
  return suffix[0] / static_cast<double>(samples.size());
}

double nearest_rank_percentile(std::span<const double> sorted,
                               double percent) {
  if (sorted.empty()) throw DataError("percentile of an empty sample");
  if (!(percent >= 0.0 && percent <= 100.0)) {
    throw ConfigError("percentile must be in [0, 100], got " +
                      std::to_string(percent));
  }
  const double n = static_cast<double>(sorted.size());
  // The small slack absorbs rounding in p * n / 100 for exact ranks.
  const double rank = std::ceil(percent * n / 100.0 - 1e-9);
  const auto index = static_cast<std::size_t>(std::clamp(rank, 1.0, n)) - 1;
  return sorted[index];
}

void winsorize(DeltaDistribution& dist, double clamp_percent) {
  if (!(clamp_percent >= 0.0 && clamp_percent < 100.0)) {
    throw ConfigError("clamp percent must be in [0, 100), got " +
                      std::to_string(clamp_percent));
  }
  const double cap = nearest_rank_percentile(dist.samples, 100.0 - clamp_percent);
  for (double& v : dist.samples) v = std::min(v, cap);
  dist.clamp_percent = clamp_percent;
}

double alignment_error(const DeltaDistribution& dist, std::size_t train_length,
                       std::size_t target_length, double g) {
  double kept = 0.0;
  for (std::size_t k = dist.samples.size(); k-- > 0;) {
    if (dist.samples[k] >= g) kept += dist.samples[k];
  }
  const auto suffix = suffix_sums_from_top(dist.samples);
  return objective(kept, suffix[0], dist.samples.size(), train_length,
                   target_length);
}

double solve_threshold(const DeltaDistribution& dist, std::size_t train_length,
                       std::size_t target_length) {
  if (dist.samples.empty()) throw DataError("solve_threshold: empty distribution");
  if (target_length <= train_length) return 0.0;

  const auto& xs = dist.samples;
  const std::size_t n = xs.size();
  const auto suffix = suffix_sums_from_top(xs);
  const double total = suffix[0];

  double best_g = 0.0;
  double best_err = objective(total, total, n, train_length, target_length);
  for (std::size_t k = 0; k < n; ++k) {
    if (k > 0 && xs[k] == xs[k - 1]) continue;  // first index of each value
    const double err = objective(suffix[k], total, n, train_length, target_length);
    if (err < best_err) {
      best_err = err;
      best_g = xs[k];
    }
  }
  const double sentinel_err = objective(0.0, total, n, train_length, target_length);
  if (sentinel_err < best_err) best_g = above_max(xs);
  return best_g;
}

std::size_t ThresholdTable::last_row() const noexcept {
  if (interval == 0) return 0;
  return (s_max / interval) * interval;
}

ThresholdTable build_threshold_table(
    std::span<const std::vector<DeltaDistribution>> dists,
    std::size_t train_length, std::size_t s_max, std::size_t interval) {
  if (interval == 0) throw ConfigError("table interval must be positive");
  if (s_max < interval) {
    throw ConfigError("s_max " + std::to_string(s_max) +
                      " is smaller than the interval " +
                      std::to_string(interval));
  }
  ThresholdTable table;
  table.train_length = train_length;
  table.interval = interval;
  table.s_max = s_max;
  const std::size_t rows = s_max / interval;
  for (std::size_t l = 0; l < dists.size(); ++l) {
    LayerThresholds layer{l, {}};
    for (const auto& dist : dists[l]) {
      if (dist.layer != l) {
        throw DataError("distribution for layer " + std::to_string(dist.layer) +
                        " passed in slot " + std::to_string(l));
      }
      ChannelThresholds ch{dist.channel, {}};
      ch.entries.reserve(rows);
      for (std::size_t r = 1; r <= rows; ++r) {
        const std::size_t length = r * interval;
        ch.entries.push_back({length, solve_threshold(dist, train_length, length)});
      }
      layer.channels.push_back(std::move(ch));
      table.clamp_percent = dist.clamp_percent;
    }
    std::sort(layer.channels.begin(), layer.channels.end(),
              [](const auto& x, const auto& y) { return x.channel < y.channel; });
    table.layers.push_back(std::move(layer));
  }
  return table;
}

std::size_t lookup_row(const ThresholdTable& table, std::size_t length) {
  if (table.interval == 0) throw DataError("threshold table has zero interval");
  const std::size_t rounded =
      (length + table.interval / 2) / table.interval * table.interval;
  return std::clamp(rounded, table.interval,
                    std::max(table.interval, table.last_row()));
}

LookupResult lookup(const ThresholdTable& table, std::size_t length) {
  LookupResult out;
  out.row = lookup_row(table, length);
  for (const auto& layer : table.layers) {
    std::vector<double> g;
    g.reserve(layer.channels.size());
    for (const auto& ch : layer.channels) {
      auto it = std::find_if(ch.entries.begin(), ch.entries.end(),
                             [&](const auto& e) { return e.length == out.row; });
      if (it == ch.entries.end()) {
        throw DataError("threshold table has no row " + std::to_string(out.row) +
                        " for layer " + std::to_string(layer.layer) +
                        " channel " + std::to_string(ch.channel));
      }
      g.push_back(it->threshold);
    }
    out.thresholds.push_back(std::move(g));
  }
  return out;
}

FilterPolicy policy_for_layer(const ThresholdTable& table,
                              const ChannelClassification& classification,
                              std::size_t length) {
  const std::size_t d_inner = classification.labels.size();
  FilterPolicy policy = FilterPolicy::neutral(d_inner);
  const auto layer_it =
      std::find_if(table.layers.begin(), table.layers.end(),
                   [&](const auto& l) { return l.layer == classification.layer; });
  const std::size_t row = lookup_row(table, length);
  for (std::size_t c = 0; c < d_inner; ++c) {
    if (classification.labels[c] != ChannelKind::kGlobal) continue;
    policy.global_mask[c] = true;
    const ChannelThresholds* entry = nullptr;
    if (layer_it != table.layers.end()) {
      for (const auto& ch : layer_it->channels) {
        if (ch.channel == c) entry = &ch;
      }
    }
    if (entry == nullptr) {
      throw DataError("global channel " + std::to_string(c) + " of layer " +
                      std::to_string(classification.layer) +
                      " has no threshold table entry");
    }
    auto it = std::find_if(entry->entries.begin(), entry->entries.end(),
                           [&](const auto& e) { return e.length == row; });
    if (it == entry->entries.end()) {
      throw DataError("threshold table has no row " + std::to_string(row) +
                      " for layer " + std::to_string(classification.layer) +
                      " channel " + std::to_string(c));
    }
    policy.thresholds[c] = it->threshold;
  }
  return policy;
}

ChannelClassification classification_from_table(const ThresholdTable& table,
                                                std::size_t layer,
                                                std::size_t d_inner) {
  ChannelClassification out;
  out.layer = layer;
  out.theta = table.theta;
  out.train_length = table.train_length;
  out.labels.assign(d_inner, ChannelKind::kLocal);
  for (const auto& l : table.layers) {
    if (l.layer != layer) continue;
    for (const auto& ch : l.channels) {
      if (ch.channel >= d_inner) {
        throw DataError("threshold table names channel " +
                        std::to_string(ch.channel) + " but the layer has " +
                        std::to_string(d_inner));
      }
      out.labels[ch.channel] = ChannelKind::kGlobal;
    }
  }
  return out;
}

}  // namespace longctx
