#include "longctx/attention.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "longctx/parallel.hpp"

namespace longctx {

std::size_t default_row_stride(std::size_t length) {
  if (length <= kMaxDenseRows) return 1;
  return (length + kMaxDenseRows - 1) / kMaxDenseRows;
}

std::vector<AttentionSlice> attention_scores(
    const SsmInputs<double>& inputs, const DecayMatrix<double>& a,
    std::span<const std::size_t> channels, RowRange rows, std::size_t layer,
    const FilterPolicy* policy) {
  inputs.validate();
  const std::size_t length = inputs.length();
  const std::size_t d_state = inputs.d_state();
  if (a.d_inner() != inputs.d_inner() || a.d_state() != d_state) {
    throw DataError("attention_scores: decay matrix " +
                    shape_string(a.values()) + " does not match inputs");
  }
  if (policy != nullptr) policy->validate(inputs.d_inner());
  for (std::size_t ch : channels) {
    if (ch >= inputs.d_inner()) {
      throw ConfigError("channel " + std::to_string(ch) + " out of range [0, " +
                        std::to_string(inputs.d_inner()) + ")");
    }
  }
  const std::size_t end = std::min(rows.end, length);
  if (rows.begin >= end) {
    throw ConfigError("row range [" + std::to_string(rows.begin) + ", " +
                      std::to_string(end) + ") is empty for length " +
                      std::to_string(length));
  }
  const std::size_t stride =
      rows.stride == 0 ? default_row_stride(length) : rows.stride;

  std::vector<std::size_t> positions;
  for (std::size_t i = rows.begin; i < end; i += stride) positions.push_back(i);

  std::vector<AttentionSlice> slices(channels.size());
  parallel_for(channels.size(), [&](std::size_t n) {
    const std::size_t ch = channels[n];
    AttentionSlice& slice = slices[n];
    slice.layer = layer;
    slice.channel = ch;
    slice.positions = positions;
    slice.alpha = Matrix<double>(positions.size(), length, 0.0);

    std::vector<double> log_decay(d_state);
    for (std::size_t r = 0; r < positions.size(); ++r) {
      const std::size_t i = positions[r];
      auto c_i = inputs.c.row(i);
      std::fill(log_decay.begin(), log_decay.end(), 0.0);
      for (std::size_t j = i + 1; j-- > 0;) {
        const double dt = inputs.delta(j, ch);
        const bool filtered = policy != nullptr && policy->filters(ch, dt);
        if (!filtered) {
          double acc = 0.0;
          for (std::size_t s = 0; s < d_state; ++s) {
            acc += c_i[s] * std::exp(log_decay[s]) * (dt * inputs.b(j, s));
          }
          slice.alpha(r, j) = acc;
          for (std::size_t s = 0; s < d_state; ++s) {
            log_decay[s] += dt * a(s, ch);
          }
        }
      }
    }
  });
  return slices;
}

ReceptiveFieldProfile receptive_field(const AttentionSlice& slice,
                                      double epsilon) {
  if (!(epsilon > 0.0)) {
    throw ConfigError("receptive field threshold must be positive, got " +
                      std::to_string(epsilon));
  }
  ReceptiveFieldProfile profile;
  profile.layer = slice.layer;
  profile.channel = slice.channel;
  profile.epsilon = epsilon;
  profile.positions = slice.positions;
  profile.span.assign(slice.positions.size(), 0);
  for (std::size_t r = 0; r < slice.positions.size(); ++r) {
    const std::size_t i = slice.positions[r];
    for (std::size_t j = 0; j <= i; ++j) {
      if (std::abs(slice.alpha(r, j)) > epsilon) {
        profile.span[r] = i - j + 1;
        break;
      }
    }
  }
  return profile;
}

double log_mean_decay(double cumulative_delta, const DecayMatrix<double>& a,
                      std::size_t channel) {
  const std::size_t d_state = a.d_state();
  // The least negative entry dominates for any positive cumulative delta.
  double a_max = a(0, channel);
  for (std::size_t s = 1; s < d_state; ++s) a_max = std::max(a_max, a(s, channel));
  // Each term is computed as fl(S * (A_s - A_max)) so every step of the
  // evaluation is monotone in S.
  double sum = 0.0;
  for (std::size_t s = 0; s < d_state; ++s) {
    sum += std::exp(cumulative_delta * (a(s, channel) - a_max));
  }
  return cumulative_delta * a_max + std::log(sum) -
         std::log(static_cast<double>(d_state));
}

double decay_from_log(double log_value) noexcept {
  static const double kLogFloor = std::log(kDecayFloor);
  return log_value < kLogFloor ? 0.0 : std::exp(log_value);
}

DecayCurve decay_curve(const Matrix<double>& delta,
                       const DecayMatrix<double>& a, std::size_t channel,
                       std::size_t layer) {
  if (delta.cols() != a.d_inner()) {
    throw DataError("decay_curve: delta is " + shape_string(delta) +
                    " but decay matrix is " + shape_string(a.values()));
  }
  if (channel >= a.d_inner()) {
    throw ConfigError("channel " + std::to_string(channel) +
                      " out of range [0, " + std::to_string(a.d_inner()) +
                      ")");
  }
  DecayCurve curve;
  curve.layer = layer;
  curve.channel = channel;
  curve.values.reserve(delta.rows());
  curve.log_values.reserve(delta.rows());
  double cumulative = 0.0;
  for (std::size_t t = 0; t < delta.rows(); ++t) {
    if (!(delta(t, channel) > 0.0)) {
      throw DataError("decay_curve: delta must be positive at step " +
                      std::to_string(t));
    }
    cumulative += delta(t, channel);
    const double log_value = log_mean_decay(cumulative, a, channel);
    curve.log_values.push_back(log_value);
    curve.values.push_back(decay_from_log(log_value));
  }
  return curve;
}

}  // namespace longctx
