#pragma once

// Implicit attention of the selective scan. Unrolling the recurrence gives
//   y_i[c] = sum_{j<=i} alpha_{i,j}[c] * x_j[c],
//   alpha_{i,j}[c] = sum_s C_i[s] * prod_{k=j+1..i} exp(delta_k[c] A[s,c])
//                                * delta_j[c] * B_j[s].
// This header materializes alpha per channel, measures receptive fields and
// computes cumulative decay curves.

#include <cstddef>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

#include "longctx/ssm.hpp"
#include "longctx/tensor.hpp"

namespace longctx {

inline constexpr double kDefaultSignificance = 1e-3;
// Full rows are produced for sequences up to this length; longer sequences
// get a row stride so at most this many rows are kept per channel.
inline constexpr std::size_t kMaxDenseRows = 4096;

struct RowRange {
  std::size_t begin = 0;
  std::size_t end = std::numeric_limits<std::size_t>::max();  // clamped to L
  std::size_t stride = 0;  // 0 selects default_row_stride(L)
};

std::size_t default_row_stride(std::size_t length);

struct AttentionSlice {
  std::size_t layer = 0;
  std::size_t channel = 0;
  std::vector<std::size_t> positions;  // query position of each alpha row
  Matrix<double> alpha;                // positions.size() x L, zero for j > i

  std::size_t length() const noexcept { return alpha.cols(); }
};

// Rows are filled right to left with a running log-decay per state index,
// so each row costs O(L * d_state). With a policy, filtered tokens carry
// unit decay and zero input (alpha_{i,j} = 0 when token j is filtered).
std::vector<AttentionSlice> attention_scores(
    const SsmInputs<double>& inputs, const DecayMatrix<double>& a,
    std::span<const std::size_t> channels, RowRange rows = {},
    std::size_t layer = 0, const FilterPolicy* policy = nullptr);

struct ReceptiveFieldProfile {
  std::size_t layer = 0;
  std::size_t channel = 0;
  double epsilon = kDefaultSignificance;
  std::vector<std::size_t> positions;
  // i - min{j : |alpha_{i,j}| > epsilon} + 1, or 0 when no entry qualifies.
  std::vector<std::size_t> span;
};

ReceptiveFieldProfile receptive_field(const AttentionSlice& slice,
                                      double epsilon = kDefaultSignificance);

// Reported decay values below this floor are 0; the log value is kept.
inline constexpr double kDecayFloor = 1e-300;

struct DecayCurve {
  std::size_t layer = 0;
  std::size_t channel = 0;
  std::vector<double> values;      // values[t]: decay after t + 1 tokens
  std::vector<double> log_values;  // natural log of the unfloored value
};

// log( mean_s exp(cumulative_delta * A[s, channel]) ), shifted so it stays
// finite far below the double underflow range. Nonincreasing in
// cumulative_delta.
double log_mean_decay(double cumulative_delta, const DecayMatrix<double>& a,
                      std::size_t channel);

double decay_from_log(double log_value) noexcept;

DecayCurve decay_curve(const Matrix<double>& delta,
                       const DecayMatrix<double>& a, std::size_t channel,
                       std::size_t layer = 0);

enum class HeatmapScale { kLinear, kLog };

// Cell value used for coloring: alpha itself, or log10|alpha| (with zero
// mapped to -inf).
double render_value(double alpha, HeatmapScale scale) noexcept;

// Writes `csv_path` with header "i,j,alpha" and one line per lower-triangle
// cell of every stored row. With write_svg, also writes the same path with
// an .svg extension. Output bytes depend only on the slice.
void export_heatmap(const AttentionSlice& slice,
                    const std::filesystem::path& csv_path, HeatmapScale scale,
                    bool write_svg);

}  // namespace longctx
