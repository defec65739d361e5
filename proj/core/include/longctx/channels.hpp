#pragma once

// Global/local channel classification and the per-channel threshold tables
// that drive token filtering at lengths beyond the training length.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "longctx/ssm.hpp"
#include "longctx/tensor.hpp"

namespace longctx {

inline constexpr std::size_t kDefaultInterval = 1000;
inline constexpr int kThresholdTableFormat = 1;

enum class ChannelKind : std::uint8_t { kLocal, kGlobal };

// Per-channel cumulative decay over the training length, averaged over the
// state dimension and over calibration sequences.
struct DecayStatistic {
  std::vector<double> values;
  std::vector<double> log_values;
};

// `deltas` holds one L x d_inner step-size matrix per calibration sequence.
DecayStatistic cumulative_decay_at_length(
    std::span<const Matrix<double>> deltas, const DecayMatrix<double>& a);

struct ChannelClassification {
  std::size_t layer = 0;
  double theta = 0.0;
  std::size_t train_length = 0;
  std::vector<ChannelKind> labels;
  std::vector<double> decay_at_length;

  std::size_t n_global() const noexcept;
  std::size_t n_local() const noexcept { return labels.size() - n_global(); }
  std::vector<std::size_t> global_channels() const;
};

// A channel is global iff its decay strictly exceeds theta.
ChannelClassification classify_channels(std::span<const double> decay,
                                        double theta, std::size_t layer = 0,
                                        std::size_t train_length = 0);

struct DeltaDistribution {
  std::size_t layer = 0;
  std::size_t channel = 0;
  std::vector<double> samples;  // ascending, strictly positive
  double clamp_percent = 0.0;

  // Sorts and checks the samples.
  static DeltaDistribution from_samples(std::size_t layer, std::size_t channel,
                                        std::vector<double> samples);

  double mean() const;
};

// Nearest-rank percentile of ascending data: element ceil(p/100 * n).
double nearest_rank_percentile(std::span<const double> sorted, double percent);

// Caps every sample above the (100 - clamp_percent)th percentile at that
// percentile. Idempotent for a fixed clamp_percent in [0, 100).
void winsorize(DeltaDistribution& dist, double clamp_percent);

// Threshold g for target length S so that the kept step-size mass at S
// matches the mean mass at the training length L:
//   argmin_g | S * f(g) - L * m |,  f(g) = mean(x * [x >= g]),  m = mean(x).
// Candidates are 0, every distinct sample and one value just above the
// largest sample; ties go to the smaller g. Returns 0 when S <= L.
double solve_threshold(const DeltaDistribution& dist, std::size_t train_length,
                       std::size_t target_length);

// Objective value used by solve_threshold for a given g, exposed for tests
// and diagnostics.
double alignment_error(const DeltaDistribution& dist, std::size_t train_length,
                       std::size_t target_length, double g);

struct ThresholdEntry {
  std::size_t length = 0;
  double threshold = 0.0;
  friend bool operator==(const ThresholdEntry&, const ThresholdEntry&) = default;
};

struct ChannelThresholds {
  std::size_t channel = 0;
  std::vector<ThresholdEntry> entries;
  friend bool operator==(const ChannelThresholds&,
                         const ChannelThresholds&) = default;
};

struct LayerThresholds {
  std::size_t layer = 0;
  std::vector<ChannelThresholds> channels;  // global channels, ascending
  friend bool operator==(const LayerThresholds&,
                         const LayerThresholds&) = default;
};

struct ThresholdTable {
  int format_version = kThresholdTableFormat;
  std::size_t train_length = 0;
  std::size_t interval = kDefaultInterval;
  std::size_t s_max = 0;
  double theta = 0.0;
  double clamp_percent = 0.0;
  std::vector<LayerThresholds> layers;
  // Raw JSON object text carried through file round trips; "{}" if absent.
  std::string provenance = "{}";

  // Largest row length (multiple of interval not exceeding s_max).
  std::size_t last_row() const noexcept;
  friend bool operator==(const ThresholdTable&, const ThresholdTable&) = default;
};

// `dists[l]` holds the distributions of layer l's global channels.
ThresholdTable build_threshold_table(
    std::span<const std::vector<DeltaDistribution>> dists,
    std::size_t train_length, std::size_t s_max,
    std::size_t interval = kDefaultInterval);

// Row used for sequence length S: S rounded to the nearest multiple of the
// interval (halves round up), clamped to [interval, last_row()].
std::size_t lookup_row(const ThresholdTable& table, std::size_t length);

struct LookupResult {
  std::size_t row = 0;
  // thresholds[l] is indexed like table.layers[l].channels.
  std::vector<std::vector<double>> thresholds;
};

LookupResult lookup(const ThresholdTable& table, std::size_t length);

// Filter policy for one layer at sequence length S. The mask comes from the
// classification; every global channel must have a table entry.
FilterPolicy policy_for_layer(const ThresholdTable& table,
                              const ChannelClassification& classification,
                              std::size_t length);

// Classification implied by a table: channels listed in it are global.
ChannelClassification classification_from_table(const ThresholdTable& table,
                                                std::size_t layer,
                                                std::size_t d_inner);

std::string threshold_table_to_json(const ThresholdTable& table);
ThresholdTable threshold_table_from_json(const std::string& text);
void write_threshold_table(const ThresholdTable& table,
                           const std::filesystem::path& path);
ThresholdTable read_threshold_table(const std::filesystem::path& path);

// {"theta":..,"train_length":..,"layers":[{layer,n_global,n_local,
// labels,decay}]} and "layer,n_global,n_local" CSV.
std::string classification_report_json(
    std::span<const ChannelClassification> layers);
std::string classification_report_csv(
    std::span<const ChannelClassification> layers);

}  // namespace longctx
