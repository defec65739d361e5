#pragma once

// Offline calibration: step-size statistics from vanilla forward passes over
// training-length sequences, feeding channel classification and threshold
// table construction.

#include <cstddef>
#include <span>
#include <vector>

#include "longctx/channels.hpp"
#include "longctx/model.hpp"

namespace longctx {

inline constexpr std::size_t kDefaultCalibrationCount = 5;
inline constexpr double kDefaultClampPercent = 5.0;
inline constexpr double kDefaultTheta = 5e-2;

// Candidate thresholds for the classification sweep.
inline constexpr double kThetaGrid[] = {1e-40, 1e-30, 1e-20, 1e-10, 1e-5, 1e-4,
                                        1e-3,  1e-2,  5e-2,  1e-1,  5e-1};

struct CalibrationPass {
  // deltas[layer][sequence]: L x d_inner step sizes recorded after softplus.
  std::vector<std::vector<Matrix<double>>> deltas;
};

// One vanilla forward per sequence (sequences run in parallel).
CalibrationPass run_calibration(const ModelBundle& model,
                                std::span<const std::vector<TokenId>> sequences);

// Per-layer cumulative decay statistic and classification.
std::vector<ChannelClassification> classify_model(const ModelBundle& model,
                                                  const CalibrationPass& pass,
                                                  double theta);

// Pools every step of every sequence per (layer, channel) and winsorizes
// with clamp_percent. Result is indexed [layer][channel].
std::vector<std::vector<DeltaDistribution>> collect_delta_stats(
    const CalibrationPass& pass, double clamp_percent);

std::vector<std::vector<DeltaDistribution>> collect_delta_stats(
    const ModelBundle& model, std::span<const std::vector<TokenId>> sequences,
    double clamp_percent);

// Keeps only the distributions of each layer's global channels.
std::vector<std::vector<DeltaDistribution>> select_global(
    const std::vector<std::vector<DeltaDistribution>>& dists,
    std::span<const ChannelClassification> classification);

}  // namespace longctx
