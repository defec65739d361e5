#include "longctx/calibration.hpp"

#include <string>

#include "longctx/parallel.hpp"

namespace longctx {

CalibrationPass run_calibration(const ModelBundle& model,
                                std::span<const std::vector<TokenId>> sequences) {
  if (sequences.empty()) throw DataError("calibration needs at least one sequence");
  const std::size_t n_layers = model.config.n_layers;
  CalibrationPass pass;
  pass.deltas.assign(n_layers, std::vector<Matrix<double>>(sequences.size()));
  parallel_for(sequences.size(), [&](std::size_t n) {
    if (sequences[n].empty()) {
      throw DataError("calibration sequence " + std::to_string(n) + " is empty");
    }
    ForwardTrace trace;
    forward(model, sequences[n], RunMode::vanilla(), &trace);
    for (std::size_t l = 0; l < n_layers; ++l) {
      pass.deltas[l][n] = trace.layers[l].delta.cast<double>();
    }
  });
  return pass;
}

std::vector<ChannelClassification> classify_model(const ModelBundle& model,
                                                  const CalibrationPass& pass,
                                                  double theta) {
  std::vector<ChannelClassification> out;
  for (std::size_t l = 0; l < model.config.n_layers; ++l) {
    const DecayMatrix<double> a(model.layers[l].a.values().cast<double>());
    const auto stat = cumulative_decay_at_length(pass.deltas[l], a);
    const std::size_t length = pass.deltas[l].front().rows();
    out.push_back(classify_channels(stat.values, theta, l, length));
  }
  return out;
}

std::vector<std::vector<DeltaDistribution>> collect_delta_stats(
    const CalibrationPass& pass, double clamp_percent) {
  std::vector<std::vector<DeltaDistribution>> out(pass.deltas.size());
  for (std::size_t l = 0; l < pass.deltas.size(); ++l) {
    const auto& seqs = pass.deltas[l];
    if (seqs.empty()) throw DataError("calibration pass has no sequences");
    const std::size_t d_inner = seqs.front().cols();
    out[l].resize(d_inner);
    parallel_for(d_inner, [&](std::size_t c) {
      std::vector<double> samples;
      for (const auto& delta : seqs) {
        for (std::size_t t = 0; t < delta.rows(); ++t) samples.push_back(delta(t, c));
      }
      auto dist = DeltaDistribution::from_samples(l, c, std::move(samples));
      winsorize(dist, clamp_percent);
      out[l][c] = std::move(dist);
    });
  }
  return out;
}

std::vector<std::vector<DeltaDistribution>> collect_delta_stats(
    const ModelBundle& model, std::span<const std::vector<TokenId>> sequences,
    double clamp_percent) {
  return collect_delta_stats(run_calibration(model, sequences), clamp_percent);
}

std::vector<std::vector<DeltaDistribution>> select_global(
    const std::vector<std::vector<DeltaDistribution>>& dists,
    std::span<const ChannelClassification> classification) {
  if (dists.size() != classification.size()) {
    throw DataError("distributions cover " + std::to_string(dists.size()) +
                    " layers, classification " +
                    std::to_string(classification.size()));
  }
  std::vector<std::vector<DeltaDistribution>> out(dists.size());
  for (std::size_t l = 0; l < dists.size(); ++l) {
    for (std::size_t c : classification[l].global_channels()) {
      out[l].push_back(dists[l].at(c));
    }
  }
  return out;
}

}  // namespace longctx
