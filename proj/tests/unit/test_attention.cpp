#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "scratch.hpp"
#include "longctx/attention.hpp"
#include "oracles.hpp"

namespace longctx {
namespace {

namespace fs = std::filesystem;
using oracle::random_instance;

std::vector<std::size_t> all_channels(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(AttentionScores, MatchDirectProducts) {
  Rng rng(21);
  auto inst = random_instance(rng, 18, 3, 4);
  const auto channels = all_channels(4);
  const auto slices = attention_scores(inst.inputs, inst.a, channels);
  ASSERT_EQ(slices.size(), 4u);
  for (const auto& slice : slices) {
    ASSERT_EQ(slice.positions.size(), 18u);
    for (std::size_t i = 0; i < 18; ++i) {
      for (std::size_t j = 0; j < 18; ++j) {
        const double want =
            oracle::direct_alpha(inst.inputs, inst.a, slice.channel, i, j);
        EXPECT_NEAR(slice.alpha(i, j), want, 1e-12 * (1 + std::abs(want)));
      }
    }
  }
}

TEST(AttentionScores, ReconstructScanOutputs) {
  Rng rng(22);
  for (int trial = 0; trial < 10; ++trial) {
    auto inst = random_instance(rng, 1 + rng.below(50), 1 + rng.below(4),
                                1 + rng.below(6));
    const std::size_t E = inst.a.d_inner();
    const auto y = selective_scan(inst.inputs, inst.a,
                                  HiddenState<double>::zeros(inst.a.d_state(), E))
                       .y;
    const auto channels = all_channels(E);
    const auto slices = attention_scores(inst.inputs, inst.a, channels);
    for (const auto& s : slices) {
      for (std::size_t i = 0; i < y.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j <= i; ++j) acc += s.alpha(i, j) * inst.inputs.x(j, s.channel);
        EXPECT_NEAR(acc, y(i, s.channel), 1e-10 * (1 + std::abs(y(i, s.channel))));
      }
    }
  }
}

TEST(AttentionScores, FilteredTokensHaveUnitDecayAndNoInput) {
  Rng rng(23);
  auto inst = random_instance(rng, 30, 2, 3);
  FilterPolicy policy{{true, false, true}, {0.1, 0.0, 0.2}};
  const auto channels = all_channels(3);
  const auto slices = attention_scores(inst.inputs, inst.a, channels, {}, 0, &policy);
  const auto y = filtered_scan(inst.inputs, inst.a, HiddenState<double>::zeros(2, 3),
                               policy)
                     .y;
  for (const auto& s : slices) {
    std::vector<bool> filtered(30);
    for (std::size_t t = 0; t < 30; ++t) {
      filtered[t] = policy.filters(s.channel, inst.inputs.delta(t, s.channel));
    }
    for (std::size_t i = 0; i < 30; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        const double want =
            oracle::direct_alpha(inst.inputs, inst.a, s.channel, i, j, filtered);
        EXPECT_NEAR(s.alpha(i, j), want, 1e-12 * (1 + std::abs(want)));
        acc += s.alpha(i, j) * inst.inputs.x(j, s.channel);
      }
      // A filtered query position reads the frozen state with its own C.
      EXPECT_NEAR(acc, y(i, s.channel), 1e-10 * (1 + std::abs(y(i, s.channel))));
    }
  }
}

TEST(AttentionScores, RowSelection) {
  Rng rng(24);
  auto inst = random_instance(rng, 20, 2, 2);
  const std::size_t ch[] = {1};
  const auto full = attention_scores(inst.inputs, inst.a, ch);
  const auto part = attention_scores(inst.inputs, inst.a, ch, {5, 17, 4});
  ASSERT_EQ(part[0].positions, (std::vector<std::size_t>{5, 9, 13}));
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t j = 0; j < 20; ++j) {
      EXPECT_EQ(part[0].alpha(r, j), full[0].alpha(part[0].positions[r], j));
    }
  }
  const std::size_t bad[] = {2};
  EXPECT_THROW(attention_scores(inst.inputs, inst.a, bad), ConfigError);
  EXPECT_THROW(attention_scores(inst.inputs, inst.a, ch, {20, 30, 1}), ConfigError);
}

TEST(AttentionScores, DefaultStrideCapsRows) {
  EXPECT_EQ(default_row_stride(10), 1u);
  EXPECT_EQ(default_row_stride(kMaxDenseRows), 1u);
  EXPECT_EQ(default_row_stride(kMaxDenseRows + 1), 2u);
  EXPECT_EQ(default_row_stride(3 * kMaxDenseRows), 3u);
}

TEST(ReceptiveField, SpanFromFirstSignificantEntry) {
  AttentionSlice slice;
  slice.positions = {0, 3};
  slice.alpha = Matrix<double>(2, 4, 0.0);
  slice.alpha(0, 0) = 5e-4;
  slice.alpha(1, 0) = 1e-3;   // not strictly above epsilon
  slice.alpha(1, 1) = -2e-3;  // magnitude counts
  slice.alpha(1, 3) = 1.0;
  const auto p = receptive_field(slice);
  EXPECT_EQ(p.epsilon, 1e-3);
  EXPECT_EQ(p.span, (std::vector<std::size_t>{0, 3}));
  EXPECT_EQ(receptive_field(slice, 1e-4).span, (std::vector<std::size_t>{1, 4}));
  EXPECT_THROW(receptive_field(slice, 0.0), ConfigError);
  EXPECT_THROW(receptive_field(slice, -1.0), ConfigError);
}

TEST(DecayCurve, MatchesStepwiseProducts) {
  Rng rng(25);
  auto inst = random_instance(rng, 200, 4, 3);
  for (std::size_t c = 0; c < 3; ++c) {
    const auto curve = decay_curve(inst.inputs.delta, inst.a, c);
    std::vector<double> prod(4, 1.0);
    for (std::size_t t = 0; t < 200; ++t) {
      double mean = 0.0;
      for (std::size_t s = 0; s < 4; ++s) {
        prod[s] *= std::exp(inst.inputs.delta(t, c) * inst.a(s, c));
        mean += prod[s] / 4.0;
      }
      if (mean < kDecayFloor) {
        EXPECT_EQ(curve.values[t], 0.0);
      } else {
        EXPECT_NEAR(curve.values[t], mean, 1e-9 * mean);
      }
    }
  }
}

TEST(DecayCurve, StableFarBelowUnderflow) {
  // Cumulative delta 1000 with A = -1 gives log decay -1000.
  Matrix<double> delta(1000, 1, 1.0);
  DecayMatrix<double> a(Matrix<double>(2, 1, {-1.0, -3.0}));
  const auto curve = decay_curve(delta, a, 0);
  EXPECT_EQ(curve.values.back(), 0.0);
  EXPECT_NEAR(curve.log_values.back(), -1000.0 - std::log(2.0), 1e-9);
  EXPECT_EQ(decay_from_log(std::log(kDecayFloor) - 1.0), 0.0);
  EXPECT_GT(decay_from_log(std::log(kDecayFloor) + 1.0), 0.0);
}

// Property: the decay statistic is nonincreasing in cumulative delta.
TEST(DecayCurveProperty, LogMeanDecayMonotone) {
  Rng rng(26);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix<double> a(4, 1);
    for (auto& v : a.flat()) v = -std::exp(rng.uniform(-8.0, 2.0));
    DecayMatrix<double> am(a);
    double prev = 0.0;
    for (double s = 0.0; s < 1e5; s = s * 1.3 + rng.uniform(0.0, 1.0)) {
      const double cur = log_mean_decay(s, am, 0);
      EXPECT_LE(cur, prev);
      prev = cur;
    }
  }
}

TEST(Heatmap, CsvIsLowerTriangleAndDeterministic) {
  Rng rng(27);
  auto inst = random_instance(rng, 12, 2, 2);
  const std::size_t ch[] = {0};
  const auto slice = attention_scores(inst.inputs, inst.a, ch)[0];
  const auto dir = longctx::testing::scratch_path("longctx_heatmap_test");
  fs::create_directories(dir);
  export_heatmap(slice, dir / "a.csv", HeatmapScale::kLog, true);
  export_heatmap(slice, dir / "b.csv", HeatmapScale::kLog, true);
  const auto csv = slurp(dir / "a.csv");
  EXPECT_EQ(csv, slurp(dir / "b.csv"));
  EXPECT_EQ(slurp(dir / "a.svg"), slurp(dir / "b.svg"));
  EXPECT_EQ(csv.rfind("i,j,alpha\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 12 * 13 / 2);
  EXPECT_NE(slurp(dir / "a.svg").find("<svg"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Heatmap, RenderValue) {
  EXPECT_EQ(render_value(-0.5, HeatmapScale::kLinear), -0.5);
  EXPECT_DOUBLE_EQ(render_value(-1e-3, HeatmapScale::kLog), -3.0);
  EXPECT_TRUE(std::isinf(render_value(0.0, HeatmapScale::kLog)));
}

}  // namespace
}  // namespace longctx
