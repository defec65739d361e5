#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "longctx/ssm.hpp"
#include "oracles.hpp"

namespace longctx {
namespace {

using oracle::max_rel_err;
using oracle::random_instance;
using oracle::to_rows;

TEST(Softplus, MatchesClosedFormAndStaysPositive) {
  for (double x : {-5.0, -1.0, 0.0, 0.5, 3.0, 20.0}) {
    EXPECT_NEAR(softplus(x), std::log1p(std::exp(x)), 1e-15 * (1 + std::abs(x)));
  }
  EXPECT_EQ(softplus(45.0), 45.0);
  EXPECT_GT(softplus(-800.0), 0.0);
  EXPECT_GT(softplus(-120.0f), 0.0f);
}

TEST(Discretize, MatchesScalarLoop) {
  Rng rng(11);
  auto inst = random_instance(rng, 1, 3, 5);
  const auto d = discretize<double>(inst.inputs.delta.row(0), inst.a,
                                    inst.inputs.b.row(0));
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t c = 0; c < 5; ++c) {
      const double dt = inst.inputs.delta(0, c);
      EXPECT_EQ(d.a_bar(s, c), std::exp(dt * inst.a(s, c)));
      EXPECT_EQ(d.b_bar(s, c), dt * inst.inputs.b(0, s));
      EXPECT_GT(d.a_bar(s, c), 0.0);
      EXPECT_LT(d.a_bar(s, c), 1.0);
    }
  }
}

TEST(DecayMatrix, RejectsNonNegativeEntries) {
  Matrix<double> a(2, 2, -1.0);
  a(1, 0) = 0.0;
  EXPECT_THROW(DecayMatrix<double>{a}, DataError);
}

TEST(SelectiveScan, ScalarHandExample) {
  // d_s = d_e = 1, A = -ln 2, delta = 1: a_bar = 0.5, b_bar = b.
  SsmInputs<double> in{Matrix<double>(3, 1, {1.0, 2.0, -1.0}),
                       Matrix<double>(3, 1, 1.0), Matrix<double>(3, 1, 1.0),
                       Matrix<double>(3, 1, 2.0)};
  DecayMatrix<double> a(Matrix<double>(1, 1, -std::log(2.0)));
  const auto r = selective_scan(in, a, HiddenState<double>::zeros(1, 1));
  EXPECT_NEAR(r.y(0, 0), 2.0, 1e-15);   // h = 1
  EXPECT_NEAR(r.y(1, 0), 5.0, 1e-15);   // h = 0.5 + 2
  EXPECT_NEAR(r.y(2, 0), 0.5, 1e-15);   // h = 1.25 - 1
}

TEST(SelectiveScan, MatchesExpansionOnRandomInstances) {
  Rng rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    auto inst = random_instance(rng, 1 + rng.below(40), 1 + rng.below(4),
                                1 + rng.below(8));
    const auto r = selective_scan(inst.inputs, inst.a,
                                  HiddenState<double>::zeros(inst.a.d_state(),
                                                             inst.a.d_inner()));
    EXPECT_LE(max_rel_err(to_rows(r.y),
                          oracle::expansion_outputs(inst.inputs, inst.a)),
              1e-10);
  }
}

TEST(ExpandHiddenState, MatchesRecurrenceAtEveryPrefix) {
  Rng rng(2);
  auto inst = random_instance(rng, 24, 3, 4);
  const auto ref = oracle::reference_scan(inst.inputs, inst.a);
  for (std::size_t len = 1; len <= 24; ++len) {
    const auto h = expand_hidden_state(inst.inputs, inst.a, len);
    EXPECT_LE(max_rel_err(to_rows(h.h), ref.states[len - 1]), 1e-12) << len;
  }
  EXPECT_THROW(expand_hidden_state(inst.inputs, inst.a, 0), DataError);
  EXPECT_THROW(expand_hidden_state(inst.inputs, inst.a, 25), DataError);
}

TEST(SelectiveScan, ZeroLengthIsNoOp) {
  SsmInputs<double> in{Matrix<double>(0, 2), Matrix<double>(0, 2),
                       Matrix<double>(0, 3), Matrix<double>(0, 3)};
  DecayMatrix<double> a(Matrix<double>(3, 2, -1.0));
  auto h0 = HiddenState<double>::zeros(3, 2);
  h0.h(1, 1) = 4.0;
  const auto r = selective_scan(in, a, h0);
  EXPECT_EQ(r.y.rows(), 0u);
  EXPECT_EQ(r.state.h, h0.h);
}

TEST(SelectiveScan, RejectsBadInputs) {
  Rng rng(3);
  auto inst = random_instance(rng, 4, 2, 3);
  const auto h0 = HiddenState<double>::zeros(2, 3);
  auto bad = inst.inputs;
  bad.delta(2, 1) = 0.0;
  EXPECT_THROW(selective_scan(bad, inst.a, h0), DataError);
  bad = inst.inputs;
  bad.x(0, 0) = std::nan("");
  EXPECT_THROW(selective_scan(bad, inst.a, h0), DataError);
  EXPECT_THROW(selective_scan(inst.inputs, inst.a, HiddenState<double>::zeros(3, 3)),
               DataError);
}

TEST(SelectiveScan, OverflowNamesTimestep) {
  SsmInputs<float> in{Matrix<float>(3, 1, 3e38f), Matrix<float>(3, 1, 1.0f),
                      Matrix<float>(3, 1, 10.0f), Matrix<float>(3, 1, 10.0f)};
  DecayMatrix<float> a(Matrix<float>(1, 1, -1e-6f));
  try {
    selective_scan(in, a, HiddenState<float>::zeros(1, 1));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("timestep 0"), std::string::npos);
  }
}

TEST(FilteredScan, NeutralPolicyIsBitwiseVanilla) {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    auto inst = random_instance(rng, 20, 3, 6);
    const auto h0 = HiddenState<double>::zeros(3, 6);
    const auto v = selective_scan(inst.inputs, inst.a, h0);
    const auto f = filtered_scan(inst.inputs, inst.a, h0, FilterPolicy::neutral(6));
    EXPECT_EQ(v.y, f.y);
    EXPECT_EQ(v.state.h, f.state.h);
  }
}

TEST(FilteredScan, MatchesLiteralInterpreter) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto inst = random_instance(rng, 30, 2, 5);
    FilterPolicy policy = FilterPolicy::neutral(5);
    for (std::size_t c = 0; c < 5; ++c) {
      policy.global_mask[c] = rng.uniform() < 0.6;
      policy.thresholds[c] = policy.global_mask[c] ? rng.uniform(0.01, 0.5) : 0.0;
    }
    const auto r = filtered_scan(inst.inputs, inst.a,
                                 HiddenState<double>::zeros(2, 5), policy);
    const auto ref = oracle::reference_scan(inst.inputs, inst.a,
                                            policy.global_mask, policy.thresholds);
    EXPECT_LE(max_rel_err(to_rows(r.y), ref.y), 1e-13);
  }
}

TEST(FilteredScan, DeltaEqualToThresholdIsKept) {
  SsmInputs<double> in{Matrix<double>(2, 1, 1.0), Matrix<double>(2, 1, 0.25),
                       Matrix<double>(2, 1, 1.0), Matrix<double>(2, 1, 1.0)};
  DecayMatrix<double> a(Matrix<double>(1, 1, -1.0));
  FilterPolicy policy{{true}, {0.25}};
  const auto h0 = HiddenState<double>::zeros(1, 1);
  EXPECT_EQ(filtered_scan(in, a, h0, policy).y, selective_scan(in, a, h0).y);
  policy.thresholds[0] = std::nextafter(0.25, 1.0);
  const auto all_filtered = filtered_scan(in, a, h0, policy);
  EXPECT_EQ(all_filtered.y(1, 0), 0.0);
  EXPECT_EQ(all_filtered.state.h(0, 0), 0.0);
}

TEST(FilteredScan, LocalChannelsIgnoreThresholds) {
  Rng rng(6);
  auto inst = random_instance(rng, 12, 2, 3);
  FilterPolicy policy{{false, false, false}, {10.0, 10.0, 10.0}};
  const auto h0 = HiddenState<double>::zeros(2, 3);
  EXPECT_EQ(filtered_scan(inst.inputs, inst.a, h0, policy).y,
            selective_scan(inst.inputs, inst.a, h0).y);
}

TEST(FilterPolicy, ValidatesShape) {
  FilterPolicy p{{true, false}, {0.1}};
  EXPECT_THROW(p.validate(2), DataError);
  FilterPolicy q{{true}, {-0.1}};
  EXPECT_THROW(q.validate(1), DataError);
}

TEST(ScanStep, IteratesToBatchScanExactly) {
  Rng rng(7);
  auto inst = random_instance(rng, 25, 3, 4);
  FilterPolicy policy{{true, false, true, false}, {0.1, 0.0, 0.3, 0.0}};
  const auto batch = filtered_scan(inst.inputs, inst.a,
                                   HiddenState<double>::zeros(3, 4), policy);
  auto state = HiddenState<double>::zeros(3, 4);
  const auto& in = inst.inputs;
  for (std::size_t t = 0; t < in.length(); ++t) {
    const auto y = scan_step<double>(state, inst.a, in.x.row(t), in.delta.row(t),
                                     in.b.row(t), in.c.row(t), &policy);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(y[c], batch.y(t, c));
  }
  EXPECT_EQ(state.h, batch.state.h);
}

TEST(SelectiveScan, ChunkedEqualsWhole) {
  Rng rng(8);
  auto inst = random_instance(rng, 16, 2, 3);
  const auto h0 = HiddenState<double>::zeros(2, 3);
  const auto whole = selective_scan(inst.inputs, inst.a, h0);
  for (std::size_t k = 0; k <= 16; ++k) {
    const auto first = selective_scan(inst.inputs.slice(0, k), inst.a, h0);
    const auto second =
        selective_scan(inst.inputs.slice(k, 16), inst.a, first.state);
    EXPECT_EQ(second.state.h, whole.state.h);
    for (std::size_t t = 0; t < 16; ++t) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double got = t < k ? first.y(t, c) : second.y(t - k, c);
        EXPECT_EQ(got, whole.y(t, c));
      }
    }
  }
}

TEST(SelectiveScan, FloatTracksDouble) {
  Rng rng(9);
  auto inst = random_instance(rng, 40, 4, 8);
  const auto d = selective_scan(inst.inputs, inst.a, HiddenState<double>::zeros(4, 8));
  const auto f = selective_scan(inst.inputs.cast<float>(),
                                DecayMatrix<float>(inst.a.values().cast<float>()),
                                HiddenState<float>::zeros(4, 8));
  EXPECT_LE(max_rel_err(f.y.cast<double>(), d.y), 1e-5);
}

// Property: the state is linear in x, so scaling x scales y.
TEST(SelectiveScanProperty, LinearInActivations) {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    auto inst = random_instance(rng, 1 + rng.below(30), 1 + rng.below(4),
                                1 + rng.below(6));
    auto scaled = inst.inputs;
    for (auto& v : scaled.x.flat()) v *= 2.0;
    const auto h0 = HiddenState<double>::zeros(inst.a.d_state(), inst.a.d_inner());
    const auto y1 = selective_scan(inst.inputs, inst.a, h0).y;
    const auto y2 = selective_scan(scaled, inst.a, h0).y;
    for (std::size_t i = 0; i < y1.size(); ++i) {
      EXPECT_EQ(y2.flat()[i], 2.0 * y1.flat()[i]);
    }
  }
}

// Property: outputs at position t do not depend on inputs after t.
TEST(SelectiveScanProperty, Causal) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    auto inst = random_instance(rng, 2 + rng.below(30), 2, 3);
    const std::size_t cut = rng.below(inst.inputs.length() - 1) + 1;
    auto changed = inst.inputs;
    for (std::size_t t = cut; t < changed.length(); ++t) {
      changed.x(t, 0) += 1.0;
      changed.delta(t, 1) *= 2.0;
      changed.b(t, 0) -= 1.0;
    }
    const auto h0 = HiddenState<double>::zeros(2, 3);
    const auto y1 = selective_scan(inst.inputs, inst.a, h0).y;
    const auto y2 = selective_scan(changed, inst.a, h0).y;
    for (std::size_t t = 0; t < cut; ++t) {
      for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(y1(t, c), y2(t, c));
    }
  }
}

}  // namespace
}  // namespace longctx
