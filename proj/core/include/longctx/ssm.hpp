#pragma once

// Selective state-space recurrence kernels.
//
// Shapes follow one convention throughout: a sequence of L tokens carries
// per-channel activations X and step sizes Delta (L x d_inner) and per-token
// gates B, C (L x d_state). The recurrent state and the decay matrix A are
// d_state x d_inner. Kernels are templated on the scalar type; the model runs
// them in float, analysis and oracles in double.

#include <concepts>
#include <cstddef>
#include <span>
#include <vector>

#include "longctx/tensor.hpp"

namespace longctx {

template <std::floating_point Real>
struct SsmInputs {
  Matrix<Real> x;      // L x d_inner, post-convolution activations
  Matrix<Real> delta;  // L x d_inner, strictly positive step sizes
  Matrix<Real> b;      // L x d_state, input gates
  Matrix<Real> c;      // L x d_state, output gates

  std::size_t length() const noexcept { return x.rows(); }
  std::size_t d_inner() const noexcept { return x.cols(); }
  std::size_t d_state() const noexcept { return b.cols(); }

  // Throws DataError on inconsistent shapes, non-finite values or a
  // non-positive step size.
  void validate() const;

  // Rows [begin, end) of every field.
  SsmInputs slice(std::size_t begin, std::size_t end) const;

  template <std::floating_point U>
  SsmInputs<U> cast() const {
    return {x.template cast<U>(), delta.template cast<U>(),
            b.template cast<U>(), c.template cast<U>()};
  }
};

// The continuous-time decay matrix A (d_state x d_inner). Every entry is
// strictly negative, so exp(delta * A) lies in (0, 1) for delta > 0.
template <std::floating_point Real>
class DecayMatrix {
 public:
  DecayMatrix() = default;  // empty, for default-constructed weight sets
  explicit DecayMatrix(Matrix<Real> a);

  const Matrix<Real>& values() const noexcept { return a_; }
  Real operator()(std::size_t s, std::size_t c) const noexcept {
    return a_(s, c);
  }
  std::size_t d_state() const noexcept { return a_.rows(); }
  std::size_t d_inner() const noexcept { return a_.cols(); }

 private:
  Matrix<Real> a_;
};

template <std::floating_point Real>
struct HiddenState {
  Matrix<Real> h;  // d_state x d_inner

  static HiddenState zeros(std::size_t d_state, std::size_t d_inner) {
    return {Matrix<Real>(d_state, d_inner, Real{0})};
  }
};

// Token filtering for global channels: on a global channel, a step whose
// delta is strictly below the channel threshold neither decays nor updates
// the state. A step with delta equal to the threshold is kept.
struct FilterPolicy {
  std::vector<bool> global_mask;   // d_inner, true = global channel
  std::vector<double> thresholds;  // d_inner, 0 for local channels

  // No channel global, all thresholds zero.
  static FilterPolicy neutral(std::size_t d_inner);

  std::size_t d_inner() const noexcept { return global_mask.size(); }

  template <typename Real>
  bool filters(std::size_t channel, Real delta) const noexcept {
    return global_mask[channel] &&
           static_cast<double>(delta) < thresholds[channel];
  }

  void validate(std::size_t d_inner) const;
};

// ln(1 + e^x) without overflow; returns x itself above 30. The result is
// clamped to the smallest positive normal so a step size is never zero.
template <std::floating_point Real>
Real softplus(Real x) noexcept;

template <std::floating_point Real>
struct Discretized {
  Matrix<Real> a_bar;  // exp(delta[c] * A[s, c])
  Matrix<Real> b_bar;  // delta[c] * b[s]
};

template <std::floating_point Real>
Discretized<Real> discretize(std::span<const Real> delta_t,
                             const DecayMatrix<Real>& a,
                             std::span<const Real> b_t);

template <std::floating_point Real>
struct ScanResult {
  Matrix<Real> y;  // L x d_inner
  HiddenState<Real> state;
};

// H_t = exp(delta_t A) * H_{t-1} + (delta_t b_t) * x_t,  y_t = c_t^T H_t.
// Throws NumericError naming the timestep if a non-finite output appears.
template <std::floating_point Real>
ScanResult<Real> selective_scan(const SsmInputs<Real>& inputs,
                                const DecayMatrix<Real>& a,
                                const HiddenState<Real>& h0);

// Same recurrence with token filtering on the policy's global channels.
template <std::floating_point Real>
ScanResult<Real> filtered_scan(const SsmInputs<Real>& inputs,
                               const DecayMatrix<Real>& a,
                               const HiddenState<Real>& h0,
                               const FilterPolicy& policy);

// State after the first `length` tokens (1 <= length <= L) from a zero
// initial state, by direct summation over contributing tokens with explicit
// decay products. Quadratic in length; used as a reference.
template <std::floating_point Real>
HiddenState<Real> expand_hidden_state(const SsmInputs<Real>& inputs,
                                      const DecayMatrix<Real>& a,
                                      std::size_t length);

// One recurrence step in place. Uses the same arithmetic as the batch scans,
// so iterating it reproduces them exactly.
template <std::floating_point Real>
std::vector<Real> scan_step(HiddenState<Real>& state,
                            const DecayMatrix<Real>& a,
                            std::span<const Real> x_t,
                            std::span<const Real> delta_t,
                            std::span<const Real> b_t,
                            std::span<const Real> c_t,
                            const FilterPolicy* policy = nullptr);

}  // namespace longctx
