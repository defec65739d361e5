#include "longctx/ssm.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace longctx {

namespace {

template <typename Real>
void require_finite(const Matrix<Real>& m, const char* name) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (!std::isfinite(m(r, c))) {
        throw DataError(std::string(name) + " has a non-finite entry at (" +
                        std::to_string(r) + ", " + std::to_string(c) + ")");
      }
    }
  }
}

template <typename Real>
void check_compatible(const SsmInputs<Real>& inputs,
                      const DecayMatrix<Real>& a,
                      const HiddenState<Real>& h0) {
  inputs.validate();
  if (a.d_inner() != inputs.d_inner() || a.d_state() != inputs.d_state()) {
    throw DataError("decay matrix is " + shape_string(a.values()) +
                    " but inputs need " +
                    shape_string(inputs.d_state(), inputs.d_inner()));
  }
  if (!h0.h.same_shape(a.values())) {
    throw DataError("initial state is " + shape_string(h0.h) +
                    " but decay matrix is " + shape_string(a.values()));
  }
}

// One step for every channel. `frozen` marks channels whose update is
// skipped at this step. Shared by the batch scans and scan_step.
template <typename Real>
void advance(Matrix<Real>& h, const Matrix<Real>& a, std::span<const Real> x,
             std::span<const Real> delta, std::span<const Real> b,
             std::span<const Real> c, const std::vector<char>& frozen,
             std::span<Real> y) {
  const std::size_t d_state = h.rows();
  const std::size_t d_inner = h.cols();
  for (std::size_t ch = 0; ch < d_inner; ++ch) y[ch] = Real{0};
  for (std::size_t s = 0; s < d_state; ++s) {
    auto hs = h.row(s);
    auto as = a.row(s);
    for (std::size_t ch = 0; ch < d_inner; ++ch) {
      if (!frozen[ch]) {
        const Real dt = delta[ch];
        hs[ch] = std::exp(dt * as[ch]) * hs[ch] + (dt * b[s]) * x[ch];
      }
      y[ch] += c[s] * hs[ch];
    }
  }
}

template <typename Real>
void mark_frozen(const FilterPolicy* policy, std::span<const Real> delta,
                 std::vector<char>& frozen) {
  if (policy == nullptr) return;
  for (std::size_t ch = 0; ch < frozen.size(); ++ch) {
    frozen[ch] = policy->filters(ch, delta[ch]) ? 1 : 0;
  }
}

template <typename Real>
void require_finite_row(std::span<const Real> y, std::size_t t) {
  for (std::size_t ch = 0; ch < y.size(); ++ch) {
    if (!std::isfinite(y[ch])) {
      throw NumericError("non-finite scan output at timestep " +
                         std::to_string(t) + ", channel " +
                         std::to_string(ch));
    }
  }
}

template <typename Real>
ScanResult<Real> scan_impl(const SsmInputs<Real>& inputs,
                           const DecayMatrix<Real>& a,
                           const HiddenState<Real>& h0,
                           const FilterPolicy* policy) {
  check_compatible(inputs, a, h0);
  if (policy != nullptr) policy->validate(inputs.d_inner());

  ScanResult<Real> out{Matrix<Real>(inputs.length(), inputs.d_inner()), h0};
  std::vector<char> frozen(inputs.d_inner(), 0);
  for (std::size_t t = 0; t < inputs.length(); ++t) {
    mark_frozen(policy, inputs.delta.row(t), frozen);
    advance(out.state.h, a.values(), inputs.x.row(t), inputs.delta.row(t),
            inputs.b.row(t), inputs.c.row(t), frozen, out.y.row(t));
    require_finite_row<Real>(out.y.row(t), t);
  }
  return out;
}

}  // namespace

template <std::floating_point Real>
void SsmInputs<Real>::validate() const {
  const std::size_t len = x.rows();
  if (delta.rows() != len || b.rows() != len || c.rows() != len) {
    throw DataError("sequence lengths differ: x " + shape_string(x) +
                    ", delta " + shape_string(delta) + ", b " +
                    shape_string(b) + ", c " + shape_string(c));
  }
  if (delta.cols() != x.cols()) {
    throw DataError("delta is " + shape_string(delta) + " but x is " +
                    shape_string(x));
  }
  if (c.cols() != b.cols()) {
    throw DataError("c is " + shape_string(c) + " but b is " +
                    shape_string(b));
  }
  require_finite(x, "x");
  require_finite(delta, "delta");
  require_finite(b, "b");
  require_finite(c, "c");
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t ch = 0; ch < delta.cols(); ++ch) {
      if (!(delta(t, ch) > Real{0})) {
        throw DataError("delta must be positive; got " +
                        std::to_string(delta(t, ch)) + " at (" +
                        std::to_string(t) + ", " + std::to_string(ch) + ")");
      }
    }
  }
}

template <std::floating_point Real>
SsmInputs<Real> SsmInputs<Real>::slice(std::size_t begin,
                                       std::size_t end) const {
  if (begin > end || end > length()) {
    throw DataError("slice [" + std::to_string(begin) + ", " +
                    std::to_string(end) + ") out of range for length " +
                    std::to_string(length()));
  }
  auto rows = [&](const Matrix<Real>& m) {
    Matrix<Real> out(end - begin, m.cols());
    for (std::size_t t = begin; t < end; ++t) {
      auto src = m.row(t);
      std::copy(src.begin(), src.end(), out.row(t - begin).begin());
    }
    return out;
  };
  return {rows(x), rows(delta), rows(b), rows(c)};
}

template <std::floating_point Real>
DecayMatrix<Real>::DecayMatrix(Matrix<Real> a) : a_(std::move(a)) {
  for (std::size_t s = 0; s < a_.rows(); ++s) {
    for (std::size_t c = 0; c < a_.cols(); ++c) {
      if (!(a_(s, c) < Real{0}) || !std::isfinite(a_(s, c))) {
        throw DataError("decay matrix entry (" + std::to_string(s) + ", " +
                        std::to_string(c) + ") = " + std::to_string(a_(s, c)) +
                        " is not strictly negative");
      }
    }
  }
}

FilterPolicy FilterPolicy::neutral(std::size_t d_inner) {
  return {std::vector<bool>(d_inner, false), std::vector<double>(d_inner, 0.0)};
}

void FilterPolicy::validate(std::size_t d_inner) const {
  if (global_mask.size() != d_inner || thresholds.size() != d_inner) {
    throw DataError("filter policy covers " +
                    std::to_string(global_mask.size()) + " mask / " +
                    std::to_string(thresholds.size()) +
                    " threshold entries for " + std::to_string(d_inner) +
                    " channels");
  }
  for (std::size_t c = 0; c < d_inner; ++c) {
    if (!std::isfinite(thresholds[c]) || thresholds[c] < 0.0) {
      throw DataError("filter threshold for channel " + std::to_string(c) +
                      " must be finite and nonnegative");
    }
  }
}

template <std::floating_point Real>
Real softplus(Real x) noexcept {
  if (x > Real{30}) return x;
  const Real v = std::log1p(std::exp(x));
  return v > std::numeric_limits<Real>::min() ? v
                                              : std::numeric_limits<Real>::min();
}

template <std::floating_point Real>
Discretized<Real> discretize(std::span<const Real> delta_t,
                             const DecayMatrix<Real>& a,
                             std::span<const Real> b_t) {
  if (delta_t.size() != a.d_inner() || b_t.size() != a.d_state()) {
    throw DataError("discretize: delta has " + std::to_string(delta_t.size()) +
                    " and b has " + std::to_string(b_t.size()) +
                    " entries for a " + shape_string(a.values()) +
                    " decay matrix");
  }
  for (std::size_t c = 0; c < delta_t.size(); ++c) {
    if (!(delta_t[c] > Real{0}) || !std::isfinite(delta_t[c])) {
      throw DataError("discretize: delta must be positive; channel " +
                      std::to_string(c) + " has " +
                      std::to_string(delta_t[c]));
    }
  }
  Discretized<Real> out{Matrix<Real>(a.d_state(), a.d_inner()),
                        Matrix<Real>(a.d_state(), a.d_inner())};
  for (std::size_t s = 0; s < a.d_state(); ++s) {
    for (std::size_t c = 0; c < a.d_inner(); ++c) {
      out.a_bar(s, c) = std::exp(delta_t[c] * a(s, c));
      out.b_bar(s, c) = delta_t[c] * b_t[s];
    }
  }
  return out;
}

template <std::floating_point Real>
ScanResult<Real> selective_scan(const SsmInputs<Real>& inputs,
                                const DecayMatrix<Real>& a,
                                const HiddenState<Real>& h0) {
  return scan_impl(inputs, a, h0, nullptr);
}

template <std::floating_point Real>
ScanResult<Real> filtered_scan(const SsmInputs<Real>& inputs,
                               const DecayMatrix<Real>& a,
                               const HiddenState<Real>& h0,
                               const FilterPolicy& policy) {
  return scan_impl(inputs, a, h0, &policy);
}

template <std::floating_point Real>
HiddenState<Real> expand_hidden_state(const SsmInputs<Real>& inputs,
                                      const DecayMatrix<Real>& a,
                                      std::size_t length) {
  inputs.validate();
  if (length < 1 || length > inputs.length()) {
    throw DataError("expand_hidden_state: length " + std::to_string(length) +
                    " outside [1, " + std::to_string(inputs.length()) + "]");
  }
  const std::size_t d_state = a.d_state();
  const std::size_t d_inner = a.d_inner();

  std::vector<Discretized<Real>> steps;
  steps.reserve(length);
  for (std::size_t t = 0; t < length; ++t) {
    steps.push_back(discretize(inputs.delta.row(t), a, inputs.b.row(t)));
  }

  auto state = HiddenState<Real>::zeros(d_state, d_inner);
  for (std::size_t j = 0; j < length; ++j) {
    for (std::size_t s = 0; s < d_state; ++s) {
      for (std::size_t c = 0; c < d_inner; ++c) {
        Real decay{1};
        for (std::size_t k = j + 1; k < length; ++k) {
          decay *= steps[k].a_bar(s, c);
        }
        state.h(s, c) += decay * steps[j].b_bar(s, c) * inputs.x(j, c);
      }
    }
  }
  return state;
}

template <std::floating_point Real>
std::vector<Real> scan_step(HiddenState<Real>& state,
                            const DecayMatrix<Real>& a,
                            std::span<const Real> x_t,
                            std::span<const Real> delta_t,
                            std::span<const Real> b_t,
                            std::span<const Real> c_t,
                            const FilterPolicy* policy) {
  const std::size_t d_inner = a.d_inner();
  const std::size_t d_state = a.d_state();
  if (!state.h.same_shape(a.values()) || x_t.size() != d_inner ||
      delta_t.size() != d_inner || b_t.size() != d_state ||
      c_t.size() != d_state) {
    throw DataError("scan_step: inconsistent shapes for a " +
                    shape_string(a.values()) + " decay matrix");
  }
  if (policy != nullptr) policy->validate(d_inner);
  std::vector<char> frozen(d_inner, 0);
  mark_frozen(policy, delta_t, frozen);
  std::vector<Real> y(d_inner);
  advance<Real>(state.h, a.values(), x_t, delta_t, b_t, c_t, frozen, y);
  for (std::size_t ch = 0; ch < d_inner; ++ch) {
    if (!std::isfinite(y[ch])) {
      throw NumericError("non-finite scan_step output at channel " +
                         std::to_string(ch));
    }
  }
  return y;
}

#define LONGCTX_INSTANTIATE_SSM(Real)                                         \
  template struct SsmInputs<Real>;                                            \
  template class DecayMatrix<Real>;                                           \
  template Real softplus<Real>(Real) noexcept;                                \
  template Discretized<Real> discretize<Real>(                                \
      std::span<const Real>, const DecayMatrix<Real>&, std::span<const Real>); \
  template ScanResult<Real> selective_scan<Real>(                             \
      const SsmInputs<Real>&, const DecayMatrix<Real>&,                       \
      const HiddenState<Real>&);                                              \
  template ScanResult<Real> filtered_scan<Real>(                              \
      const SsmInputs<Real>&, const DecayMatrix<Real>&,                       \
      const HiddenState<Real>&, const FilterPolicy&);                         \
  template HiddenState<Real> expand_hidden_state<Real>(                       \
      const SsmInputs<Real>&, const DecayMatrix<Real>&, std::size_t);         \
  template std::vector<Real> scan_step<Real>(                                 \
      HiddenState<Real>&, const DecayMatrix<Real>&, std::span<const Real>,    \
      std::span<const Real>, std::span<const Real>, std::span<const Real>,    \
      const FilterPolicy*);

LONGCTX_INSTANTIATE_SSM(float)
LONGCTX_INSTANTIATE_SSM(double)

#undef LONGCTX_INSTANTIATE_SSM

}  // namespace longctx
