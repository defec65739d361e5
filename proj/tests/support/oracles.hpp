#pragma once

// Independent reference implementations and random instance generators used
// by the unit and acceptance tests. Everything here is written as plainly as
// possible and shares no code with the library kernels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "longctx/rng.hpp"
#include "longctx/ssm.hpp"

namespace longctx::oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat to_rows(const Matrix<double>& m) {
  Mat out(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out[r][c] = m(r, c);
  return out;
}

struct Instance {
  SsmInputs<double> inputs;
  DecayMatrix<double> a;
};

// Step sizes log-uniform in [delta_lo, delta_hi], A entries in
// [-a_hi, -a_lo], gates and activations standard normal.
inline Instance random_instance(Rng& rng, std::size_t length, std::size_t d_state,
                                std::size_t d_inner, double delta_lo = 0.01,
                                double delta_hi = 1.0, double a_lo = 0.05,
                                double a_hi = 2.0) {
  Instance inst;
  auto& in = inst.inputs;
  in.x = Matrix<double>(length, d_inner);
  in.delta = Matrix<double>(length, d_inner);
  in.b = Matrix<double>(length, d_state);
  in.c = Matrix<double>(length, d_state);
  const double llo = std::log(delta_lo), lhi = std::log(delta_hi);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t c = 0; c < d_inner; ++c) {
      in.x(t, c) = rng.normal();
      in.delta(t, c) = std::exp(rng.uniform(llo, lhi));
    }
    for (std::size_t s = 0; s < d_state; ++s) {
      in.b(t, s) = rng.normal();
      in.c(t, s) = rng.normal();
    }
  }
  Matrix<double> a(d_state, d_inner);
  for (auto& v : a.flat()) v = -rng.uniform(a_lo, a_hi);
  inst.a = DecayMatrix<double>(std::move(a));
  return inst;
}

// y_i[c] = sum_s C_i[s] sum_{j<=i} exp(A[s,c] * sum_{k=j+1..i} delta_k[c])
//          * delta_j[c] B_j[s] x_j[c], with the exponent summed directly.
inline Mat expansion_outputs(const SsmInputs<double>& in,
                             const DecayMatrix<double>& a) {
  const std::size_t L = in.length(), E = in.d_inner(), N = in.d_state();
  Mat y(L, std::vector<double>(E, 0.0));
  for (std::size_t c = 0; c < E; ++c) {
    for (std::size_t i = 0; i < L; ++i) {
      double yi = 0.0;
      for (std::size_t s = 0; s < N; ++s) {
        double hs = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          double exponent = 0.0;
          for (std::size_t k = j + 1; k <= i; ++k) exponent += in.delta(k, c);
          hs += std::exp(a(s, c) * exponent) * in.delta(j, c) * in.b(j, s) *
                in.x(j, c);
        }
        yi += in.c(i, s) * hs;
      }
      y[i][c] = yi;
    }
  }
  return y;
}

struct ReferenceRun {
  Mat y;
  std::vector<Mat> states;  // states[t] = H after token t, d_state x d_inner
};

// Literal step-by-step interpreter of the (optionally filtered) recurrence.
// A channel with mask set and delta strictly below its threshold keeps its
// state column and reads it out unchanged.
inline ReferenceRun reference_scan(const SsmInputs<double>& in,
                                   const DecayMatrix<double>& a,
                                   const std::vector<bool>& mask = {},
                                   const std::vector<double>& thresholds = {}) {
  const std::size_t L = in.length(), E = in.d_inner(), N = in.d_state();
  ReferenceRun run;
  Mat h(N, std::vector<double>(E, 0.0));
  for (std::size_t t = 0; t < L; ++t) {
    std::vector<double> y(E, 0.0);
    for (std::size_t c = 0; c < E; ++c) {
      const double d = in.delta(t, c);
      const bool skip = !mask.empty() && mask[c] && d < thresholds[c];
      for (std::size_t s = 0; s < N; ++s) {
        if (!skip) {
          const double a_bar = std::exp(d * a(s, c));
          const double b_bar = d * in.b(t, s);
          h[s][c] = a_bar * h[s][c] + b_bar * in.x(t, c);
        }
        y[c] += in.c(t, s) * h[s][c];
      }
    }
    run.y.push_back(y);
    run.states.push_back(h);
  }
  return run;
}

// alpha_{i,j}[c] by explicit products of per-step decay factors.
// Filtered steps contribute a factor of 1 and filtered sources give 0.
inline double direct_alpha(const SsmInputs<double>& in,
                           const DecayMatrix<double>& a, std::size_t c,
                           std::size_t i, std::size_t j,
                           const std::vector<bool>& filtered = {}) {
  if (j > i) return 0.0;
  if (!filtered.empty() && filtered[j]) return 0.0;
  double total = 0.0;
  for (std::size_t s = 0; s < in.d_state(); ++s) {
    double prod = 1.0;
    for (std::size_t k = j + 1; k <= i; ++k) {
      if (!filtered.empty() && filtered[k]) continue;
      prod *= std::exp(in.delta(k, c) * a(s, c));
    }
    total += in.c(i, s) * prod * in.delta(j, c) * in.b(j, s);
  }
  return total;
}

// max |got - want| / max |want|.
inline double max_rel_err(const Mat& got, const Mat& want) {
  double num = 0.0, den = 0.0;
  for (std::size_t r = 0; r < want.size(); ++r) {
    for (std::size_t c = 0; c < want[r].size(); ++c) {
      num = std::max(num, std::abs(got[r][c] - want[r][c]));
      den = std::max(den, std::abs(want[r][c]));
    }
  }
  return den == 0.0 ? num : num / den;
}

template <typename T>
double max_rel_err(const Matrix<T>& got, const Matrix<T>& want) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < want.size(); ++i) {
    num = std::max(num, std::abs(static_cast<double>(got.flat()[i]) -
                                 static_cast<double>(want.flat()[i])));
    den = std::max(den, std::abs(static_cast<double>(want.flat()[i])));
  }
  return den == 0.0 ? num : num / den;
}

// Exhaustive threshold search: every candidate g is tried with an O(n)
// kept-mass sum, accumulated from the largest sample down.
inline double enumerate_threshold(std::vector<double> samples,
                                  std::size_t train_length,
                                  std::size_t target_length) {
  if (target_length <= train_length) return 0.0;
  std::sort(samples.begin(), samples.end(), std::greater<>());
  const double n = static_cast<double>(samples.size());
  double total = 0.0;
  for (double v : samples) total += v;
  auto err = [&](double g) {
    double kept = 0.0;
    for (double v : samples) {
      if (v >= g) kept += v;
    }
    return std::abs(static_cast<double>(target_length) * (kept / n) -
                    static_cast<double>(train_length) * (total / n));
  };
  std::vector<double> candidates{0.0};
  candidates.insert(candidates.end(), samples.begin(), samples.end());
  candidates.push_back(
      std::nextafter(samples.front(), std::numeric_limits<double>::infinity()));
  double best_g = 0.0, best_err = err(0.0);
  for (double g : candidates) {
    const double e = err(g);
    if (e < best_err || (e == best_err && g < best_g)) {
      best_err = e;
      best_g = g;
    }
  }
  return best_g;
}

}  // namespace longctx::oracle
