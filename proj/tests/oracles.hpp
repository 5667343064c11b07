/// @file oracles.hpp
/// @brief Independent reference implementations used to check the library.
///
/// Everything here is written as plain quadruple loops or textbook formulas on
/// raw arrays, sharing no code with the library under test. Tests freeze
/// expected values against these, so keep them dumb and obvious.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "fluxcast/rng.hpp"
#include "fluxcast/tape.hpp"
#include "fluxcast/tensor.hpp"

namespace oracle {

inline double deg2rad(double d) { return d * 3.14159265358979323846 / 180.0; }

// cos-latitude weights normalized to unit mean, straight from the definition.
inline std::vector<double> lat_weights(const std::vector<double>& lat_deg) {
  std::vector<double> w(lat_deg.size());
  double mean = 0.0;
  for (size_t i = 0; i < w.size(); ++i) {
    w[i] = std::cos(deg2rad(lat_deg[i]));
    mean += w[i];
  }
  mean /= static_cast<double>(w.size());
  for (double& x : w) x /= mean;
  return w;
}

// Training loss: mean over steps, channels, and cells of alpha(h) * (pred-target)^2.
// pred/target are (N,K,H,W).
inline double weighted_loss(const fluxcast::Tensor& pred, const fluxcast::Tensor& target,
                            const std::vector<double>& lat_deg) {
  int n = pred.dim(0), k = pred.dim(1), h = pred.dim(2), w = pred.dim(3);
  std::vector<double> alpha = lat_weights(lat_deg);
  double acc = 0.0;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < k; ++b)
      for (int c = 0; c < h; ++c)
        for (int d = 0; d < w; ++d) {
          double diff = pred.at(a, b, c, d) - target.at(a, b, c, d);
          acc += alpha[c] * diff * diff;
        }
  return acc / (static_cast<double>(n) * k * h * w);
}

// Per-channel latitude-weighted RMSE of one field pair (K,H,W).
inline std::vector<double> rmse_single(const fluxcast::Tensor& pred,
                                       const fluxcast::Tensor& target,
                                       const std::vector<double>& lat_deg) {
  int k = pred.dim(0), h = pred.dim(1), w = pred.dim(2);
  std::vector<double> alpha = lat_weights(lat_deg);
  std::vector<double> out(k);
  for (int b = 0; b < k; ++b) {
    double acc = 0.0;
    for (int c = 0; c < h; ++c)
      for (int d = 0; d < w; ++d) {
        double diff = pred.at(b, c, d) - target.at(b, c, d);
        acc += alpha[c] * diff * diff;
      }
    out[b] = std::sqrt(acc / (static_cast<double>(h) * w));
  }
  return out;
}

// Per-channel anomaly correlation of one field pair against a climatology.
// weighted_numerator selects whether alpha(h) multiplies the numerator terms.
inline std::vector<double> acc_single(const fluxcast::Tensor& pred,
                                      const fluxcast::Tensor& target,
                                      const fluxcast::Tensor& clim,
                                      const std::vector<double>& lat_deg,
                                      bool weighted_numerator) {
  int k = pred.dim(0), h = pred.dim(1), w = pred.dim(2);
  std::vector<double> alpha = lat_weights(lat_deg);
  std::vector<double> out(k);
  for (int b = 0; b < k; ++b) {
    double num = 0.0, dp = 0.0, dt = 0.0;
    for (int c = 0; c < h; ++c)
      for (int d = 0; d < w; ++d) {
        double ap = pred.at(b, c, d) - clim.at(b, c, d);
        double at = target.at(b, c, d) - clim.at(b, c, d);
        num += (weighted_numerator ? alpha[c] : 1.0) * ap * at;
        dp += alpha[c] * ap * ap;
        dt += alpha[c] * at * at;
      }
    out[b] = num / std::sqrt(dp * dt);
  }
  return out;
}

// Per-cell temporal mean of a stack of (K,H,W) fields.
inline fluxcast::Tensor climatology(const std::vector<fluxcast::Tensor>& fields) {
  fluxcast::Tensor mean(fields.front().shape());
  for (const auto& f : fields) mean += f;
  mean *= 1.0 / static_cast<double>(fields.size());
  return mean;
}

// ============================================================================
// Finite-difference gradient checking
// ============================================================================

struct GradCheck {
  int checked = 0;
  double max_rel = 0.0;
  double worst_analytic = 0.0;
  double worst_fd = 0.0;
};

// Central differences on randomly chosen parameter entries. `eval` must
// recompute the scalar loss from the current parameter values (including any
// stochastic masks being re-drawn from the same seed). Analytic gradients are
// read from the store, so run backward() before calling.
//
// The 1e-6 denominator floor is the resolution limit of the oracle itself:
// double-precision rounding inside eval puts ~1e-11 of noise on each central
// difference, so gradients smaller than ~1e-6 cannot be compared relatively.
// Exactly-flat directions exist in attention (shifting every key by a
// constant cancels in softmax), and they would otherwise read as failures.
inline GradCheck fd_gradcheck(fluxcast::ad::ParamStore& store,
                              const std::function<double()>& eval, int per_param, double eps,
                              uint64_t seed) {
  GradCheck r;
  fluxcast::Rng rng(seed);
  for (auto& p : store.all()) {
    long n = p->value.size();
    int picks = static_cast<int>(std::min<long>(per_param, n));
    for (int i = 0; i < picks; ++i) {
      long idx = static_cast<long>(rng.next_below(static_cast<uint64_t>(n)));
      double saved = p->value[idx];
      p->value[idx] = saved + eps;
      double up = eval();
      p->value[idx] = saved - eps;
      double dn = eval();
      p->value[idx] = saved;
      double fd = (up - dn) / (2.0 * eps);
      double an = p->grad[idx];
      double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
      ++r.checked;
      if (rel > r.max_rel) {
        r.max_rel = rel;
        r.worst_analytic = an;
        r.worst_fd = fd;
      }
    }
  }
  return r;
}

// Periodic bump exp(kappa * (cos(2 pi (x - x0) / period) - 1)); smooth,
// strictly positive, exactly periodic. Used to build analytic advection
// solutions.
inline double von_mises(double x, double x0, double kappa, double period) {
  return std::exp(kappa * (std::cos(6.283185307179586 * (x - x0) / period) - 1.0));
}

}  // namespace oracle
