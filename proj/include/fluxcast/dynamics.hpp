#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fluxcast/models.hpp"

namespace fluxcast {

// ============================================================================
// Solver configuration
// ============================================================================

enum class Scheme { euler, rk4 };
Scheme scheme_from_string(const std::string& s);
std::string to_string(Scheme s);

/// What to do when the state goes non-finite mid-rollout: abort throws an
/// instability error naming the step; report truncates, pads the remaining
/// outputs with the last finite state, and flags the rollout.
enum class NanPolicy { abort, report };
NanPolicy nan_policy_from_string(const std::string& s);
std::string to_string(NanPolicy p);

struct SolverConfig {
  Scheme scheme = Scheme::euler;
  double dt_out_hours = 1.0;  // spacing of recorded states
  int substeps = 1;           // internal steps per recorded state; 0 degenerates to copies
  NanPolicy nan_policy = NanPolicy::abort;

  void validate() const;
};

void to_json(nlohmann::json& j, const SolverConfig& c);
void from_json(const nlohmann::json& j, SolverConfig& c);

// ============================================================================
// Rollout
// ============================================================================

/// Differentiable trajectory: state vars recorded at each output step
/// (n = 1..N), all living on the caller's graph.
struct Rollout {
  std::vector<ad::Var> u;       // (K,H,W) each
  std::vector<ad::Var> v;       // (2K,H,W) each
  std::vector<double> t_hours;  // absolute time of each recorded state
  bool diverged = false;
  int first_bad_step = -1;  // 1-based output step where the state went non-finite
};

/// One evaluation of the joint tendency: transport for the field, the learned
/// correction for the velocity. The source never appears here; it is applied
/// to the finished trajectory.
std::pair<ad::Var, ad::Var> state_tendency(ad::Graph& g, const ModelBundle& bundle, ad::Var u,
                                           ad::Var v, double t_hours);

/// Unrolled integration of (u, v) from t0 over n_steps output steps. Every
/// recorded state is differentiable back to u0, v0, and the parameters.
Rollout integrate(ad::Graph& g, const ModelBundle& bundle, ad::Var u0, ad::Var v0,
                  double t0_hours, int n_steps, const SolverConfig& solver);

/// Post-rollout correction: returns per-step u(t_n) + s(t_n). Velocities are
/// untouched. With the source disabled this is the identity on rollout.u.
std::vector<ad::Var> apply_source(ad::Graph& g, const ModelBundle& bundle, const Rollout& rollout,
                                  ad::Var u0, ad::Var v0);

// ============================================================================
// Discrete-time derivative baseline
// ============================================================================

/// Backward difference (u(t) - u(t - dt)) / dt, the rate input some velocity
/// plans consume.
Tensor finite_difference_velocity_baseline(const Tensor& u_now, const Tensor& u_prev,
                                           double dt_hours);

/// Accuracy of that estimate on the diurnal test signal sin(2*pi*t/period):
/// empirical RMS error over two whole periods of hourly samples, next to the
/// closed-form RMS sqrt((A^2 + w^2 - 2*A*w*cos(w*dt/2)) / 2) with
/// A = (2/dt) * sin(w*dt/2). The error grows with dt near the beginning of
/// that curve but is not globally monotone: at dt = period the estimate
/// degenerates to zero and the error drops back to w/sqrt(2).
struct DtStudyRow {
  double dt_hours = 0.0;
  double rms_error = 0.0;
  double closed_form = 0.0;
};
std::vector<DtStudyRow> dt_derivative_study(const std::vector<double>& dts_hours,
                                            double period_hours = 24.0);

}  // namespace fluxcast
