#include "fluxcast/dynamics.hpp"

#include <cmath>

#include "fluxcast/embeddings.hpp"
#include "harness.hpp"
#include "oracles.hpp"

using namespace fluxcast;
using harness::record;

namespace {

// Doubly periodic square box with unit cell spacing; latitude values are
// irrelevant to the stencils and only enter the loss weights.
GridSpec box(int h, int w, double dx = 1.0) {
  GridSpec grid = GridSpec::uniform_global(h, w);
  grid.dx = dx;
  grid.dy = dx;
  grid.lat_policy = EdgePolicy::periodic;
  return grid;
}

// Bundle whose advection correction is exactly zero: linear branch only, both
// parameters cleared. The velocity/source parts stay at their seeded init.
BundleConfig frozen_flow_config(int k, GridSpec grid) {
  BundleConfig cfg = BundleConfig::desk_default(k, std::move(grid), 3);
  cfg.velocity.resnet.ladder = {{1, 4}};
  cfg.velocity.resnet.dropout = 0.0;
  cfg.advection.backbone_enabled = false;
  cfg.source.arch = SourceArch::none;
  return cfg;
}

std::unique_ptr<ModelBundle> frozen_flow_bundle(int k, GridSpec grid) {
  auto m = std::make_unique<ModelBundle>(frozen_flow_config(k, std::move(grid)));
  m->params().find("advection.linear.w")->value.zero();
  m->params().find("advection.linear.b")->value.zero();
  return m;
}

Tensor bump_field(const GridSpec& g, double x0, double y0, double kappa) {
  Tensor u({1, g.h, g.w});
  for (int i = 0; i < g.h; ++i)
    for (int j = 0; j < g.w; ++j)
      u.at(0, i, j) =
          oracle::von_mises(j, x0, kappa, g.w) * oracle::von_mises(i, y0, kappa, g.h);
  return u;
}

Tensor uniform_velocity(const GridSpec& g, double vx, double vy) {
  Tensor v({2, g.h, g.w});
  for (int i = 0; i < g.h; ++i)
    for (int j = 0; j < g.w; ++j) {
      v.at(0, i, j) = vx;
      v.at(1, i, j) = vy;
    }
  return v;
}

void test_tendency_baselines() {
  GridSpec grid = box(8, 8);
  auto m = frozen_flow_bundle(1, grid);
  ad::Graph g(false, 0);

  ad::Var u = g.constant(bump_field(grid, 4, 4, 2.0));
  ad::Var vz = g.constant(Tensor({2, 8, 8}));
  auto [du0, dv0] = state_tendency(g, *m, u, vz, 0.0);
  double worst = std::max(g.val(du0).max_abs(), g.val(dv0).max_abs());
  record("zero velocity and zero correction give zero tendency", worst == 0.0, qoi(worst));

  // Uniform flow: flux form reduces to -v . grad u exactly, discretely.
  ad::Var vu = g.constant(uniform_velocity(grid, 0.7, -0.4));
  auto [du, dv] = state_tendency(g, *m, u, vu, 0.0);
  (void)dv;
  Tensor gx = ddx(g.val(u), grid), gy = ddy(g.val(u), grid);
  double err = 0.0;
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j)
      err = std::max(err,
                     std::abs(g.val(du).at(0, i, j) - (-0.7 * gx.at(0, i, j) + 0.4 * gy.at(0, i, j))));
  record("uniform flow tendency equals advective form", err < 1e-13, qoi(err, 1e-13));
}

void test_flux_vs_expanded_form() {
  // Smooth trig fields where -div(u v) is known in closed form; both the flux
  // form and the expanded product-rule form must sit within the second-order
  // truncation budget of it, and within it of each other.
  const int n = 32;
  const double dx = 2.0 * M_PI / n;
  GridSpec grid = box(n, n, dx);
  Tensor u({1, n, n}), v({2, n, n}), truth({1, n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double y = i * dx, x = j * dx;
      u.at(0, i, j) = std::sin(x) * std::cos(y);
      v.at(0, i, j) = std::cos(x) * std::sin(y);
      v.at(1, i, j) = std::sin(2 * x);
      // u*vx = (1/4) sin 2x sin 2y; u*vy = sin x cos y sin 2x
      truth.at(0, i, j) =
          -(0.5 * std::cos(2 * x) * std::sin(2 * y) - std::sin(x) * std::sin(y) * std::sin(2 * x));
    }
  Tensor flux = advection_tendency(u, v, grid);
  Tensor gx = ddx(u, grid), gy = ddy(u, grid);
  Tensor div_v = divergence(v, grid);
  double flux_err = 0.0, exp_err = 0.0, mutual = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double expanded = -(v.at(0, i, j) * gx.at(0, i, j) + v.at(1, i, j) * gy.at(0, i, j) +
                          u.at(0, i, j) * div_v.at(0, i, j));
      flux_err = std::max(flux_err, std::abs(flux.at(0, i, j) - truth.at(0, i, j)));
      exp_err = std::max(exp_err, std::abs(expanded - truth.at(0, i, j)));
      mutual = std::max(mutual, std::abs(flux.at(0, i, j) - expanded));
    }
  // Truncation scale: wavenumbers up to 2, amplitudes O(1) -> k^3 dx^2 / 6
  // with headroom.
  const double budget = 8.0 * dx * dx;
  record("flux form within truncation of the analytic divergence", flux_err < budget,
         qoi(flux_err, budget));
  record("expanded form within truncation of the analytic divergence", exp_err < budget,
         qoi(exp_err, budget));
  record("flux and expanded forms agree to second order", mutual < budget, qoi(mutual, budget));
}

void test_degenerate_substeps() {
  GridSpec grid = box(8, 8);
  auto m = frozen_flow_bundle(1, grid);
  ad::Graph g(false, 0);
  Tensor u0 = bump_field(grid, 3, 5, 2.0);
  SolverConfig s;
  s.substeps = 0;
  Rollout r = integrate(g, *m, g.constant(u0), g.constant(uniform_velocity(grid, 1, 0)), 5.0, 3, s);
  bool ok = r.u.size() == 3 && r.t_hours == std::vector<double>({6.0, 7.0, 8.0});
  for (auto& uv : r.u)
    for (long i = 0; i < u0.size(); ++i) ok = ok && g.val(uv)[i] == u0[i];
  record("zero substeps degenerate to copies of the initial state", ok);
}

void test_translation() {
  // Pure advection at one cell per hour moves the bump by exactly N cells.
  const int n = 32;
  GridSpec grid = box(n, n);
  auto m = frozen_flow_bundle(1, grid);
  ad::Graph g(false, 0);
  Tensor u0 = bump_field(grid, 16, 16, 2.0);
  SolverConfig s;
  s.substeps = 16;
  const int steps = 4;
  Rollout r =
      integrate(g, *m, g.constant(u0), g.constant(uniform_velocity(grid, 1, 0)), 0.0, steps, s);
  double err = 0.0;
  const Tensor& uN = g.val(r.u.back());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      err = std::max(err, std::abs(uN.at(0, i, j) - u0.at(0, i, (j - steps + n) % n)));
  // Budget: first-order time error at h = 1/16 dominates (measured ~2.5e-2
  // for this bump); spatial dispersion adds little at kappa = 2 on 32 cells.
  record("uniform advection translates the bump", err < 0.03, qoi(err, 0.03));
}

void test_convergence_orders() {
  // Frozen velocity makes the semi-discrete system linear and autonomous, so
  // time-integration error is cleanly measurable against a fine rk4 reference
  // on the same grid.
  const int n = 16;
  GridSpec grid = box(n, n);
  auto m = frozen_flow_bundle(1, grid);
  ad::Graph g(false, 0);
  Tensor u0 = bump_field(grid, 8, 8, 2.0);
  Tensor v0 = uniform_velocity(grid, 1.0, 0.5);
  const int steps = 2;

  auto final_u = [&](Scheme scheme, int substeps) {
    SolverConfig s;
    s.scheme = scheme;
    s.substeps = substeps;
    Rollout r = integrate(g, *m, g.constant(u0), g.constant(v0), 0.0, steps, s);
    return g.val(r.u.back());
  };
  Tensor ref = final_u(Scheme::rk4, 64);
  auto err_vs_ref = [&](Scheme scheme, int substeps) {
    Tensor d = final_u(scheme, substeps);
    d -= ref;
    return d.max_abs();
  };

  double e1 = err_vs_ref(Scheme::euler, 1);
  double e2 = err_vs_ref(Scheme::euler, 2);
  double e4 = err_vs_ref(Scheme::euler, 4);
  double r12 = e1 / e2, r24 = e2 / e4;
  record("euler halving ratio (1 to 2 substeps) is first order", r12 > 1.7 && r12 < 2.3,
         qoi(r12) + " err " + qoi(e1));
  record("euler halving ratio (2 to 4 substeps) is first order", r24 > 1.7 && r24 < 2.3,
         qoi(r24) + " err " + qoi(e2));

  double k1 = err_vs_ref(Scheme::rk4, 1);
  double k2 = err_vs_ref(Scheme::rk4, 2);
  record("rk4 halving contracts at least second order", k1 / k2 > 3.5,
         qoi(k1 / k2) + " err " + qoi(k1));
}

void test_conservation() {
  // Flux-form transport conserves the cell sum on a fully periodic grid for
  // any velocity path; matches the zero-correction criterion setup.
  GridSpec grid = box(16, 32);
  auto m = frozen_flow_bundle(2, grid);
  ad::Graph g(false, 0);
  Rng rng(11);
  Tensor u0({2, 16, 32});
  for (long i = 0; i < u0.size(); ++i) u0[i] = 1.0 + 0.5 * rng.next_uniform();
  Tensor v0({4, 16, 32});
  for (long i = 0; i < v0.size(); ++i) v0[i] = rng.next_uniform(-0.4, 0.4);
  SolverConfig s;
  Rollout r = integrate(g, *m, g.constant(u0), g.constant(v0), 0.0, 24, s);
  double worst = 0.0;
  for (int k = 0; k < 2; ++k) {
    double s0 = 0.0;
    for (int i = 0; i < 16; ++i)
      for (int j = 0; j < 32; ++j) s0 += u0.at(k, i, j);
    for (auto& uv : r.u) {
      double sn = 0.0;
      for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 32; ++j) sn += g.val(uv).at(k, i, j);
      worst = std::max(worst, std::abs(sn - s0) / std::abs(s0));
    }
  }
  record("periodic transport conserves the cell sum", worst < 1e-12, qoi(worst, 1e-12));
}

void test_nan_policies() {
  GridSpec grid = box(8, 8);
  auto cfg = frozen_flow_config(1, grid);
  auto make_hot = [&]() {
    auto m = std::make_unique<ModelBundle>(cfg);
    m->params().find("advection.linear.w")->value.fill(1e154);
    return m;
  };
  {
    auto m = make_hot();
    ad::Graph g(false, 0);
    bool threw = false;
    std::string msg;
    try {
      SolverConfig s;
      integrate(g, *m, g.constant(bump_field(grid, 4, 4, 2.0)),
                g.constant(uniform_velocity(grid, 0.1, 0)), 0.0, 6, s);
    } catch (const InstabilityError& e) {
      threw = true;
      msg = e.what();
    }
    record("abort policy raises an instability error naming the step",
           threw && msg.find("output step") != std::string::npos, msg);
  }
  {
    auto m = make_hot();
    ad::Graph g(false, 0);
    SolverConfig s;
    s.nan_policy = NanPolicy::report;
    Rollout r = integrate(g, *m, g.constant(bump_field(grid, 4, 4, 2.0)),
                          g.constant(uniform_velocity(grid, 0.1, 0)), 0.0, 6, s);
    bool finite = true;
    for (auto& uv : r.u) finite = finite && g.val(uv).first_nonfinite() < 0;
    for (auto& vv : r.v) finite = finite && g.val(vv).first_nonfinite() < 0;
    record("report policy flags divergence and keeps finite states",
           r.diverged && r.first_bad_step >= 1 && finite,
           "step " + std::to_string(r.first_bad_step));
    bool padded = true;
    for (size_t i = r.first_bad_step; i < r.u.size(); ++i)
      padded = padded && r.u[i].id == r.u[r.first_bad_step - 1].id;
    record("report policy pads the tail with the last finite state", padded);
  }
}

void test_source_isolation_and_apply() {
  GridSpec grid = box(4, 8);
  BundleConfig cfg = frozen_flow_config(1, grid);
  cfg.source.arch = SourceArch::resnet3d;
  cfg.source.resnet.ladder = {{1, 4}};
  cfg.source.resnet.dropout = 0.0;
  ModelBundle m(cfg);
  ad::Graph g(false, 0);
  ad::Var u0 = g.constant(bump_field(grid, 2, 4, 2.0));
  ad::Var v0 = g.constant(uniform_velocity(grid, 0.3, 0.1));
  SolverConfig s;
  Rollout r = integrate(g, m, u0, v0, 0.0, 3, s);
  record("integration never runs the source", m.source_evals() == 0);
  auto corrected = apply_source(g, m, r, u0, v0);
  record("post-rollout correction runs the source once",
         m.source_evals() == 1 && corrected.size() == 3);
  double moved = 0.0;
  for (size_t n = 0; n < corrected.size(); ++n) {
    Tensor d = g.val(corrected[n]);
    d -= g.val(r.u[n]);
    moved = std::max(moved, d.max_abs());
  }
  record("correction actually shifts the fields", moved > 0.0, qoi(moved));

  BundleConfig cfg2 = frozen_flow_config(1, grid);
  ModelBundle m2(cfg2);
  Rollout r2 = integrate(g, m2, u0, v0, 0.0, 2, s);
  auto same = apply_source(g, m2, r2, u0, v0);
  record("disabled source is the identity on the trajectory",
         same.size() == 2 && same[0].id == r2.u[0].id && same[1].id == r2.u[1].id);
}

void test_gradients_through_rollout() {
  GridSpec grid = box(4, 8);
  BundleConfig cfg = BundleConfig::desk_default(1, grid, 21);
  cfg.velocity.plan = VelocityPlan::u_grad;
  cfg.velocity.resnet.ladder = {{1, 4}};
  cfg.velocity.resnet.dropout = 0.0;
  cfg.advection.kind = BackboneKind::resnet2d;
  cfg.advection.resnet.ladder = {{1, 4}};
  cfg.advection.resnet.dropout = 0.0;
  cfg.source.arch = SourceArch::resnet3d;
  cfg.source.resnet.ladder = {{1, 4}};
  cfg.source.resnet.dropout = 0.0;
  ModelBundle m(cfg);
  // Tame the seeded init so two unrolled hours stay well-scaled.
  for (auto& p : m.params().all()) p->value *= 0.3;

  Tensor u0 = bump_field(grid, 2, 4, 2.0);
  std::vector<Tensor> coeffs;
  for (int n = 0; n < 2; ++n) {
    Tensor c({1, 4, 8});
    Rng rng(40 + n);
    for (long i = 0; i < c.size(); ++i) c[i] = rng.next_uniform(-1.0, 1.0);
    coeffs.push_back(c);
  }
  auto eval = [&](bool backward) {
    ad::Graph g(false, 0);
    ad::Var u0v = g.constant(u0);
    ad::Var v0 = m.velocity_forward(g, u0v);
    SolverConfig s;
    s.substeps = 2;
    Rollout r = integrate(g, m, u0v, v0, 0.0, 2, s);
    auto corrected = apply_source(g, m, r, u0v, v0);
    std::vector<ad::Var> parts;
    for (size_t n = 0; n < corrected.size(); ++n)
      parts.push_back(ad::mean_all(g, ad::mul(g, corrected[n], g.constant(coeffs[n]))));
    ad::Var loss = ad::add_all(g, parts);
    if (backward) g.backward(loss);
    return g.val(loss)[0];
  };
  m.params().zero_grads();
  eval(true);
  auto r = oracle::fd_gradcheck(m.params(), [&] { return eval(false); }, 2, 1e-6, 51);
  record("unrolled pipeline gradients match finite differences", r.max_rel < 1e-4,
         qoi(r.max_rel, 1e-4) + " over " + std::to_string(r.checked));
}

void test_rate_baseline() {
  Tensor a = Tensor::full({1, 2, 2}, 3.5);
  Tensor z = finite_difference_velocity_baseline(a, a, 2.0);
  record("constant signal has zero rate", z.max_abs() == 0.0);

  bool threw = false;
  try {
    finite_difference_velocity_baseline(a, a, 0.0);
  } catch (const ConfigError&) {
    threw = true;
  }
  record("non-positive spacing is rejected", threw);

  threw = false;
  try {
    finite_difference_velocity_baseline(a, Tensor({1, 2, 3}), 1.0);
  } catch (const Error&) {
    threw = true;
  }
  record("mismatched shapes are rejected", threw);
}

void test_dt_study() {
  auto rows = dt_derivative_study({1, 2, 3, 6, 12, 24});
  double worst = 0.0;
  for (auto& r : rows) worst = std::max(worst, std::abs(r.rms_error - r.closed_form));
  record("hourly-lattice rms matches the closed form", worst < 1e-10, qoi(worst, 1e-10));
  bool monotone = true;
  for (size_t i = 1; i + 1 < rows.size(); ++i)
    monotone = monotone && rows[i].rms_error > rows[i - 1].rms_error;
  record("error grows strictly over spacings 1,2,3,6,12 hours", monotone);
  record("twelve-hour spacing is worse than one hour", rows[4].rms_error > rows[0].rms_error,
         qoi(rows[4].rms_error) + " vs " + qoi(rows[0].rms_error));
  // The degradation is not global: at a full period the estimate collapses to
  // zero and the error falls back below the half-period value.
  record("full-period spacing breaks the monotone trend",
         rows[5].rms_error < rows[4].rms_error,
         qoi(rows[5].rms_error) + " vs " + qoi(rows[4].rms_error));
}

}  // namespace

int main() {
  return harness::run("dynamics", [] {
    test_tendency_baselines();
    test_flux_vs_expanded_form();
    test_degenerate_substeps();
    test_translation();
    test_convergence_orders();
    test_conservation();
    test_nan_policies();
    test_source_isolation_and_apply();
    test_gradients_through_rollout();
    test_rate_baseline();
    test_dt_study();
  });
}
