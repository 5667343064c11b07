#include "fluxcast/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <sstream>

namespace fluxcast {

// ============================================================================
// Climatology
// ============================================================================

Tensor climatology(const Dataset& ds) {
  require_data(!ds.samples.empty(), "climatology: the split has no samples");
  const Tensor& t0 = ds.samples.front().targets;
  require_data(!t0.empty(), "climatology: the split has no target frames");
  Tensor mean({t0.dim(1), t0.dim(2), t0.dim(3)});
  long frames = 0;
  // sample-major, lead-minor accumulation; the reference loop in the tests
  // walks frames in the same order, so the two agree bitwise
  for (const auto& s : ds.samples) {
    require_data(s.targets.same_shape(t0), "climatology: ragged target shapes in the split");
    for (int n = 0; n < s.targets.dim(0); ++n) {
      const double* src = s.targets.data() + static_cast<long>(n) * mean.size();
      for (long i = 0; i < mean.size(); ++i) mean[i] += src[i];
      ++frames;
    }
  }
  mean *= 1.0 / static_cast<double>(frames);
  for (long i = 0; i < mean.size(); ++i)
    require_data(std::isfinite(mean[i]), "climatology: non-finite mean field");
  return mean;
}

// ============================================================================
// Metrics
// ============================================================================

namespace {

void check_field_pair(const Tensor& pred, const Tensor& target, const GridSpec& grid,
                      const char* what) {
  if (pred.rank() != 3 || target.rank() != 3)
    throw ShapeError(std::string(what) + ": expected rank-3 (K,H,W) fields");
  if (!pred.same_shape(target))
    throw ShapeError(std::string(what) + ": prediction " + pred.shape_str() +
                     " does not match target " + target.shape_str());
  if (pred.dim(1) != grid.h || pred.dim(2) != grid.w)
    throw ShapeError(std::string(what) + ": field " + pred.shape_str() +
                     " does not match the grid");
}

}  // namespace

std::vector<double> rmse(const Tensor& pred, const Tensor& target, const GridSpec& grid) {
  check_field_pair(pred, target, grid, "rmse");
  Tensor alpha = latitude_weights(grid);
  int k = pred.dim(0), h = pred.dim(1), w = pred.dim(2);
  std::vector<double> out(static_cast<size_t>(k));
  for (int b = 0; b < k; ++b) {
    double acc = 0.0;
    for (int c = 0; c < h; ++c)
      for (int d = 0; d < w; ++d) {
        double diff = pred.at(b, c, d) - target.at(b, c, d);
        acc += alpha[c] * diff * diff;
      }
    out[static_cast<size_t>(b)] = std::sqrt(acc / (static_cast<double>(h) * w));
  }
  return out;
}

std::vector<double> acc(const Tensor& pred, const Tensor& target, const Tensor& clim,
                        const GridSpec& grid, bool weighted_numerator) {
  check_field_pair(pred, target, grid, "acc");
  if (!clim.same_shape(pred))
    throw ShapeError("acc: climatology " + clim.shape_str() + " does not match the fields");
  Tensor alpha = latitude_weights(grid);
  int k = pred.dim(0), h = pred.dim(1), w = pred.dim(2);
  std::vector<double> out(static_cast<size_t>(k));
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
    require_data(dp != 0.0 && dt != 0.0,
                 "acc: channel " + std::to_string(b) +
                     " has zero anomaly variance, the correlation is undefined");
    out[static_cast<size_t>(b)] = num / std::sqrt(dp * dt);
  }
  return out;
}

// ============================================================================
// Forecasts
// ============================================================================

Tensor Forecast::lead(int n) const {
  require_config(n >= 1 && n <= leads(),
                 "forecast: lead " + std::to_string(n) + " is outside 1.." +
                     std::to_string(leads()));
  Tensor out({states.dim(1), states.dim(2), states.dim(3)});
  const double* src = states.data() + static_cast<long>(n - 1) * out.size();
  std::memcpy(out.data(), src, static_cast<size_t>(out.size()) * sizeof(double));
  return out;
}

Forecast model_forecast(const ModelBundle& bundle, const TrajectorySample& s,
                        const NormStats& stats, const SolverConfig& solver, int n_leads) {
  require_config(n_leads >= 1, "forecast: need at least one lead");
  require_data(stats.channels() == s.u0.dim(0), "forecast: stats do not match the sample");
  ad::Graph g(false, 0);
  Tensor u0n = normalize(s.u0, stats);
  ad::Var u0 = g.constant(u0n);
  ad::Var dudt{};
  if (velocity_plan_needs_history(bundle.config().velocity.plan)) {
    require_data(s.has_history(),
                 "forecast: the velocity plan needs the previous frame but the sample has none");
    dudt = g.constant(
        finite_difference_velocity_baseline(u0n, normalize(s.u_prev, stats), s.dt_prev_hours));
  }
  ad::Var v0 = bundle.velocity_forward(g, u0, dudt);
  Rollout r = integrate(g, bundle, u0, v0, s.t0_hours, n_leads, solver);
  std::vector<ad::Var> corrected = apply_source(g, bundle, r, u0, v0);

  Forecast fc;
  fc.states = Tensor({n_leads, s.u0.dim(0), s.u0.dim(1), s.u0.dim(2)});
  fc.t_hours = r.t_hours;
  fc.diverged = r.diverged;
  long stride = s.u0.size();
  for (int n = 0; n < n_leads; ++n) {
    Tensor step = denormalize(g.val(corrected[static_cast<size_t>(n)]), stats);
    std::memcpy(fc.states.data() + static_cast<long>(n) * stride, step.data(),
                static_cast<size_t>(stride) * sizeof(double));
  }
  return fc;
}

Forecast persistence_forecast(const TrajectorySample& s, int n_leads) {
  require_config(n_leads >= 1, "forecast: need at least one lead");
  Forecast fc;
  fc.states = Tensor({n_leads, s.u0.dim(0), s.u0.dim(1), s.u0.dim(2)});
  long stride = s.u0.size();
  for (int n = 0; n < n_leads; ++n) {
    std::memcpy(fc.states.data() + static_cast<long>(n) * stride, s.u0.data(),
                static_cast<size_t>(stride) * sizeof(double));
    fc.t_hours.push_back(s.t0_hours + n + 1);
  }
  return fc;
}

// ============================================================================
// Score reports
// ============================================================================

namespace {

int channel_index(const std::vector<std::string>& names, const std::string& name,
                  const char* what) {
  auto it = std::find(names.begin(), names.end(), name);
  require_config(it != names.end(),
                 std::string(what) + ": unknown channel '" + name + "'");
  return static_cast<int>(it - names.begin());
}

// Gather a channel subset of a (K,H,W) field into a compact (Ksel,H,W) block.
Tensor take_channels(const Tensor& field, const std::vector<int>& idx) {
  Tensor out({static_cast<int>(idx.size()), field.dim(1), field.dim(2)});
  long plane = static_cast<long>(field.dim(1)) * field.dim(2);
  for (size_t i = 0; i < idx.size(); ++i)
    std::memcpy(out.data() + static_cast<long>(i) * plane,
                field.data() + static_cast<long>(idx[i]) * plane,
                static_cast<size_t>(plane) * sizeof(double));
  return out;
}

Tensor target_frame(const TrajectorySample& s, int n) {
  Tensor out({s.targets.dim(1), s.targets.dim(2), s.targets.dim(3)});
  std::memcpy(out.data(), s.targets.data() + static_cast<long>(n) * out.size(),
              static_cast<size_t>(out.size()) * sizeof(double));
  return out;
}

}  // namespace

double ScoreReport::rmse_at(const std::string& channel, int lead) const {
  require_config(lead >= 1 && lead <= n_leads, "report: lead out of range");
  return rmse[static_cast<size_t>(lead - 1)]
             [static_cast<size_t>(channel_index(channels, channel, "report"))];
}

double ScoreReport::acc_at(const std::string& channel, int lead) const {
  require_config(lead >= 1 && lead <= n_leads, "report: lead out of range");
  return acc[static_cast<size_t>(lead - 1)]
            [static_cast<size_t>(channel_index(channels, channel, "report"))];
}

void ScoreReport::validate() const {
  require_data(!channels.empty(), "report: no channels");
  require_data(n_leads >= 1, "report: no leads");
  require_data(rmse.size() == static_cast<size_t>(n_leads) &&
                   acc.size() == static_cast<size_t>(n_leads),
               "report: lead rows do not match n_leads");
  for (int l = 0; l < n_leads; ++l) {
    const auto& r = rmse[static_cast<size_t>(l)];
    const auto& a = acc[static_cast<size_t>(l)];
    require_data(r.size() == channels.size() && a.size() == channels.size(),
                 "report: row width does not match the channel list");
    for (size_t c = 0; c < channels.size(); ++c) {
      require_data(std::isfinite(r[c]) && r[c] >= 0.0,
                   "report: rmse of " + channels[c] + " at lead " + std::to_string(l + 1) +
                       " is not a nonnegative finite value");
      // Cauchy-Schwarz bounds the weighted form by 1; leave an ulp-scale slack
      require_data(std::isfinite(a[c]) && std::abs(a[c]) <= 1.0 + 1e-9,
                   "report: acc of " + channels[c] + " at lead " + std::to_string(l + 1) +
                       " is outside [-1, 1]");
    }
  }
}

std::string ScoreReport::csv() const {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "channel,lead,rmse,acc\n";
  for (size_t c = 0; c < channels.size(); ++c)
    for (int l = 0; l < n_leads; ++l)
      out << channels[c] << "," << (l + 1) << "," << rmse[static_cast<size_t>(l)][c] << ","
          << acc[static_cast<size_t>(l)][c] << "\n";
  return out.str();
}

void to_json(nlohmann::json& j, const ScoreReport& r) {
  j = nlohmann::json{{"channels", r.channels},
                     {"n_leads", r.n_leads},
                     {"rmse", r.rmse},
                     {"acc", r.acc},
                     {"meta", r.meta}};
}

void from_json(const nlohmann::json& j, ScoreReport& r) {
  j.at("channels").get_to(r.channels);
  j.at("n_leads").get_to(r.n_leads);
  j.at("rmse").get_to(r.rmse);
  j.at("acc").get_to(r.acc);
  r.meta = j.value("meta", nlohmann::json::object());
}

void to_json(nlohmann::json& j, const EvalOptions& o) {
  j = nlohmann::json{{"weighted_numerator", o.weighted_numerator}, {"channels", o.channels}};
}

void from_json(const nlohmann::json& j, EvalOptions& o) {
  o.weighted_numerator = j.value("weighted_numerator", true);
  o.channels = j.value("channels", std::vector<std::string>{});
}

ScoreReport score_forecasts(const Dataset& ds, const ForecastFn& fn, const EvalOptions& opts,
                            const RegionSelection* region) {
  require_data(!ds.samples.empty(), "evaluation: the split has no samples");
  int n_leads = ds.samples.front().n_leads();
  require_data(n_leads >= 1, "evaluation: the split has no target frames");

  std::vector<std::string> all_names;
  for (const auto& v : ds.catalog.vars) all_names.push_back(v.channel_name());

  ScoreReport rep;
  std::vector<int> idx;
  if (opts.channels.empty()) {
    std::vector<std::string> skipped;
    for (int c = 0; c < ds.catalog.channels(); ++c) {
      if (ds.catalog.vars[static_cast<size_t>(c)].kind == VarKind::constant)
        skipped.push_back(all_names[static_cast<size_t>(c)]);
      else
        idx.push_back(c);
    }
    if (!skipped.empty()) rep.meta["skipped_constant"] = skipped;
  } else {
    for (const auto& name : opts.channels)
      idx.push_back(channel_index(all_names, name, "evaluation"));
  }
  require_config(!idx.empty(), "evaluation: no channels left to score");
  for (int c : idx) rep.channels.push_back(all_names[static_cast<size_t>(c)]);
  rep.n_leads = n_leads;
  rep.rmse.assign(static_cast<size_t>(n_leads), std::vector<double>(idx.size(), 0.0));
  rep.acc.assign(static_cast<size_t>(n_leads), std::vector<double>(idx.size(), 0.0));

  const GridSpec& grid = region ? region->grid : ds.grid;
  Tensor clim = take_channels(climatology(ds), idx);
  if (region) clim = extract_region(clim, *region);

  int sample_no = 0;
  for (const auto& s : ds.samples) {
    require_data(s.n_leads() == n_leads, "evaluation: ragged lead counts in the split");
    Forecast fc = fn(s);
    if (fc.diverged)
      throw InstabilityError("evaluation: forecast diverged on sample " +
                             std::to_string(sample_no));
    require_data(fc.leads() == n_leads,
                 "evaluation: forecast covers " + std::to_string(fc.leads()) +
                     " leads, the dataset has " + std::to_string(n_leads));
    for (int n = 1; n <= n_leads; ++n) {
      Tensor pred = take_channels(fc.lead(n), idx);
      Tensor truth = take_channels(target_frame(s, n - 1), idx);
      if (region) {
        pred = extract_region(pred, *region);
        truth = extract_region(truth, *region);
      }
      std::vector<double> r = rmse(pred, truth, grid);
      std::vector<double> a = acc(pred, truth, clim, grid, opts.weighted_numerator);
      for (size_t c = 0; c < idx.size(); ++c) {
        rep.rmse[static_cast<size_t>(n - 1)][c] += r[c];
        rep.acc[static_cast<size_t>(n - 1)][c] += a[c];
      }
    }
    ++sample_no;
  }
  double inv = 1.0 / static_cast<double>(ds.samples.size());
  for (auto& row : rep.rmse)
    for (double& x : row) x *= inv;
  for (auto& row : rep.acc)
    for (double& x : row) x *= inv;

  rep.meta["samples"] = ds.samples.size();
  rep.meta["weighted_numerator"] = opts.weighted_numerator;
  if (region)
    rep.meta["region"] = nlohmann::json{{"h", region->grid.h}, {"w", region->grid.w}};
  rep.validate();
  return rep;
}

ScoreReport evaluate_model(const ModelBundle& bundle, const Dataset& ds, const NormStats& stats,
                           const SolverConfig& solver, const EvalOptions& opts,
                           const RegionSelection* region) {
  require_data(!ds.samples.empty(), "evaluation: the split has no samples");
  int n_leads = ds.samples.front().n_leads();
  ScoreReport rep = score_forecasts(
      ds,
      [&](const TrajectorySample& s) { return model_forecast(bundle, s, stats, solver, n_leads); },
      opts, region);
  rep.meta["forecaster"] = "model";
  return rep;
}

ScoreReport evaluate_persistence(const Dataset& ds, const EvalOptions& opts,
                                 const RegionSelection* region) {
  require_data(!ds.samples.empty(), "evaluation: the split has no samples");
  int n_leads = ds.samples.front().n_leads();
  ScoreReport rep = score_forecasts(
      ds, [&](const TrajectorySample& s) { return persistence_forecast(s, n_leads); }, opts,
      region);
  rep.meta["forecaster"] = "persistence";
  return rep;
}

}  // namespace fluxcast
