#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fluxcast/training.hpp"

namespace fluxcast {

// ============================================================================
// Climatology
// ============================================================================

/// Per-channel, per-cell temporal mean over every target frame of the split
/// (all samples, all leads). Anomalies are measured against this; it must
/// come from the scored split's ground truth, never from model output.
/// Returns (K,H,W).
Tensor climatology(const Dataset& ds);

// ============================================================================
// Metrics
// ============================================================================

/// Latitude-weighted root mean square per channel of one (K,H,W) field pair:
/// sqrt((1/(H*W)) * sum_{h,w} alpha(h) * (pred - target)^2) with alpha the
/// unit-mean cos-latitude row weights of the grid.
std::vector<double> rmse(const Tensor& pred, const Tensor& target, const GridSpec& grid);

/// Latitude-weighted anomaly correlation per channel. Anomalies are taken
/// against clim. alpha always weights the denominator sums and also the
/// numerator when weighted_numerator is set; that is the default and the only
/// form that scores a perfect forecast at exactly 1, so the unweighted
/// numerator exists purely as a comparison variant. A channel whose anomalies
/// vanish on either side has no defined correlation and raises a data error.
std::vector<double> acc(const Tensor& pred, const Tensor& target, const Tensor& clim,
                        const GridSpec& grid, bool weighted_numerator = true);

// ============================================================================
// Forecasts
// ============================================================================

/// Denormalized trajectory of one initial condition: states at +1..+N hours.
/// All leads come from the single underlying rollout, so any horizon n <= N
/// is a lookup here, never a new integration.
struct Forecast {
  Tensor states;                // (N,K,H,W), physical units
  std::vector<double> t_hours;  // absolute time of each lead
  bool diverged = false;

  int leads() const { return states.empty() ? 0 : states.dim(0); }
  /// 1-based lead lookup; n outside 1..leads() is a config error.
  Tensor lead(int n) const;
};

/// Run the bundle on one sample for n_leads hourly steps: velocity estimate,
/// transport rollout, source correction, then denormalization with the
/// training statistics. No dropout, no gradients.
Forecast model_forecast(const ModelBundle& bundle, const TrajectorySample& s,
                        const NormStats& stats, const SolverConfig& solver, int n_leads);

/// Identity baseline: every lead repeats the initial state.
Forecast persistence_forecast(const TrajectorySample& s, int n_leads);

// ============================================================================
// Score reports
// ============================================================================

struct EvalOptions {
  bool weighted_numerator = true;
  /// Channels to report. Empty means every non-constant channel; constants
  /// have no anomalies to correlate, so they are only scored when asked for
  /// explicitly (and the correlation then fails as undefined).
  std::vector<std::string> channels;
};

void to_json(nlohmann::json& j, const EvalOptions& o);
void from_json(const nlohmann::json& j, EvalOptions& o);

/// Per-variable, per-lead scores plus run metadata. Rows follow the reported
/// channel list, columns the leads 1..n_leads; rmse[l][c] and acc[l][c] are
/// the mean over samples of the single-field metrics at lead l+1.
struct ScoreReport {
  std::vector<std::string> channels;
  int n_leads = 0;
  std::vector<std::vector<double>> rmse;  // [lead][channel]
  std::vector<std::vector<double>> acc;   // [lead][channel]
  nlohmann::json meta;

  double rmse_at(const std::string& channel, int lead) const;
  double acc_at(const std::string& channel, int lead) const;

  /// Shape consistency, RMSE >= 0, ACC inside [-1, 1] up to rounding.
  void validate() const;

  /// "channel,lead,rmse,acc" rows, channel-major, full double precision.
  std::string csv() const;
};

void to_json(nlohmann::json& j, const ScoreReport& r);
void from_json(const nlohmann::json& j, ScoreReport& r);

/// Produces the forecast scored against one sample's targets.
using ForecastFn = std::function<Forecast(const TrajectorySample&)>;

/// Score a split: one forecast per sample, single-field metrics per (channel,
/// lead), means over samples. Climatology comes from the split's own targets.
/// With a region, predictions, truth and climatology are cut to the region
/// block and weighted by its grid. A diverged forecast aborts scoring with an
/// instability error; meta records sample count and options.
ScoreReport score_forecasts(const Dataset& ds, const ForecastFn& fn, const EvalOptions& opts = {},
                            const RegionSelection* region = nullptr);

/// The two standard scorers: the trained bundle and the identity baseline.
ScoreReport evaluate_model(const ModelBundle& bundle, const Dataset& ds, const NormStats& stats,
                           const SolverConfig& solver, const EvalOptions& opts = {},
                           const RegionSelection* region = nullptr);
ScoreReport evaluate_persistence(const Dataset& ds, const EvalOptions& opts = {},
                                 const RegionSelection* region = nullptr);

}  // namespace fluxcast
