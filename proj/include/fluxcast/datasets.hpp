#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fluxcast/grid.hpp"
#include "fluxcast/tensor.hpp"

#include "json.hpp"

namespace fluxcast {

// ============================================================================
// Variable catalog
// ============================================================================

enum class VarKind { constant, surface, atmospheric };
VarKind var_kind_from_string(const std::string& s);
std::string to_string(VarKind k);

/// One channel of the state: a named variable, possibly at a pressure level.
struct VariableSpec {
  std::string name;
  VarKind kind = VarKind::surface;
  int level_hpa = -1;  // atmospheric only

  std::string channel_name() const;  // "z_500" style; bare name otherwise
};

/// Ordered channel list. Channel index in every (K,H,W) array is the position
/// here.
struct VariableCatalog {
  std::vector<VariableSpec> vars;

  int channels() const { return static_cast<int>(vars.size()); }
  void add_constant(const std::string& name);
  void add_surface(const std::string& name);
  void add_atmospheric(const std::string& name, const std::vector<int>& levels_hpa);
  void validate() const;  // uniqueness of (name, level)

  /// K anonymous surface channels f0..f{K-1} for generated data.
  static VariableCatalog synthetic(int k);
};

void to_json(nlohmann::json& j, const VariableCatalog& c);
void from_json(const nlohmann::json& j, VariableCatalog& c);

// ============================================================================
// Normalization
// ============================================================================

/// Per-channel affine statistics. Channels marked constant pass through both
/// directions unchanged.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<uint8_t> constant;

  int channels() const { return static_cast<int>(mean.size()); }
  void validate() const;
};

void to_json(nlohmann::json& j, const NormStats& s);
void from_json(const nlohmann::json& j, NormStats& s);

struct TrajectorySample;

/// Two-pass moments over the t0 fields of the split. Channels whose catalog
/// kind is constant are flagged; a zero-variance channel of any other kind is
/// a data error.
NormStats fit_norm_stats(const std::vector<TrajectorySample>& split,
                         const VariableCatalog& catalog);

/// Channel-affine maps on (K,H,W) or (N,K,H,W) arrays.
Tensor normalize(const Tensor& u, const NormStats& stats);
Tensor denormalize(const Tensor& u, const NormStats& stats);

// ============================================================================
// Samples and datasets
// ============================================================================

/// One forecasting example: initial state, N hourly targets, and optional
/// extras (the previous frame for rate-based velocity plans, the generator's
/// true initial velocity for oracle evaluation).
struct TrajectorySample {
  Tensor u0;       // (K,H,W)
  Tensor targets;  // (N,K,H,W)
  double t0_hours = 0.0;
  Tensor u_prev;           // (K,H,W) or empty
  double dt_prev_hours = 1.0;
  Tensor v0_true;          // (2K,H,W) or empty

  int n_leads() const { return targets.empty() ? 0 : targets.dim(0); }
  bool has_history() const { return !u_prev.empty(); }
};

struct Dataset {
  GridSpec grid;
  VariableCatalog catalog;
  std::vector<TrajectorySample> samples;
  NormStats stats;      // fitted over this dataset's samples at generation
  nlohmann::json meta;  // provenance: generator config, seed, source closed form

  void validate() const;
};

/// Self-describing container: stacked arrays plus a metadata attribute.
/// Regenerating and re-saving the same content yields byte-identical files.
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

// ============================================================================
// Synthetic generation
// ============================================================================

enum class VelocityFamily { uniform, rotational };
VelocityFamily velocity_family_from_string(const std::string& s);
std::string to_string(VelocityFamily f);

enum class SourceFamily { none, smooth_periodic };
SourceFamily source_family_from_string(const std::string& s);
std::string to_string(SourceFamily f);

struct SynthConfig {
  int h = 16;
  int w = 32;
  int k = 2;
  int n_leads = 6;
  int samples = 100;
  uint64_t seed = 0;
  VelocityFamily velocity = VelocityFamily::uniform;
  SourceFamily source = SourceFamily::none;
  double max_speed = 0.8;  // cells per hour
  // Pin every channel's flow instead of drawing it (uniform family only).
  std::optional<double> fixed_vx;
  std::optional<double> fixed_vy;
  int bumps = 3;
  double kappa = 2.0;
  double source_amp = 0.3;
  double source_period_hours = 24.0;
  bool with_history = true;

  void validate() const;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

/// Fields whose exact evolution is known in closed form: superposed periodic
/// bumps carried by a divergence-free flow (uniform or shear), plus an
/// optional single-mode diurnal source integrated analytically along
/// characteristics. Targets are evaluations of that closed form, not numerics.
Dataset make_synthetic_dataset(const SynthConfig& cfg);

}  // namespace fluxcast
