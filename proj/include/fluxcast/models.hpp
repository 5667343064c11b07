#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fluxcast/backbones.hpp"
#include "fluxcast/grid.hpp"

#include "json.hpp"

namespace fluxcast {

// ============================================================================
// Configuration
// ============================================================================

/// What the initial-velocity estimator sees. The grid field, its spatial
/// gradient, or a two-frame finite-difference rate, in the five combinations
/// studied by the ablation harness.
enum class VelocityPlan { u_only, grad_only, u_grad, u_grad_dt, dt_only };
inline constexpr VelocityPlan kAllVelocityPlans[] = {
    VelocityPlan::u_only, VelocityPlan::grad_only, VelocityPlan::u_grad,
    VelocityPlan::u_grad_dt, VelocityPlan::dt_only};

VelocityPlan velocity_plan_from_string(const std::string& s);
std::string to_string(VelocityPlan p);
int velocity_input_channels(VelocityPlan p, int k);
bool velocity_plan_needs_history(VelocityPlan p);

enum class BackboneKind { resnet2d, vit };
BackboneKind backbone_kind_from_string(const std::string& s);
std::string to_string(BackboneKind k);

enum class SourceArch { none, resnet2d, vit, dit, resnet3d };
inline constexpr SourceArch kAllSourceArchs[] = {SourceArch::none, SourceArch::resnet2d,
                                                 SourceArch::vit, SourceArch::dit,
                                                 SourceArch::resnet3d};
SourceArch source_arch_from_string(const std::string& s);
std::string to_string(SourceArch a);

struct VelocityConfig {
  VelocityPlan plan = VelocityPlan::u_grad;
  BackboneKind kind = BackboneKind::resnet2d;
  ResNetConfig resnet;
  ViTConfig vit;
};

struct AdvectionConfig {
  BackboneKind kind = BackboneKind::vit;
  ResNetConfig resnet;
  ViTConfig vit;
  // The additive linear branch is always present; the backbone branch can be
  // switched off to leave exactly the linear map.
  bool backbone_enabled = true;
};

struct SourceConfig {
  SourceArch arch = SourceArch::resnet3d;
  ResNetConfig resnet;  // shared by the 2-D and 3-D variants
  ViTConfig vit;
  DiTConfig dit;
};

struct BundleConfig {
  int channels = 2;
  GridSpec grid;
  VelocityConfig velocity;
  AdvectionConfig advection;
  SourceConfig source;
  uint64_t seed = 0;

  void validate() const;
  static BundleConfig desk_default(int channels, GridSpec grid, uint64_t seed);
};

void to_json(nlohmann::json& j, const GridSpec& g);
void from_json(const nlohmann::json& j, GridSpec& g);
void to_json(nlohmann::json& j, const BundleConfig& c);
void from_json(const nlohmann::json& j, BundleConfig& c);

// ============================================================================
// Bundle
// ============================================================================

/// The three learned components plus their parameters. Construction is fully
/// determined by the config (including its seed), so a checkpoint can rebuild
/// an identical bundle and overwrite the arrays.
class ModelBundle {
 public:
  explicit ModelBundle(BundleConfig cfg);

  const BundleConfig& config() const { return cfg_; }
  const GridSpec& grid() const { return cfg_.grid; }
  int channels() const { return cfg_.channels; }
  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }

  /// Initial velocity from the first frame. `dudt` must be a valid (K,H,W)
  /// Var when the plan includes the rate input and is ignored otherwise.
  /// Returns (2K,H,W).
  ad::Var velocity_forward(ad::Graph& g, ad::Var u0, ad::Var dudt = {}) const;

  /// Velocity tendency from the current state, the current velocity, and the
  /// position/time encoding at absolute time t_hours. Returns (2K,H,W).
  ad::Var advection_forward(ad::Graph& g, ad::Var u, ad::Var v, double t_hours) const;

  /// Per-step corrections from the rolled-out states. Empty result when the
  /// source is disabled. Evaluations are counted so integration can be audited
  /// as source-free.
  std::vector<ad::Var> source_forward(ad::Graph& g, const std::vector<ad::Var>& u_steps,
                                      ad::Var u0, ad::Var v0,
                                      const std::vector<double>& t_hours) const;

  bool has_source() const { return cfg_.source.arch != SourceArch::none; }
  long source_evals() const { return source_evals_; }

 private:
  BundleConfig cfg_;
  ad::ParamStore params_;
  std::unique_ptr<ResNet2D> vel_resnet_;
  std::unique_ptr<ViT> vel_vit_;
  std::unique_ptr<ResNet2D> adv_resnet_;
  std::unique_ptr<ViT> adv_vit_;
  ad::Param* adv_lin_w_ = nullptr;
  ad::Param* adv_lin_b_ = nullptr;
  std::unique_ptr<ResNet2D> src_resnet2d_;
  std::unique_ptr<ViT> src_vit_;
  std::unique_ptr<DiT> src_dit_;
  std::unique_ptr<ResNet3D> src_resnet3d_;
  mutable long source_evals_ = 0;
};

// ============================================================================
// Checkpoints
// ============================================================================

// Self-describing parameter container: full config, seed, named arrays, and
// any extra arrays/attributes the caller tacks on (optimizer state, step
// counters). Loading rebuilds the bundle and restores values bitwise.
void save_checkpoint(const ModelBundle& bundle, const std::string& path,
                     const std::map<std::string, Tensor>& extra = {},
                     const std::map<std::string, uint64_t>& extra_u64 = {});
std::unique_ptr<ModelBundle> load_checkpoint(const std::string& path,
                                             std::map<std::string, Tensor>* extra = nullptr,
                                             std::map<std::string, uint64_t>* extra_u64 = nullptr);

}  // namespace fluxcast
