#include "fluxcast/models.hpp"

#include <utility>

#include "fluxcast/conv.hpp"
#include "fluxcast/embeddings.hpp"
#include "fluxcast/h5io.hpp"

namespace fluxcast {

// ============================================================================
// Enum names
// ============================================================================

VelocityPlan velocity_plan_from_string(const std::string& s) {
  if (s == "u_only") return VelocityPlan::u_only;
  if (s == "grad_only") return VelocityPlan::grad_only;
  if (s == "u_grad") return VelocityPlan::u_grad;
  if (s == "u_grad_dt") return VelocityPlan::u_grad_dt;
  if (s == "dt_only") return VelocityPlan::dt_only;
  throw ConfigError("unknown velocity plan '" + s +
                    "' (expected u_only, grad_only, u_grad, u_grad_dt, dt_only)");
}

std::string to_string(VelocityPlan p) {
  switch (p) {
    case VelocityPlan::u_only: return "u_only";
    case VelocityPlan::grad_only: return "grad_only";
    case VelocityPlan::u_grad: return "u_grad";
    case VelocityPlan::u_grad_dt: return "u_grad_dt";
    case VelocityPlan::dt_only: return "dt_only";
  }
  throw ConfigError("bad velocity plan value");
}

int velocity_input_channels(VelocityPlan p, int k) {
  switch (p) {
    case VelocityPlan::u_only: return k;
    case VelocityPlan::grad_only: return 2 * k;
    case VelocityPlan::u_grad: return 3 * k;
    case VelocityPlan::u_grad_dt: return 4 * k;
    case VelocityPlan::dt_only: return k;
  }
  throw ConfigError("bad velocity plan value");
}

bool velocity_plan_needs_history(VelocityPlan p) {
  return p == VelocityPlan::u_grad_dt || p == VelocityPlan::dt_only;
}

BackboneKind backbone_kind_from_string(const std::string& s) {
  if (s == "resnet2d") return BackboneKind::resnet2d;
  if (s == "vit") return BackboneKind::vit;
  throw ConfigError("unknown backbone '" + s + "' (expected resnet2d or vit)");
}

std::string to_string(BackboneKind k) {
  return k == BackboneKind::resnet2d ? "resnet2d" : "vit";
}

SourceArch source_arch_from_string(const std::string& s) {
  if (s == "none") return SourceArch::none;
  if (s == "resnet2d") return SourceArch::resnet2d;
  if (s == "vit") return SourceArch::vit;
  if (s == "dit") return SourceArch::dit;
  if (s == "resnet3d") return SourceArch::resnet3d;
  throw ConfigError("unknown source architecture '" + s +
                    "' (expected none, resnet2d, vit, dit, resnet3d)");
}

std::string to_string(SourceArch a) {
  switch (a) {
    case SourceArch::none: return "none";
    case SourceArch::resnet2d: return "resnet2d";
    case SourceArch::vit: return "vit";
    case SourceArch::dit: return "dit";
    case SourceArch::resnet3d: return "resnet3d";
  }
  throw ConfigError("bad source architecture value");
}

// ============================================================================
// Config validation and JSON
// ============================================================================

namespace {

void check_resnet(const ResNetConfig& c, const std::string& who) {
  require_config(!c.ladder.empty(), who + ": ladder must have at least one stage");
  for (auto& [blocks, width] : c.ladder)
    require_config(blocks >= 1 && width >= 1, who + ": ladder entries must be positive");
  require_config(c.kernel >= 1 && c.kernel % 2 == 1, who + ": kernel must be odd and positive");
  require_config(c.dropout >= 0.0 && c.dropout < 1.0, who + ": dropout must be in [0,1)");
  require_config(c.leaky_slope >= 0.0, who + ": leaky slope must be non-negative");
}

void check_vit(const ViTConfig& c, int h, int w, const std::string& who) {
  require_config(c.patch >= 1, who + ": patch must be positive");
  require_config(h % c.patch == 0 && w % c.patch == 0,
          who + ": patch size must divide the grid (" + std::to_string(h) + "x" +
              std::to_string(w) + " vs patch " + std::to_string(c.patch) + ")");
  require_config(c.dim >= 1 && c.depth >= 1 && c.heads >= 1, who + ": dim, depth, heads must be positive");
  require_config(c.dim % c.heads == 0, who + ": head count must divide dim");
  require_config(c.mlp_ratio > 0.0, who + ": mlp ratio must be positive");
  require_config(c.decoder_depth >= 0, who + ": decoder depth must be non-negative");
  require_config(c.dropout >= 0.0 && c.dropout < 1.0, who + ": dropout must be in [0,1)");
  require_config(c.drop_path >= 0.0 && c.drop_path < 1.0, who + ": drop path must be in [0,1)");
}

}  // namespace

void BundleConfig::validate() const {
  require_config(channels >= 1, "bundle: channels must be positive");
  grid.validate();
  if (velocity.kind == BackboneKind::resnet2d)
    check_resnet(velocity.resnet, "velocity resnet");
  else
    check_vit(velocity.vit, grid.h, grid.w, "velocity vit");
  if (advection.backbone_enabled) {
    if (advection.kind == BackboneKind::resnet2d)
      check_resnet(advection.resnet, "advection resnet");
    else
      check_vit(advection.vit, grid.h, grid.w, "advection vit");
  }
  switch (source.arch) {
    case SourceArch::none: break;
    case SourceArch::resnet2d:
    case SourceArch::resnet3d: check_resnet(source.resnet, "source resnet"); break;
    case SourceArch::vit: check_vit(source.vit, grid.h, grid.w, "source vit"); break;
    case SourceArch::dit:
      check_vit(source.dit.vit, grid.h, grid.w, "source dit");
      require_config(source.dit.cond_dim == kTemporalChannels,
              "source dit: conditioning width must match the time encoding (" +
                  std::to_string(kTemporalChannels) + ")");
      break;
  }
}

BundleConfig BundleConfig::desk_default(int channels, GridSpec grid, uint64_t seed) {
  BundleConfig c;
  c.channels = channels;
  c.grid = std::move(grid);
  c.seed = seed;
  return c;
}

void to_json(nlohmann::json& j, const GridSpec& g) {
  j = {{"h", g.h},
       {"w", g.w},
       {"lat_deg", g.lat_deg},
       {"lon_deg", g.lon_deg},
       {"dx", g.dx},
       {"dy", g.dy},
       {"lon_policy", to_string(g.lon_policy)},
       {"lat_policy", to_string(g.lat_policy)}};
}

void from_json(const nlohmann::json& j, GridSpec& g) {
  j.at("h").get_to(g.h);
  j.at("w").get_to(g.w);
  j.at("lat_deg").get_to(g.lat_deg);
  j.at("lon_deg").get_to(g.lon_deg);
  j.at("dx").get_to(g.dx);
  j.at("dy").get_to(g.dy);
  g.lon_policy = edge_policy_from_string(j.at("lon_policy").get<std::string>());
  g.lat_policy = edge_policy_from_string(j.at("lat_policy").get<std::string>());
}

static void to_json(nlohmann::json& j, const ResNetConfig& c) {
  j = {{"ladder", c.ladder},
       {"kernel", c.kernel},
       {"dropout", c.dropout},
       {"leaky_slope", c.leaky_slope}};
}

static void from_json(const nlohmann::json& j, ResNetConfig& c) {
  j.at("ladder").get_to(c.ladder);
  j.at("kernel").get_to(c.kernel);
  j.at("dropout").get_to(c.dropout);
  j.at("leaky_slope").get_to(c.leaky_slope);
}

static void to_json(nlohmann::json& j, const ViTConfig& c) {
  j = {{"patch", c.patch},       {"dim", c.dim},
       {"depth", c.depth},       {"heads", c.heads},
       {"mlp_ratio", c.mlp_ratio}, {"decoder_depth", c.decoder_depth},
       {"dropout", c.dropout},   {"drop_path", c.drop_path}};
}

static void from_json(const nlohmann::json& j, ViTConfig& c) {
  j.at("patch").get_to(c.patch);
  j.at("dim").get_to(c.dim);
  j.at("depth").get_to(c.depth);
  j.at("heads").get_to(c.heads);
  j.at("mlp_ratio").get_to(c.mlp_ratio);
  j.at("decoder_depth").get_to(c.decoder_depth);
  j.at("dropout").get_to(c.dropout);
  j.at("drop_path").get_to(c.drop_path);
}

static void to_json(nlohmann::json& j, const DiTConfig& c) {
  j = {{"vit", c.vit}, {"cond_dim", c.cond_dim}};
}

static void from_json(const nlohmann::json& j, DiTConfig& c) {
  j.at("vit").get_to(c.vit);
  j.at("cond_dim").get_to(c.cond_dim);
}

static void to_json(nlohmann::json& j, const VelocityConfig& c) {
  j = {{"plan", to_string(c.plan)},
       {"kind", to_string(c.kind)},
       {"resnet", c.resnet},
       {"vit", c.vit}};
}

static void from_json(const nlohmann::json& j, VelocityConfig& c) {
  c.plan = velocity_plan_from_string(j.at("plan").get<std::string>());
  c.kind = backbone_kind_from_string(j.at("kind").get<std::string>());
  j.at("resnet").get_to(c.resnet);
  j.at("vit").get_to(c.vit);
}

static void to_json(nlohmann::json& j, const AdvectionConfig& c) {
  j = {{"kind", to_string(c.kind)},
       {"resnet", c.resnet},
       {"vit", c.vit},
       {"backbone_enabled", c.backbone_enabled}};
}

static void from_json(const nlohmann::json& j, AdvectionConfig& c) {
  c.kind = backbone_kind_from_string(j.at("kind").get<std::string>());
  j.at("resnet").get_to(c.resnet);
  j.at("vit").get_to(c.vit);
  j.at("backbone_enabled").get_to(c.backbone_enabled);
}

static void to_json(nlohmann::json& j, const SourceConfig& c) {
  j = {{"arch", to_string(c.arch)}, {"resnet", c.resnet}, {"vit", c.vit}, {"dit", c.dit}};
}

static void from_json(const nlohmann::json& j, SourceConfig& c) {
  c.arch = source_arch_from_string(j.at("arch").get<std::string>());
  j.at("resnet").get_to(c.resnet);
  j.at("vit").get_to(c.vit);
  j.at("dit").get_to(c.dit);
}

void to_json(nlohmann::json& j, const BundleConfig& c) {
  j = {{"channels", c.channels}, {"grid", c.grid},     {"velocity", c.velocity},
       {"advection", c.advection}, {"source", c.source}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, BundleConfig& c) {
  j.at("channels").get_to(c.channels);
  j.at("grid").get_to(c.grid);
  j.at("velocity").get_to(c.velocity);
  j.at("advection").get_to(c.advection);
  j.at("source").get_to(c.source);
  j.at("seed").get_to(c.seed);
}

// ============================================================================
// Bundle
// ============================================================================

// Parameter group 1 holds the advection correction, the one network evaluated
// inside the solver; the optimizer gives it its own learning rate.
static constexpr int kGroupBase = 0;
static constexpr int kGroupAdvection = 1;

ModelBundle::ModelBundle(BundleConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int k = cfg_.channels;
  const int h = cfg_.grid.h;
  const int w = cfg_.grid.w;
  Rng root(cfg_.seed);

  {
    Rng r = root.fork(1);
    const int in = velocity_input_channels(cfg_.velocity.plan, k);
    if (cfg_.velocity.kind == BackboneKind::resnet2d)
      vel_resnet_ = std::make_unique<ResNet2D>(params_, "velocity", in, 2 * k,
                                               cfg_.velocity.resnet, r, kGroupBase);
    else
      vel_vit_ = std::make_unique<ViT>(params_, "velocity", in, 2 * k, h, w, cfg_.velocity.vit, r,
                                       kGroupBase);
  }

  {
    Rng r = root.fork(2);
    const int in = 5 * k + kSpatioTemporalChannels;
    if (cfg_.advection.backbone_enabled) {
      if (cfg_.advection.kind == BackboneKind::resnet2d)
        adv_resnet_ = std::make_unique<ResNet2D>(params_, "advection", in, 2 * k,
                                                 cfg_.advection.resnet, r, kGroupAdvection);
      else
        adv_vit_ = std::make_unique<ViT>(params_, "advection", in, 2 * k, h, w,
                                         cfg_.advection.vit, r, kGroupAdvection);
    }
    adv_lin_w_ = &params_.create("advection.linear.w",
                                 he_init({2 * k, in, 1, 1}, in, 1.0, r), false, kGroupAdvection);
    adv_lin_b_ = &params_.create("advection.linear.b", Tensor({2 * k}), false, kGroupAdvection);
  }

  {
    Rng r = root.fork(3);
    const int in = 4 * k + kSpatialChannels;
    switch (cfg_.source.arch) {
      case SourceArch::none: break;
      case SourceArch::resnet2d:
        src_resnet2d_ = std::make_unique<ResNet2D>(params_, "source", in, k, cfg_.source.resnet,
                                                   r, kGroupBase);
        break;
      case SourceArch::vit:
        src_vit_ =
            std::make_unique<ViT>(params_, "source", in, k, h, w, cfg_.source.vit, r, kGroupBase);
        break;
      case SourceArch::dit:
        src_dit_ = std::make_unique<DiT>(params_, "source", in, k, h, w, cfg_.source.dit, r,
                                         kGroupBase);
        break;
      case SourceArch::resnet3d:
        // Time enters as extra input channels, so the 3-D stack sees it even
        // though one evaluation covers the whole horizon.
        src_resnet3d_ = std::make_unique<ResNet3D>(params_, "source", in + kTemporalChannels, k,
                                                   cfg_.source.resnet, r, kGroupBase);
        break;
    }
  }
}

ad::Var ModelBundle::velocity_forward(ad::Graph& g, ad::Var u0, ad::Var dudt) const {
  const int k = cfg_.channels;
  require(g.val(u0).rank() == 3 && g.val(u0).dim(0) == k,
          "velocity input must be (channels,H,W), got " + g.val(u0).shape_str());
  const VelocityPlan plan = cfg_.velocity.plan;
  if (velocity_plan_needs_history(plan))
    require(dudt.valid(), "velocity plan " + to_string(plan) + " needs a rate input");
  ad::Var x;
  switch (plan) {
    case VelocityPlan::u_only: x = u0; break;
    case VelocityPlan::grad_only: x = spatial_gradient_op(g, u0, cfg_.grid); break;
    case VelocityPlan::u_grad:
      x = ad::concat0(g, {u0, spatial_gradient_op(g, u0, cfg_.grid)});
      break;
    case VelocityPlan::u_grad_dt:
      x = ad::concat0(g, {u0, spatial_gradient_op(g, u0, cfg_.grid), dudt});
      break;
    case VelocityPlan::dt_only: x = dudt; break;
  }
  return vel_resnet_ ? vel_resnet_->forward(g, x) : vel_vit_->forward(g, x);
}

ad::Var ModelBundle::advection_forward(ad::Graph& g, ad::Var u, ad::Var v,
                                       double t_hours) const {
  const int k = cfg_.channels;
  require(g.val(u).rank() == 3 && g.val(u).dim(0) == k,
          "advection state must be (channels,H,W), got " + g.val(u).shape_str());
  require(g.val(v).rank() == 3 && g.val(v).dim(0) == 2 * k,
          "advection velocity must be (2*channels,H,W), got " + g.val(v).shape_str());
  ad::Var grad = spatial_gradient_op(g, u, cfg_.grid);
  ad::Var psi = g.constant(spatiotemporal_encoding(cfg_.grid, t_hours / 24.0));
  ad::Var x = ad::concat0(g, {u, grad, v, psi});
  ad::Var out = conv2d(g, x, g.leaf(*adv_lin_w_), g.leaf(*adv_lin_b_));
  if (adv_resnet_) out = ad::add(g, out, adv_resnet_->forward(g, x));
  if (adv_vit_) out = ad::add(g, out, adv_vit_->forward(g, x));
  return out;
}

std::vector<ad::Var> ModelBundle::source_forward(ad::Graph& g,
                                                 const std::vector<ad::Var>& u_steps,
                                                 ad::Var u0, ad::Var v0,
                                                 const std::vector<double>& t_hours) const {
  if (cfg_.source.arch == SourceArch::none) return {};
  require(u_steps.size() == t_hours.size(), "source needs one time per step");
  require(!u_steps.empty(), "source needs at least one step");
  ++source_evals_;

  ad::Var phi_s = g.constant(spatial_encoding(cfg_.grid));
  std::vector<ad::Var> out;
  out.reserve(u_steps.size());

  if (cfg_.source.arch == SourceArch::resnet3d) {
    std::vector<ad::Var> frames;
    frames.reserve(u_steps.size());
    for (size_t n = 0; n < u_steps.size(); ++n) {
      Tensor phi_t = temporal_encoding(t_hours[n] / 24.0);
      Tensor phi_t_map({kTemporalChannels, cfg_.grid.h, cfg_.grid.w});
      for (int c = 0; c < kTemporalChannels; ++c)
        for (int i = 0; i < cfg_.grid.h; ++i)
          for (int j = 0; j < cfg_.grid.w; ++j) phi_t_map.at(c, i, j) = phi_t[c];
      frames.push_back(
          ad::concat0(g, {u_steps[n], u0, v0, phi_s, g.constant(std::move(phi_t_map))}));
    }
    // (N,C,H,W) -> (C,N,H,W) for the volumetric net, then back per step.
    ad::Var vol = ad::permute01(g, ad::stack0(g, frames));
    ad::Var res = ad::permute01(g, src_resnet3d_->forward(g, vol));
    for (size_t n = 0; n < u_steps.size(); ++n)
      out.push_back(ad::unstack0(g, res, static_cast<int>(n)));
    return out;
  }

  for (size_t n = 0; n < u_steps.size(); ++n) {
    ad::Var x = ad::concat0(g, {u_steps[n], u0, v0, phi_s});
    if (src_resnet2d_) {
      out.push_back(src_resnet2d_->forward(g, x));
    } else if (src_vit_) {
      out.push_back(src_vit_->forward(g, x));
    } else {
      ad::Var cond = g.constant(temporal_encoding(t_hours[n] / 24.0));
      out.push_back(src_dit_->forward(g, x, cond));
    }
  }
  return out;
}

// ============================================================================
// Checkpoints
// ============================================================================

static const char* kCheckpointFormat = "fluxcast-checkpoint-1";

void save_checkpoint(const ModelBundle& bundle, const std::string& path,
                     const std::map<std::string, Tensor>& extra,
                     const std::map<std::string, uint64_t>& extra_u64) {
  h5::File f = h5::File::create(path);
  h5::write_attr(f, "format", std::string(kCheckpointFormat));
  nlohmann::json jc = bundle.config();
  h5::write_attr(f, "config", jc.dump());
  h5::write_attr(f, "seed", bundle.config().seed);
  nlohmann::json ju = nlohmann::json::object();
  for (auto& [name, v] : extra_u64) ju[name] = v;
  h5::write_attr(f, "extra_u64", ju.dump());
  for (auto& p : bundle.params().all()) h5::write_array(f, "param." + p->name, p->value);
  for (auto& [name, t] : extra) h5::write_array(f, "extra." + name, t);
}

std::unique_ptr<ModelBundle> load_checkpoint(const std::string& path,
                                             std::map<std::string, Tensor>* extra,
                                             std::map<std::string, uint64_t>* extra_u64) {
  h5::File f = h5::File::open_ro(path);
  require_data(h5::has_attr(f, "format") && h5::read_attr_string(f, "format") == kCheckpointFormat,
               path + ": not a checkpoint file");
  BundleConfig cfg;
  try {
    nlohmann::json jc = nlohmann::json::parse(h5::read_attr_string(f, "config"));
    cfg = jc.get<BundleConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": bad checkpoint config: " + e.what());
  }
  auto bundle = std::make_unique<ModelBundle>(cfg);
  for (auto& p : bundle->params().all()) {
    const std::string name = "param." + p->name;
    require_data(h5::has_dataset(f, name), path + ": checkpoint missing parameter " + p->name);
    Tensor stored = h5::read_array(f, name);
    require_data(stored.same_shape(p->value), path + ": parameter " + p->name + " has shape " +
                                                  stored.shape_str() + ", model expects " +
                                                  p->value.shape_str());
    p->value = std::move(stored);
  }
  if (extra) {
    extra->clear();
    for (auto& name : h5::list_datasets(f))
      if (name.rfind("extra.", 0) == 0)
        (*extra)[name.substr(6)] = h5::read_array(f, name);
  }
  if (extra_u64) {
    extra_u64->clear();
    nlohmann::json ju = nlohmann::json::parse(h5::read_attr_string(f, "extra_u64"));
    for (auto& [name, v] : ju.items()) (*extra_u64)[name] = v.get<uint64_t>();
  }
  return bundle;
}

}  // namespace fluxcast
