#include "fluxcast/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "fluxcast/h5io.hpp"
#include "fluxcast/models.hpp"
#include "fluxcast/rng.hpp"

namespace fluxcast {

// ============================================================================
// Variable catalog
// ============================================================================

VarKind var_kind_from_string(const std::string& s) {
  if (s == "constant") return VarKind::constant;
  if (s == "surface") return VarKind::surface;
  if (s == "atmospheric") return VarKind::atmospheric;
  throw ConfigError("unknown variable kind '" + s + "'");
}

std::string to_string(VarKind k) {
  switch (k) {
    case VarKind::constant: return "constant";
    case VarKind::surface: return "surface";
    case VarKind::atmospheric: return "atmospheric";
  }
  throw ConfigError("bad variable kind value");
}

std::string VariableSpec::channel_name() const {
  if (kind == VarKind::atmospheric) return name + "_" + std::to_string(level_hpa);
  return name;
}

void VariableCatalog::add_constant(const std::string& name) {
  vars.push_back({name, VarKind::constant, -1});
}

void VariableCatalog::add_surface(const std::string& name) {
  vars.push_back({name, VarKind::surface, -1});
}

void VariableCatalog::add_atmospheric(const std::string& name, const std::vector<int>& levels) {
  require_config(!levels.empty(), "catalog: atmospheric variable '" + name + "' needs levels");
  for (int l : levels) {
    require_config(l > 0, "catalog: pressure level must be positive for '" + name + "'");
    vars.push_back({name, VarKind::atmospheric, l});
  }
}

void VariableCatalog::validate() const {
  std::set<std::pair<std::string, int>> seen;
  for (const auto& v : vars) {
    require_config(!v.name.empty(), "catalog: empty variable name");
    require_config(v.kind != VarKind::atmospheric || v.level_hpa > 0,
                   "catalog: atmospheric '" + v.name + "' without a pressure level");
    if (!seen.insert({v.name, v.level_hpa}).second)
      throw ConfigError("catalog: duplicate channel " + v.channel_name());
  }
}

VariableCatalog VariableCatalog::synthetic(int k) {
  require_config(k >= 1, "catalog: need at least one channel");
  VariableCatalog c;
  for (int i = 0; i < k; ++i) c.add_surface("f" + std::to_string(i));
  return c;
}

void to_json(nlohmann::json& j, const VariableCatalog& c) {
  j = nlohmann::json::array();
  for (const auto& v : c.vars)
    j.push_back({{"name", v.name}, {"kind", to_string(v.kind)}, {"level", v.level_hpa}});
}

void from_json(const nlohmann::json& j, VariableCatalog& c) {
  c.vars.clear();
  for (const auto& e : j) {
    VariableSpec v;
    e.at("name").get_to(v.name);
    v.kind = var_kind_from_string(e.at("kind").get<std::string>());
    e.at("level").get_to(v.level_hpa);
    c.vars.push_back(v);
  }
}

// ============================================================================
// Normalization
// ============================================================================

void NormStats::validate() const {
  require_data(mean.size() == stddev.size() && mean.size() == constant.size(),
               "norm stats: ragged per-channel arrays");
  for (size_t c = 0; c < mean.size(); ++c) {
    require_data(std::isfinite(mean[c]) && std::isfinite(stddev[c]),
                 "norm stats: non-finite moment at channel " + std::to_string(c));
    require_data(constant[c] || stddev[c] > 0.0,
                 "norm stats: non-positive stddev at non-constant channel " + std::to_string(c));
  }
}

void to_json(nlohmann::json& j, const NormStats& s) {
  j = {{"mean", s.mean}, {"stddev", s.stddev}, {"constant", s.constant}};
}

void from_json(const nlohmann::json& j, NormStats& s) {
  j.at("mean").get_to(s.mean);
  j.at("stddev").get_to(s.stddev);
  j.at("constant").get_to(s.constant);
}

NormStats fit_norm_stats(const std::vector<TrajectorySample>& split,
                         const VariableCatalog& catalog) {
  require_data(!split.empty(), "norm stats: empty split");
  const int k = catalog.channels();
  for (const auto& s : split)
    require_data(s.u0.rank() == 3 && s.u0.dim(0) == k,
                 "norm stats: sample field shape " + s.u0.shape_str() + " does not match the " +
                     std::to_string(k) + "-channel catalog");
  NormStats st;
  st.mean.assign(k, 0.0);
  st.stddev.assign(k, 0.0);
  st.constant.assign(k, 0);

  const long cells = split.front().u0.size() / k;
  const double count = static_cast<double>(cells) * split.size();
  for (const auto& s : split)
    for (int c = 0; c < k; ++c)
      for (long i = 0; i < cells; ++i) st.mean[c] += s.u0[c * cells + i];
  for (int c = 0; c < k; ++c) st.mean[c] /= count;
  for (const auto& s : split)
    for (int c = 0; c < k; ++c)
      for (long i = 0; i < cells; ++i) {
        double d = s.u0[c * cells + i] - st.mean[c];
        st.stddev[c] += d * d;
      }
  for (int c = 0; c < k; ++c) {
    st.stddev[c] = std::sqrt(st.stddev[c] / count);
    if (catalog.vars[c].kind == VarKind::constant) {
      st.constant[c] = 1;
    } else {
      require_data(st.stddev[c] > 0.0, "norm stats: channel " + catalog.vars[c].channel_name() +
                                           " has zero variance but is not a constant field");
    }
  }
  return st;
}

namespace {

Tensor channel_affine(const Tensor& u, const NormStats& st, bool forward) {
  const int k = st.channels();
  require_data(u.rank() == 3 || u.rank() == 4, "normalize: expected (K,H,W) or (N,K,H,W), got " +
                                                   u.shape_str());
  const int caxis = u.rank() == 3 ? 0 : 1;
  require_data(u.dim(caxis) == k, "normalize: " + std::to_string(k) + "-channel stats vs field " +
                                      u.shape_str());
  Tensor out = u;
  const long cells = static_cast<long>(u.dim(u.rank() - 2)) * u.dim(u.rank() - 1);
  const int outer = u.rank() == 3 ? 1 : u.dim(0);
  for (int n = 0; n < outer; ++n)
    for (int c = 0; c < k; ++c) {
      if (st.constant[c]) continue;
      double* p = out.data() + (static_cast<long>(n) * k + c) * cells;
      if (forward)
        for (long i = 0; i < cells; ++i) p[i] = (p[i] - st.mean[c]) / st.stddev[c];
      else
        for (long i = 0; i < cells; ++i) p[i] = p[i] * st.stddev[c] + st.mean[c];
    }
  return out;
}

}  // namespace

Tensor normalize(const Tensor& u, const NormStats& stats) {
  stats.validate();
  return channel_affine(u, stats, true);
}

Tensor denormalize(const Tensor& u, const NormStats& stats) {
  stats.validate();
  return channel_affine(u, stats, false);
}

// ============================================================================
// Dataset container
// ============================================================================

void Dataset::validate() const {
  grid.validate();
  catalog.validate();
  const int k = catalog.channels();
  for (size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const std::string who = "sample " + std::to_string(i);
    require_data(s.u0.rank() == 3 && s.u0.dim(0) == k && s.u0.dim(1) == grid.h &&
                     s.u0.dim(2) == grid.w,
                 who + ": field shape " + s.u0.shape_str());
    require_data(s.targets.rank() == 4 && s.targets.dim(1) == k && s.targets.dim(2) == grid.h &&
                     s.targets.dim(3) == grid.w && s.targets.dim(0) >= 1,
                 who + ": target shape " + s.targets.shape_str());
    require_data(s.u0.first_nonfinite() < 0 && s.targets.first_nonfinite() < 0,
                 who + ": non-finite values");
    if (!s.u_prev.empty()) {
      require_data(s.u_prev.same_shape(s.u0), who + ": history shape " + s.u_prev.shape_str());
      require_data(s.dt_prev_hours > 0.0, who + ": non-positive history spacing");
    }
    if (!s.v0_true.empty())
      require_data(s.v0_true.rank() == 3 && s.v0_true.dim(0) == 2 * k,
                   who + ": velocity shape " + s.v0_true.shape_str());
  }
  if (!samples.empty() && stats.channels() > 0) stats.validate();
}

static const char* kDatasetFormat = "fluxcast-dataset-1";

void save_dataset(const std::string& path, const Dataset& ds) {
  ds.validate();
  const size_t s_count = ds.samples.size();
  h5::File f = h5::File::create(path);
  h5::write_attr(f, "format", std::string(kDatasetFormat));
  nlohmann::json header = {{"grid", ds.grid},
                           {"catalog", ds.catalog},
                           {"stats", ds.stats},
                           {"meta", ds.meta},
                           {"samples", s_count}};
  if (s_count) {
    const auto& first = ds.samples.front();
    header["n_leads"] = first.n_leads();
    header["has_history"] = first.has_history();
    header["has_true_velocity"] = !first.v0_true.empty();
  }
  h5::write_attr(f, "header", header.dump());
  if (!s_count) return;

  const int n = ds.samples.front().n_leads();
  const int k = ds.catalog.channels();
  const bool hist = ds.samples.front().has_history();
  const bool truev = !ds.samples.front().v0_true.empty();
  for (const auto& s : ds.samples) {
    require_data(s.n_leads() == n, "save: mixed lead counts in one dataset");
    require_data(s.has_history() == hist && s.v0_true.empty() != truev,
                 "save: mixed optional fields in one dataset");
  }

  const int sc = static_cast<int>(s_count);
  Tensor u0({sc, k, ds.grid.h, ds.grid.w});
  Tensor targets({sc, n, k, ds.grid.h, ds.grid.w});
  Tensor t0({sc});
  for (int i = 0; i < sc; ++i) {
    const auto& s = ds.samples[i];
    std::copy(s.u0.data(), s.u0.data() + s.u0.size(), u0.data() + i * s.u0.size());
    std::copy(s.targets.data(), s.targets.data() + s.targets.size(),
              targets.data() + i * s.targets.size());
    t0[i] = s.t0_hours;
  }
  h5::write_array(f, "u0", u0);
  h5::write_array(f, "targets", targets);
  h5::write_array(f, "t0_hours", t0);
  if (hist) {
    Tensor prev({sc, k, ds.grid.h, ds.grid.w});
    Tensor dtp({sc});
    for (int i = 0; i < sc; ++i) {
      const auto& s = ds.samples[i];
      std::copy(s.u_prev.data(), s.u_prev.data() + s.u_prev.size(),
                prev.data() + i * s.u_prev.size());
      dtp[i] = s.dt_prev_hours;
    }
    h5::write_array(f, "u_prev", prev);
    h5::write_array(f, "dt_prev_hours", dtp);
  }
  if (truev) {
    Tensor v({sc, 2 * k, ds.grid.h, ds.grid.w});
    for (int i = 0; i < sc; ++i) {
      const auto& s = ds.samples[i];
      std::copy(s.v0_true.data(), s.v0_true.data() + s.v0_true.size(),
                v.data() + i * s.v0_true.size());
    }
    h5::write_array(f, "v0_true", v);
  }
}

Dataset load_dataset(const std::string& path) {
  h5::File f = h5::File::open_ro(path);
  require_data(h5::has_attr(f, "format") && h5::read_attr_string(f, "format") == kDatasetFormat,
               path + ": not a dataset file");
  Dataset ds;
  size_t s_count = 0;
  try {
    nlohmann::json header = nlohmann::json::parse(h5::read_attr_string(f, "header"));
    header.at("grid").get_to(ds.grid);
    header.at("catalog").get_to(ds.catalog);
    header.at("stats").get_to(ds.stats);
    ds.meta = header.at("meta");
    header.at("samples").get_to(s_count);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": bad dataset header: " + e.what());
  }
  if (!s_count) return ds;

  Tensor u0 = h5::read_array(f, "u0");
  Tensor targets = h5::read_array(f, "targets");
  Tensor t0 = h5::read_array(f, "t0_hours");
  require_data(u0.rank() == 4 && targets.rank() == 5 && t0.rank() == 1 &&
                   u0.dim(0) == static_cast<int>(s_count) &&
                   targets.dim(0) == static_cast<int>(s_count) &&
                   t0.dim(0) == static_cast<int>(s_count),
               path + ": inconsistent array extents");
  const bool hist = h5::has_dataset(f, "u_prev");
  const bool truev = h5::has_dataset(f, "v0_true");
  Tensor prev, dtp, v;
  if (hist) {
    prev = h5::read_array(f, "u_prev");
    dtp = h5::read_array(f, "dt_prev_hours");
  }
  if (truev) v = h5::read_array(f, "v0_true");

  const long u_sz = u0.size() / s_count;
  const long t_sz = targets.size() / s_count;
  for (size_t i = 0; i < s_count; ++i) {
    TrajectorySample s;
    s.u0 = Tensor({u0.dim(1), u0.dim(2), u0.dim(3)});
    std::copy(u0.data() + i * u_sz, u0.data() + (i + 1) * u_sz, s.u0.data());
    s.targets = Tensor({targets.dim(1), targets.dim(2), targets.dim(3), targets.dim(4)});
    std::copy(targets.data() + i * t_sz, targets.data() + (i + 1) * t_sz, s.targets.data());
    s.t0_hours = t0[static_cast<long>(i)];
    if (hist) {
      s.u_prev = Tensor({prev.dim(1), prev.dim(2), prev.dim(3)});
      std::copy(prev.data() + i * u_sz, prev.data() + (i + 1) * u_sz, s.u_prev.data());
      s.dt_prev_hours = dtp[static_cast<long>(i)];
    }
    if (truev) {
      long v_sz = v.size() / s_count;
      s.v0_true = Tensor({v.dim(1), v.dim(2), v.dim(3)});
      std::copy(v.data() + i * v_sz, v.data() + (i + 1) * v_sz, s.v0_true.data());
    }
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

// ============================================================================
// Synthetic generation
// ============================================================================

VelocityFamily velocity_family_from_string(const std::string& s) {
  if (s == "uniform") return VelocityFamily::uniform;
  if (s == "rotational") return VelocityFamily::rotational;
  throw ConfigError("unknown velocity family '" + s + "' (expected uniform or rotational)");
}

std::string to_string(VelocityFamily f) {
  return f == VelocityFamily::uniform ? "uniform" : "rotational";
}

SourceFamily source_family_from_string(const std::string& s) {
  if (s == "none") return SourceFamily::none;
  if (s == "smooth_periodic") return SourceFamily::smooth_periodic;
  throw ConfigError("unknown source family '" + s + "' (expected none or smooth_periodic)");
}

std::string to_string(SourceFamily f) {
  return f == SourceFamily::none ? "none" : "smooth_periodic";
}

void SynthConfig::validate() const {
  require_config(h >= 2 && w >= 2, "synthetic: grid must be at least 2x2");
  require_config(k >= 1, "synthetic: need at least one channel");
  require_config(n_leads >= 1, "synthetic: need at least one lead");
  require_config(samples >= 0, "synthetic: negative sample count");
  require_config(max_speed >= 0.0, "synthetic: negative speed bound");
  require_config(bumps >= 1, "synthetic: need at least one bump");
  require_config(kappa > 0.0, "synthetic: bump concentration must be positive");
  require_config(source_period_hours > 0.0, "synthetic: source period must be positive");
  require_config(fixed_vx.has_value() == fixed_vy.has_value(),
                 "synthetic: fix both velocity components or neither");
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = {{"h", c.h},
       {"w", c.w},
       {"k", c.k},
       {"n_leads", c.n_leads},
       {"samples", c.samples},
       {"seed", c.seed},
       {"velocity", to_string(c.velocity)},
       {"source", to_string(c.source)},
       {"max_speed", c.max_speed},
       {"bumps", c.bumps},
       {"kappa", c.kappa},
       {"source_amp", c.source_amp},
       {"source_period_hours", c.source_period_hours},
       {"with_history", c.with_history}};
  if (c.fixed_vx) {
    j["fixed_vx"] = *c.fixed_vx;
    j["fixed_vy"] = *c.fixed_vy;
  }
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  j.at("h").get_to(c.h);
  j.at("w").get_to(c.w);
  j.at("k").get_to(c.k);
  j.at("n_leads").get_to(c.n_leads);
  j.at("samples").get_to(c.samples);
  j.at("seed").get_to(c.seed);
  c.velocity = velocity_family_from_string(j.at("velocity").get<std::string>());
  c.source = source_family_from_string(j.at("source").get<std::string>());
  j.at("max_speed").get_to(c.max_speed);
  j.at("bumps").get_to(c.bumps);
  j.at("kappa").get_to(c.kappa);
  j.at("source_amp").get_to(c.source_amp);
  j.at("source_period_hours").get_to(c.source_period_hours);
  j.at("with_history").get_to(c.with_history);
  if (j.contains("fixed_vx")) {
    c.fixed_vx = j.at("fixed_vx").get<double>();
    c.fixed_vy = j.at("fixed_vy").get<double>();
  } else {
    c.fixed_vx.reset();
    c.fixed_vy.reset();
  }
}

namespace {

constexpr double kTau = 6.283185307179586;

double von_mises_bump(double x, double x0, double kappa, double period) {
  return std::exp(kappa * (std::cos(kTau * (x - x0) / period) - 1.0));
}

// One channel's worth of closed-form structure.
struct ChannelLaw {
  // bump superposition
  std::vector<double> amp, xc, yc;
  // flow: uniform (vx, vy) or shear vx(y) = shear_amp * sin(2 pi y / H)
  bool shear = false;
  double vx = 0.0, vy = 0.0, shear_amp = 0.0;
  // source mode
  bool sourced = false;
  double s_amp = 0.0, s_kx = 0.0, s_ky = 0.0, s_phase = 0.0, s_omega = 0.0;

  double flow_x(double y, int grid_h) const {
    return shear ? shear_amp * std::sin(kTau * y / grid_h) : vx;
  }
  double flow_y() const { return shear ? 0.0 : vy; }

  double u0_at(double x, double y, int grid_h, int grid_w, double kappa) const {
    double acc = 0.0;
    for (size_t b = 0; b < amp.size(); ++b)
      acc += amp[b] * von_mises_bump(x, xc[b], kappa, grid_w) *
             von_mises_bump(y, yc[b], kappa, grid_h);
    return acc;
  }

  // Exact state at elapsed time t (hours, may be negative) from absolute
  // start T0: transport along characteristics of the divergence-free flow
  // plus the analytically integrated single-mode source.
  double state_at(double x, double y, double t, double t0_abs, int grid_h, int grid_w,
                  double kappa) const {
    double fx = flow_x(y, grid_h), fy = flow_y();
    double val = u0_at(x - fx * t, y - fy * t, grid_h, grid_w, kappa);
    if (sourced) {
      double theta = s_kx * x + s_ky * y + s_phase;
      double c = s_kx * fx + s_ky * fy;
      auto J = [t](double a, double b) {
        // integral of cos(a tau + b) over [0, t], cancellation-free form
        if (std::abs(a) < 1e-9) return t * std::cos(b + a * t / 2.0);
        return 2.0 * std::sin(a * t / 2.0) * std::cos(b + a * t / 2.0) / a;
      };
      double b1 = theta - c * t + s_omega * t0_abs;
      double b2 = theta - c * t - s_omega * t0_abs;
      val += s_amp / 2.0 * (J(c + s_omega, b1) + J(c - s_omega, b2));
    }
    return val;
  }
};

}  // namespace

Dataset make_synthetic_dataset(const SynthConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.grid = GridSpec::uniform_global(cfg.h, cfg.w);
  ds.grid.lat_policy = EdgePolicy::periodic;  // circular shifts are exact
  ds.catalog = VariableCatalog::synthetic(cfg.k);
  nlohmann::json meta = {{"kind", "synthetic"}, {"generator", cfg}};

  Rng rng(cfg.seed);
  // Source modes are per channel, fixed across the dataset: a stationary
  // diurnal forcing pattern the source model can actually learn.
  std::vector<ChannelLaw> base(cfg.k);
  nlohmann::json modes = nlohmann::json::array();
  for (int c = 0; c < cfg.k; ++c) {
    if (cfg.source == SourceFamily::smooth_periodic) {
      ChannelLaw& law = base[c];
      law.sourced = true;
      law.s_amp = cfg.source_amp;
      int mx = 1 + static_cast<int>(rng.next_below(2));
      int my = 1 + static_cast<int>(rng.next_below(2));
      law.s_kx = kTau * mx / cfg.w;
      law.s_ky = kTau * my / cfg.h;
      law.s_phase = rng.next_uniform(0.0, kTau);
      law.s_omega = kTau / cfg.source_period_hours;
      modes.push_back({{"mx", mx},
                       {"my", my},
                       {"phase", law.s_phase},
                       {"amp", law.s_amp},
                       {"omega", law.s_omega}});
    }
  }
  meta["source_modes"] = modes;
  ds.meta = std::move(meta);

  for (int s = 0; s < cfg.samples; ++s) {
    TrajectorySample sample;
    sample.t0_hours = static_cast<double>(rng.next_below(24 * 365));
    std::vector<ChannelLaw> laws = base;
    for (int c = 0; c < cfg.k; ++c) {
      ChannelLaw& law = laws[c];
      for (int b = 0; b < cfg.bumps; ++b) {
        law.amp.push_back(rng.next_uniform(0.5, 1.0));
        law.xc.push_back(rng.next_uniform(0.0, cfg.w));
        law.yc.push_back(rng.next_uniform(0.0, cfg.h));
      }
      if (cfg.velocity == VelocityFamily::uniform) {
        if (cfg.fixed_vx) {
          law.vx = *cfg.fixed_vx;
          law.vy = *cfg.fixed_vy;
        } else {
          law.vx = rng.next_uniform(-cfg.max_speed, cfg.max_speed);
          law.vy = rng.next_uniform(-cfg.max_speed, cfg.max_speed);
        }
      } else {
        law.shear = true;
        double sign = rng.next_uniform() < 0.5 ? -1.0 : 1.0;
        law.shear_amp = sign * rng.next_uniform(0.3, 1.0) * cfg.max_speed;
      }
    }

    sample.u0 = Tensor({cfg.k, cfg.h, cfg.w});
    sample.targets = Tensor({cfg.n_leads, cfg.k, cfg.h, cfg.w});
    sample.v0_true = Tensor({2 * cfg.k, cfg.h, cfg.w});
    if (cfg.with_history) sample.u_prev = Tensor({cfg.k, cfg.h, cfg.w});
    for (int c = 0; c < cfg.k; ++c) {
      const ChannelLaw& law = laws[c];
      for (int i = 0; i < cfg.h; ++i)
        for (int j = 0; j < cfg.w; ++j) {
          double x = j, y = i;
          sample.u0.at(c, i, j) = law.u0_at(x, y, cfg.h, cfg.w, cfg.kappa);
          sample.v0_true.at(2 * c, i, j) = law.flow_x(y, cfg.h);
          sample.v0_true.at(2 * c + 1, i, j) = law.flow_y();
          if (cfg.with_history)
            sample.u_prev.at(c, i, j) =
                law.state_at(x, y, -1.0, sample.t0_hours, cfg.h, cfg.w, cfg.kappa);
          for (int n = 1; n <= cfg.n_leads; ++n)
            sample.targets.at(n - 1, c, i, j) =
                law.state_at(x, y, n, sample.t0_hours, cfg.h, cfg.w, cfg.kappa);
        }
    }
    sample.dt_prev_hours = 1.0;
    ds.samples.push_back(std::move(sample));
  }
  if (!ds.samples.empty()) ds.stats = fit_norm_stats(ds.samples, ds.catalog);
  ds.validate();
  return ds;
}

}  // namespace fluxcast
