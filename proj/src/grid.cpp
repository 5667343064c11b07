#include "fluxcast/grid.hpp"

#include <algorithm>
#include <cmath>

namespace fluxcast {

static constexpr double kPi = 3.14159265358979323846;
static constexpr double kDegToRad = kPi / 180.0;

EdgePolicy edge_policy_from_string(const std::string& s) {
  if (s == "periodic") return EdgePolicy::periodic;
  if (s == "clamp") return EdgePolicy::clamp;
  if (s == "reflect") return EdgePolicy::reflect;
  throw ConfigError("unknown edge policy '" + s + "' (periodic|clamp|reflect)");
}

std::string to_string(EdgePolicy p) {
  switch (p) {
    case EdgePolicy::periodic: return "periodic";
    case EdgePolicy::clamp: return "clamp";
    case EdgePolicy::reflect: return "reflect";
  }
  return "?";
}

GridSpec GridSpec::uniform_global(int h, int w) {
  if (h < 2 || w < 2) throw ConfigError("global grid needs h, w >= 2");
  GridSpec g;
  g.h = h;
  g.w = w;
  g.lat_deg.resize(h);
  g.lon_deg.resize(w);
  for (int i = 0; i < h; ++i) g.lat_deg[i] = -90.0 + (i + 0.5) * 180.0 / h;
  for (int j = 0; j < w; ++j) g.lon_deg[j] = j * 360.0 / w;
  g.lon_policy = EdgePolicy::periodic;
  g.lat_policy = EdgePolicy::clamp;
  g.validate();
  return g;
}

void GridSpec::validate() const {
  // Degenerate single-row/column grids are legal for weighting and storage;
  // the difference stencils reject them separately.
  if (h < 1 || w < 1)
    throw ConfigError("grid must be at least 1x1, got " + std::to_string(h) + "x" +
                      std::to_string(w));
  if (static_cast<int>(lat_deg.size()) != h || static_cast<int>(lon_deg.size()) != w)
    throw ConfigError("grid axis lengths disagree with h/w");
  if (dx <= 0.0 || dy <= 0.0) throw ConfigError("grid spacing must be positive");
  for (double la : lat_deg)
    if (!(la > -90.0 && la < 90.0))
      throw ConfigError("latitude " + std::to_string(la) + " not strictly inside the poles");
  for (double lo : lon_deg)
    if (!(lo >= 0.0 && lo < 360.0))
      throw ConfigError("longitude " + std::to_string(lo) + " outside [0,360)");
  auto check_uniform = [](const std::vector<double>& a, const char* axis) {
    if (a.size() < 2) return;
    double step = a[1] - a[0];
    if (step <= 0.0) throw ConfigError(std::string(axis) + " axis must ascend");
    for (size_t i = 2; i < a.size(); ++i)
      if (std::abs((a[i] - a[i - 1]) - step) > 1e-9 * std::max(1.0, std::abs(step)))
        throw ConfigError(std::string(axis) + " axis spacing is not uniform");
  };
  check_uniform(lat_deg, "latitude");
  check_uniform(lon_deg, "longitude");
}

bool GridSpec::same_geometry(const GridSpec& o) const {
  return h == o.h && w == o.w && lat_deg == o.lat_deg && lon_deg == o.lon_deg && dx == o.dx &&
         dy == o.dy && lon_policy == o.lon_policy && lat_policy == o.lat_policy;
}

Tensor latitude_weights(const GridSpec& grid) {
  Tensor w({grid.h});
  double mean = 0.0;
  for (int i = 0; i < grid.h; ++i) {
    w[i] = std::cos(grid.lat_deg[i] * kDegToRad);
    mean += w[i];
  }
  mean /= grid.h;
  if (mean <= 0.0) throw ConfigError("degenerate latitude weights");
  for (int i = 0; i < grid.h; ++i) w[i] /= mean;
  return w;
}

// ============================================================================
// 1-D difference rows
// ============================================================================

// Enumerates the nonzero coefficients of row `i` of the difference operator on
// an axis of length n. Forward applications gather with these coefficients;
// adjoints scatter with the same ones, so the transpose is exact by
// construction.
template <class F>
static void diff_row(int i, int n, double inv_d, EdgePolicy policy, F&& cb) {
  switch (policy) {
    case EdgePolicy::periodic:
      cb((i + 1) % n, 0.5 * inv_d);
      cb((i - 1 + n) % n, -0.5 * inv_d);
      return;
    case EdgePolicy::clamp:
      if (i == 0) {
        cb(1, inv_d);
        cb(0, -inv_d);
      } else if (i == n - 1) {
        cb(n - 1, inv_d);
        cb(n - 2, -inv_d);
      } else {
        cb(i + 1, 0.5 * inv_d);
        cb(i - 1, -0.5 * inv_d);
      }
      return;
    case EdgePolicy::reflect:
      // Ghost mirrors the interior neighbour, so the edge derivative vanishes.
      if (i > 0 && i < n - 1) {
        cb(i + 1, 0.5 * inv_d);
        cb(i - 1, -0.5 * inv_d);
      }
      return;
  }
}

Tensor ddx(const Tensor& f, const GridSpec& grid) {
  if (f.rank() != 3 || f.dim(1) != grid.h || f.dim(2) != grid.w)
    throw ShapeError("ddx: field " + f.shape_str() + " does not match grid");
  if (grid.w < 2) throw ConfigError("ddx needs at least 2 longitude cells");
  int c = f.dim(0);
  Tensor out(f.shape());
  double inv = 1.0 / grid.dx;
  for (int ci = 0; ci < c; ++ci)
    for (int h = 0; h < grid.h; ++h) {
      const double* row = f.data() + (static_cast<long>(ci) * grid.h + h) * grid.w;
      double* orow = out.data() + (static_cast<long>(ci) * grid.h + h) * grid.w;
      for (int w = 0; w < grid.w; ++w) {
        double acc = 0.0;
        diff_row(w, grid.w, inv, grid.lon_policy, [&](int j, double cf) { acc += cf * row[j]; });
        orow[w] = acc;
      }
    }
  return out;
}

Tensor ddx_adjoint(const Tensor& f, const GridSpec& grid) {
  if (f.rank() != 3 || f.dim(1) != grid.h || f.dim(2) != grid.w)
    throw ShapeError("ddx_adjoint: field " + f.shape_str() + " does not match grid");
  int c = f.dim(0);
  Tensor out(f.shape());
  double inv = 1.0 / grid.dx;
  for (int ci = 0; ci < c; ++ci)
    for (int h = 0; h < grid.h; ++h) {
      const double* row = f.data() + (static_cast<long>(ci) * grid.h + h) * grid.w;
      double* orow = out.data() + (static_cast<long>(ci) * grid.h + h) * grid.w;
      for (int w = 0; w < grid.w; ++w)
        diff_row(w, grid.w, inv, grid.lon_policy,
                 [&](int j, double cf) { orow[j] += cf * row[w]; });
    }
  return out;
}

Tensor ddy(const Tensor& f, const GridSpec& grid) {
  if (f.rank() != 3 || f.dim(1) != grid.h || f.dim(2) != grid.w)
    throw ShapeError("ddy: field " + f.shape_str() + " does not match grid");
  if (grid.h < 2) throw ConfigError("ddy needs at least 2 latitude cells");
  int c = f.dim(0);
  Tensor out(f.shape());
  double inv = 1.0 / grid.dy;
  for (int ci = 0; ci < c; ++ci)
    for (int w = 0; w < grid.w; ++w) {
      const double* base = f.data() + static_cast<long>(ci) * grid.h * grid.w;
      double* obase = out.data() + static_cast<long>(ci) * grid.h * grid.w;
      for (int h = 0; h < grid.h; ++h) {
        double acc = 0.0;
        diff_row(h, grid.h, inv, grid.lat_policy,
                 [&](int j, double cf) { acc += cf * base[static_cast<long>(j) * grid.w + w]; });
        obase[static_cast<long>(h) * grid.w + w] = acc;
      }
    }
  return out;
}

Tensor ddy_adjoint(const Tensor& f, const GridSpec& grid) {
  if (f.rank() != 3 || f.dim(1) != grid.h || f.dim(2) != grid.w)
    throw ShapeError("ddy_adjoint: field " + f.shape_str() + " does not match grid");
  int c = f.dim(0);
  Tensor out(f.shape());
  double inv = 1.0 / grid.dy;
  for (int ci = 0; ci < c; ++ci)
    for (int w = 0; w < grid.w; ++w) {
      const double* base = f.data() + static_cast<long>(ci) * grid.h * grid.w;
      double* obase = out.data() + static_cast<long>(ci) * grid.h * grid.w;
      for (int h = 0; h < grid.h; ++h)
        diff_row(h, grid.h, inv, grid.lat_policy, [&](int j, double cf) {
          obase[static_cast<long>(j) * grid.w + w] += cf * base[static_cast<long>(h) * grid.w + w];
        });
    }
  return out;
}

Tensor spatial_gradient(const Tensor& u, const GridSpec& grid) {
  if (u.rank() != 3 || u.dim(1) != grid.h || u.dim(2) != grid.w)
    throw ShapeError("spatial_gradient: field " + u.shape_str() + " does not match grid");
  int k = u.dim(0);
  Tensor gx = ddx(u, grid);
  Tensor gy = ddy(u, grid);
  Tensor out({2 * k, grid.h, grid.w});
  long plane = static_cast<long>(grid.h) * grid.w;
  for (int ki = 0; ki < k; ++ki) {
    std::memcpy(out.data() + (2L * ki) * plane, gx.data() + ki * plane, sizeof(double) * plane);
    std::memcpy(out.data() + (2L * ki + 1) * plane, gy.data() + ki * plane,
                sizeof(double) * plane);
  }
  return out;
}

Tensor divergence(const Tensor& v, const GridSpec& grid) {
  if (v.rank() != 3 || v.dim(0) % 2 != 0 || v.dim(1) != grid.h || v.dim(2) != grid.w)
    throw ShapeError("divergence: velocity " + v.shape_str() + " does not match grid");
  int k = v.dim(0) / 2;
  long plane = static_cast<long>(grid.h) * grid.w;
  Tensor out({k, grid.h, grid.w});
  Tensor gx = ddx(v, grid);
  Tensor gy = ddy(v, grid);
  for (int ki = 0; ki < k; ++ki) {
    const double* dvx = gx.data() + (2L * ki) * plane;
    const double* dvy = gy.data() + (2L * ki + 1) * plane;
    double* dst = out.data() + static_cast<long>(ki) * plane;
    for (long i = 0; i < plane; ++i) dst[i] = dvx[i] + dvy[i];
  }
  return out;
}

static void check_finite_field(const Tensor& t, const GridSpec& grid, const char* what) {
  long idx = t.first_nonfinite();
  if (idx < 0) return;
  long plane = static_cast<long>(grid.h) * grid.w;
  long c = idx / plane;
  long h = (idx % plane) / grid.w;
  long w = idx % grid.w;
  throw InstabilityError(std::string("non-finite ") + what + " at channel " + std::to_string(c) +
                         ", cell (" + std::to_string(h) + "," + std::to_string(w) + ")");
}

Tensor advection_tendency(const Tensor& u, const Tensor& v, const GridSpec& grid) {
  if (u.rank() != 3 || u.dim(1) != grid.h || u.dim(2) != grid.w)
    throw ShapeError("advection_tendency: field " + u.shape_str() + " does not match grid");
  if (v.rank() != 3 || v.dim(0) != 2 * u.dim(0) || v.dim(1) != grid.h || v.dim(2) != grid.w)
    throw ShapeError("advection_tendency: velocity " + v.shape_str() + " for field " +
                     u.shape_str());
  check_finite_field(u, grid, "field");
  check_finite_field(v, grid, "velocity");
  int k = u.dim(0);
  long plane = static_cast<long>(grid.h) * grid.w;
  // Fluxes u*vx, u*vy per channel, then -d/dx Fx - d/dy Fy.
  Tensor fx({k, grid.h, grid.w});
  Tensor fy({k, grid.h, grid.w});
  for (int ki = 0; ki < k; ++ki) {
    const double* uu = u.data() + static_cast<long>(ki) * plane;
    const double* vx = v.data() + (2L * ki) * plane;
    const double* vy = v.data() + (2L * ki + 1) * plane;
    double* px = fx.data() + static_cast<long>(ki) * plane;
    double* py = fy.data() + static_cast<long>(ki) * plane;
    for (long i = 0; i < plane; ++i) {
      px[i] = uu[i] * vx[i];
      py[i] = uu[i] * vy[i];
    }
  }
  Tensor dfx = ddx(fx, grid);
  Tensor dfy = ddy(fy, grid);
  Tensor out({k, grid.h, grid.w});
  for (long i = 0; i < out.size(); ++i) out[i] = -(dfx[i] + dfy[i]);
  return out;
}

// ============================================================================
// Tape ops
// ============================================================================

ad::Var ddx_op(ad::Graph& g, ad::Var f, const GridSpec& grid) {
  Tensor out = ddx(g.val(f), grid);
  GridSpec gs = grid;
  return g.make(std::move(out), {f}, [f, gs](ad::Graph& gg, int self) {
    if (Tensor* gf = gg.grad_buffer(f)) *gf += ddx_adjoint(gg.grad_at(self), gs);
  });
}

ad::Var ddy_op(ad::Graph& g, ad::Var f, const GridSpec& grid) {
  Tensor out = ddy(g.val(f), grid);
  GridSpec gs = grid;
  return g.make(std::move(out), {f}, [f, gs](ad::Graph& gg, int self) {
    if (Tensor* gf = gg.grad_buffer(f)) *gf += ddy_adjoint(gg.grad_at(self), gs);
  });
}

ad::Var spatial_gradient_op(ad::Graph& g, ad::Var u, const GridSpec& grid) {
  Tensor out = spatial_gradient(g.val(u), grid);
  GridSpec gs = grid;
  int k = g.val(u).dim(0);
  return g.make(std::move(out), {u}, [u, gs, k](ad::Graph& gg, int self) {
    const Tensor& gy = gg.grad_at(self);
    long plane = static_cast<long>(gs.h) * gs.w;
    // Split gy back into its ddx / ddy halves and push through the adjoints.
    Tensor gx({k, gs.h, gs.w}), gyy({k, gs.h, gs.w});
    for (int ki = 0; ki < k; ++ki) {
      std::memcpy(gx.data() + ki * plane, gy.data() + (2L * ki) * plane, sizeof(double) * plane);
      std::memcpy(gyy.data() + ki * plane, gy.data() + (2L * ki + 1) * plane,
                  sizeof(double) * plane);
    }
    if (Tensor* gu = gg.grad_buffer(u)) {
      *gu += ddx_adjoint(gx, gs);
      *gu += ddy_adjoint(gyy, gs);
    }
  });
}

ad::Var advection_tendency_op(ad::Graph& g, ad::Var u, ad::Var v, const GridSpec& grid) {
  Tensor out = advection_tendency(g.val(u), g.val(v), grid);
  GridSpec gs = grid;
  return g.make(std::move(out), {u, v}, [u, v, gs](ad::Graph& gg, int self) {
    const Tensor& gy = gg.grad_at(self);
    const Tensor& uv = gg.val(u);
    const Tensor& vv = gg.val(v);
    int k = uv.dim(0);
    long plane = static_cast<long>(gs.h) * gs.w;
    // out = -(Dx Fx + Dy Fy): pull gy through the flux derivatives first.
    Tensor dfx = ddx_adjoint(gy, gs);
    Tensor dfy = ddy_adjoint(gy, gs);
    dfx *= -1.0;
    dfy *= -1.0;
    Tensor* gu = gg.grad_buffer(u);
    Tensor* gv = gg.grad_buffer(v);
    for (int ki = 0; ki < k; ++ki) {
      const double* uu = uv.data() + static_cast<long>(ki) * plane;
      const double* vx = vv.data() + (2L * ki) * plane;
      const double* vy = vv.data() + (2L * ki + 1) * plane;
      const double* ax = dfx.data() + static_cast<long>(ki) * plane;
      const double* ay = dfy.data() + static_cast<long>(ki) * plane;
      if (gu) {
        double* dst = gu->data() + static_cast<long>(ki) * plane;
        for (long i = 0; i < plane; ++i) dst[i] += ax[i] * vx[i] + ay[i] * vy[i];
      }
      if (gv) {
        double* dvx = gv->data() + (2L * ki) * plane;
        double* dvy = gv->data() + (2L * ki + 1) * plane;
        for (long i = 0; i < plane; ++i) {
          dvx[i] += ax[i] * uu[i];
          dvy[i] += ay[i] * uu[i];
        }
      }
    }
  });
}

// ============================================================================
// Regions
// ============================================================================

RegionSpec RegionSpec::global() { return {"global", -90.0, 90.0, 0.0, 360.0, 2}; }
RegionSpec RegionSpec::north_america() { return {"north_america", 15.0, 65.0, 220.0, 300.0, 2}; }
RegionSpec RegionSpec::south_america() { return {"south_america", -55.0, 20.0, 270.0, 330.0, 2}; }
RegionSpec RegionSpec::australia() { return {"australia", -50.0, 10.0, 100.0, 180.0, 2}; }

RegionSpec RegionSpec::by_name(const std::string& name) {
  if (name == "global") return global();
  if (name == "north_america") return north_america();
  if (name == "south_america") return south_america();
  if (name == "australia") return australia();
  throw ConfigError("unknown region '" + name +
                    "' (global|north_america|south_america|australia)");
}

RegionSelection select_region(const GridSpec& grid, const RegionSpec& region) {
  if (region.patch_align < 1) throw ConfigError("region patch_align must be >= 1");
  RegionSelection sel;
  for (int i = 0; i < grid.h; ++i)
    if (grid.lat_deg[i] >= region.lat_lo && grid.lat_deg[i] < region.lat_hi)
      sel.lat_idx.push_back(i);
  for (int j = 0; j < grid.w; ++j)
    if (grid.lon_deg[j] >= region.lon_lo && grid.lon_deg[j] < region.lon_hi)
      sel.lon_idx.push_back(j);
  if (sel.lat_idx.empty() || sel.lon_idx.empty())
    throw RegionError("region '" + region.name + "' selects no cells on this grid");
  // Selected centers are contiguous on a uniform axis; trim the high end so
  // both extents are multiples of the patch alignment.
  while (sel.lat_idx.size() % region.patch_align) sel.lat_idx.pop_back();
  while (sel.lon_idx.size() % region.patch_align) sel.lon_idx.pop_back();
  if (sel.lat_idx.empty() || sel.lon_idx.empty())
    throw RegionError("region '" + region.name + "' is smaller than the patch alignment");

  GridSpec sub;
  sub.h = static_cast<int>(sel.lat_idx.size());
  sub.w = static_cast<int>(sel.lon_idx.size());
  for (int i : sel.lat_idx) sub.lat_deg.push_back(grid.lat_deg[i]);
  for (int j : sel.lon_idx) sub.lon_deg.push_back(grid.lon_deg[j]);
  sub.dx = grid.dx;
  sub.dy = grid.dy;
  sub.lat_policy = grid.lat_policy == EdgePolicy::periodic && sub.h == grid.h
                       ? EdgePolicy::periodic
                       : EdgePolicy::clamp;
  sub.lon_policy = grid.lon_policy == EdgePolicy::periodic && sub.w == grid.w
                       ? EdgePolicy::periodic
                       : EdgePolicy::clamp;
  if (sub.lat_policy != EdgePolicy::periodic && grid.lat_policy != EdgePolicy::periodic)
    sub.lat_policy = grid.lat_policy;
  sub.validate();
  sel.grid = std::move(sub);
  return sel;
}

Tensor extract_region(const Tensor& field, const RegionSelection& sel) {
  if (field.rank() != 3 && field.rank() != 4)
    throw ShapeError("extract_region: field must be (K,H,W) or (N,K,H,W)");
  int rh = static_cast<int>(sel.lat_idx.size());
  int rw = static_cast<int>(sel.lon_idx.size());
  int fh = field.dim(field.rank() - 2);
  int fw = field.dim(field.rank() - 1);
  for (int i : sel.lat_idx)
    if (i < 0 || i >= fh) throw ShapeError("extract_region: latitude index out of range");
  for (int j : sel.lon_idx)
    if (j < 0 || j >= fw) throw ShapeError("extract_region: longitude index out of range");
  long lead = field.size() / (static_cast<long>(fh) * fw);
  std::vector<int> shape = field.shape();
  shape[field.rank() - 2] = rh;
  shape[field.rank() - 1] = rw;
  Tensor out(shape);
  for (long l = 0; l < lead; ++l) {
    const double* src = field.data() + l * fh * fw;
    double* dst = out.data() + l * rh * rw;
    for (int i = 0; i < rh; ++i)
      for (int j = 0; j < rw; ++j)
        dst[static_cast<long>(i) * rw + j] =
            src[static_cast<long>(sel.lat_idx[i]) * fw + sel.lon_idx[j]];
  }
  return out;
}

}  // namespace fluxcast
