#pragma once

#include <string>
#include <vector>

#include "fluxcast/tape.hpp"
#include "fluxcast/tensor.hpp"

namespace fluxcast {

/// Boundary handling for the difference stencils along one axis.
///   periodic: wrap-around (the default along longitude)
///   clamp:    one-sided first-order differences at the two edge rows
///   reflect:  mirror ghost cells about the edge cell (edge derivative is 0)
enum class EdgePolicy { periodic, clamp, reflect };

EdgePolicy edge_policy_from_string(const std::string& s);
std::string to_string(EdgePolicy p);

/// Regular lat/lon grid. Latitudes ascend and stay strictly inside the poles;
/// longitudes ascend within [0, 360). dx/dy are the stencil spacings, one
/// grid cell by default.
struct GridSpec {
  int h = 0;
  int w = 0;
  std::vector<double> lat_deg;
  std::vector<double> lon_deg;
  double dx = 1.0;
  double dy = 1.0;
  EdgePolicy lon_policy = EdgePolicy::periodic;
  EdgePolicy lat_policy = EdgePolicy::clamp;

  // Cell centers of an h x w global grid; h=32, w=64 gives the standard
  // 5.625-degree layout (latitudes -87.1875 + 5.625 k, longitudes 5.625 j).
  static GridSpec uniform_global(int h, int w);
  static GridSpec global_5p625() { return uniform_global(32, 64); }

  void validate() const;
  bool same_geometry(const GridSpec& o) const;
};

/// Scalar fields at one instant, (K,H,W), with the absolute time in hours.
struct FieldState {
  Tensor u;
  double t_hours = 0.0;
};

/// Velocity components interleaved per channel: (2K,H,W) ordered
/// [vx_1, vy_1, vx_2, vy_2, ...]; x is along longitude, y along latitude.
struct VelocityField {
  Tensor v;
};

// ============================================================================
// Area weighting
// ============================================================================

// Per-row weights alpha(h) = cos(lat_h) / mean_h' cos(lat_h'); mean over the
// grid is exactly 1.
Tensor latitude_weights(const GridSpec& grid);

// ============================================================================
// Stencils (pure). Centered second-order differences; channelwise on (C,H,W).
// ============================================================================

// d/dx along the last axis (longitude), using grid.lon_policy and grid.dx.
Tensor ddx(const Tensor& f, const GridSpec& grid);
// d/dy along the middle axis (latitude), using grid.lat_policy and grid.dy.
Tensor ddy(const Tensor& f, const GridSpec& grid);
// Exact adjoints (transposes) of the above; used by the tape ops and the
// operator self-tests.
Tensor ddx_adjoint(const Tensor& f, const GridSpec& grid);
Tensor ddy_adjoint(const Tensor& f, const GridSpec& grid);

// (K,H,W) -> (2K,H,W), channel 2k = du_k/dx, channel 2k+1 = du_k/dy.
Tensor spatial_gradient(const Tensor& u, const GridSpec& grid);

// (2K,H,W) velocity -> (K,H,W) divergence per channel pair.
Tensor divergence(const Tensor& v, const GridSpec& grid);

// Flux-form advection tendency -div(u v) per channel: (K,H,W) x (2K,H,W) ->
// (K,H,W). Rejects non-finite inputs with a located diagnostic.
Tensor advection_tendency(const Tensor& u, const Tensor& v, const GridSpec& grid);

// ============================================================================
// Stencils (tape ops)
// ============================================================================

ad::Var ddx_op(ad::Graph& g, ad::Var f, const GridSpec& grid);
ad::Var ddy_op(ad::Graph& g, ad::Var f, const GridSpec& grid);
ad::Var spatial_gradient_op(ad::Graph& g, ad::Var u, const GridSpec& grid);
ad::Var advection_tendency_op(ad::Graph& g, ad::Var u, ad::Var v, const GridSpec& grid);

// ============================================================================
// Regions
// ============================================================================

/// Half-open box in degrees. Cell centers inside [lo,hi) are selected, then
/// each axis is trimmed from the high end to a multiple of patch_align so the
/// result stays usable by patch-based models.
struct RegionSpec {
  std::string name;
  double lat_lo = -90.0, lat_hi = 90.0;
  double lon_lo = 0.0, lon_hi = 360.0;
  int patch_align = 2;

  static RegionSpec global();
  static RegionSpec north_america();
  static RegionSpec south_america();
  static RegionSpec australia();
  static RegionSpec by_name(const std::string& name);
};

struct RegionSelection {
  std::vector<int> lat_idx;
  std::vector<int> lon_idx;
  GridSpec grid;  // geometry of the extracted block
};

RegionSelection select_region(const GridSpec& grid, const RegionSpec& region);

// Gather a (K,H,W) or (N,K,H,W) field onto the selected block.
Tensor extract_region(const Tensor& field, const RegionSelection& sel);

}  // namespace fluxcast
