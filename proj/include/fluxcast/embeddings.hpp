#pragma once

#include <array>

#include "fluxcast/grid.hpp"
#include "fluxcast/tensor.hpp"

namespace fluxcast {

// Position and time encodings fed to the learned components. Channel layout
// is fixed and relied on by checkpoints:
//   spatial (6):  sin lat, cos lat, sin lon, cos lon, sin lat * cos lon,
//                 sin lat * sin lon
//   temporal (4): sin 2 pi t, cos 2 pi t, sin 2 pi t / 365, cos 2 pi t / 365
//                 with t in days (diurnal pair first, then annual)
//   combined (34): [spatial, temporal, products s_i * t_j ordered i*4+j]

std::array<double, 6> spatial_encoding_at(double lat_deg, double lon_deg);
std::array<double, 4> temporal_encoding_at(double t_days);

Tensor spatial_encoding(const GridSpec& grid);                     // (6,H,W)
Tensor temporal_encoding(double t_days);                           // (4)
Tensor spatiotemporal_encoding(const GridSpec& grid, double t_days);  // (34,H,W)

inline constexpr int kSpatialChannels = 6;
inline constexpr int kTemporalChannels = 4;
inline constexpr int kSpatioTemporalChannels = 34;

}  // namespace fluxcast
