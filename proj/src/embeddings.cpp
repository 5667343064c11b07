#include "fluxcast/embeddings.hpp"

#include <cmath>

namespace fluxcast {

static constexpr double kTwoPi = 6.283185307179586476925286766559;
static constexpr double kDegToRad = 3.14159265358979323846 / 180.0;

std::array<double, 6> spatial_encoding_at(double lat_deg, double lon_deg) {
  double la = lat_deg * kDegToRad;
  double lo = lon_deg * kDegToRad;
  double sla = std::sin(la), cla = std::cos(la);
  double slo = std::sin(lo), clo = std::cos(lo);
  return {sla, cla, slo, clo, sla * clo, sla * slo};
}

std::array<double, 4> temporal_encoding_at(double t_days) {
  return {std::sin(kTwoPi * t_days), std::cos(kTwoPi * t_days),
          std::sin(kTwoPi * t_days / 365.0), std::cos(kTwoPi * t_days / 365.0)};
}

Tensor spatial_encoding(const GridSpec& grid) {
  Tensor out({kSpatialChannels, grid.h, grid.w});
  for (int h = 0; h < grid.h; ++h)
    for (int w = 0; w < grid.w; ++w) {
      auto e = spatial_encoding_at(grid.lat_deg[h], grid.lon_deg[w]);
      for (int c = 0; c < kSpatialChannels; ++c) out.at(c, h, w) = e[c];
    }
  return out;
}

Tensor temporal_encoding(double t_days) {
  auto e = temporal_encoding_at(t_days);
  Tensor out({kTemporalChannels});
  for (int c = 0; c < kTemporalChannels; ++c) out[c] = e[c];
  return out;
}

Tensor spatiotemporal_encoding(const GridSpec& grid, double t_days) {
  Tensor out({kSpatioTemporalChannels, grid.h, grid.w});
  auto t = temporal_encoding_at(t_days);
  for (int h = 0; h < grid.h; ++h)
    for (int w = 0; w < grid.w; ++w) {
      auto s = spatial_encoding_at(grid.lat_deg[h], grid.lon_deg[w]);
      int c = 0;
      for (int i = 0; i < kSpatialChannels; ++i) out.at(c++, h, w) = s[i];
      for (int j = 0; j < kTemporalChannels; ++j) out.at(c++, h, w) = t[j];
      for (int i = 0; i < kSpatialChannels; ++i)
        for (int j = 0; j < kTemporalChannels; ++j) out.at(c++, h, w) = s[i] * t[j];
    }
  return out;
}

}  // namespace fluxcast
