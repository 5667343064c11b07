#pragma once

#include <string>

#include "fluxcast/datasets.hpp"

namespace fluxcast {

/// Absolute hours since 1979-01-01T00Z, the time origin of every ingested
/// archive. Proleptic Gregorian; month is 1..12, day 1..31.
double hours_since_epoch(int year, int month, int day, int hour = 0);

/// Half-open t0 window [lo, hi) in epoch hours for the conventional archive
/// splits: train 1979..2015, val 2016, test 2017..2018.
struct SplitRange {
  double lo = 0.0;
  double hi = 0.0;
};
SplitRange era5_split_range(const std::string& name);

/// Windowing parameters for archive ingestion. The t0 range is half-open in
/// epoch hours; every window additionally needs targets (and the previous
/// frame when with_history) inside the file's coverage.
struct Era5Config {
  double t_lo_hours = 0.0;
  double t_hi_hours = 0.0;
  int n_leads = 6;
  int stride = 1;  // hours between consecutive t0
  bool with_history = false;

  void validate() const;
};

void to_json(nlohmann::json& j, const Era5Config& c);
void from_json(const nlohmann::json& j, Era5Config& c);

/// Reads one archive directory holding a self-describing array file per
/// catalog channel, named "<channel_name>.nc". Inside each file the payload
/// is a (T,H,W) dataset called either the channel name or the bare variable
/// name, with coordinate datasets "time" (epoch hours), "lat" and "lon"
/// (degrees); constant channels may instead store a plain (H,W) dataset.
/// Float payloads are widened to double on read.
///
/// The time axis must be strictly hourly over its whole extent and identical
/// across channels; violations raise an ingestion error naming the offending
/// variable. Every sample window must lie inside the coverage. An empty t0
/// range yields an empty dataset.
Dataset load_era5_subset(const std::string& dir, const VariableCatalog& catalog,
                         const Era5Config& cfg);

}  // namespace fluxcast
