#include "fluxcast/era5.hpp"

#include <algorithm>
#include <cmath>

#include "fluxcast/h5io.hpp"

namespace fluxcast {

double hours_since_epoch(int year, int month, int day, int hour) {
  require_config(month >= 1 && month <= 12 && day >= 1 && day <= 31, "bad calendar date");
  // days_from_civil, Howard Hinnant's algorithm
  auto civil = [](int y, int m, int d) -> long {
    y -= m <= 2;
    long era = (y >= 0 ? y : y - 399) / 400;
    unsigned yoe = static_cast<unsigned>(y - era * 400);
    unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<long>(doe) - 719468;
  };
  long days = civil(year, month, day) - civil(1979, 1, 1);
  return static_cast<double>(days) * 24.0 + hour;
}

SplitRange era5_split_range(const std::string& name) {
  if (name == "train") return {hours_since_epoch(1979, 1, 1), hours_since_epoch(2016, 1, 1)};
  if (name == "val") return {hours_since_epoch(2016, 1, 1), hours_since_epoch(2017, 1, 1)};
  if (name == "test") return {hours_since_epoch(2017, 1, 1), hours_since_epoch(2019, 1, 1)};
  throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

void Era5Config::validate() const {
  require_config(n_leads >= 1, "ingest: need at least one lead");
  require_config(stride >= 1, "ingest: stride must be positive");
  require_config(t_hi_hours >= t_lo_hours, "ingest: empty-or-negative time range");
}

void to_json(nlohmann::json& j, const Era5Config& c) {
  j = {{"t_lo_hours", c.t_lo_hours},
       {"t_hi_hours", c.t_hi_hours},
       {"n_leads", c.n_leads},
       {"stride", c.stride},
       {"with_history", c.with_history}};
}

void from_json(const nlohmann::json& j, Era5Config& c) {
  j.at("t_lo_hours").get_to(c.t_lo_hours);
  j.at("t_hi_hours").get_to(c.t_hi_hours);
  j.at("n_leads").get_to(c.n_leads);
  j.at("stride").get_to(c.stride);
  j.at("with_history").get_to(c.with_history);
}

namespace {

struct ChannelData {
  Tensor frames;  // (T,H,W), or (1,H,W) broadcast for constants
  bool constant = false;
};

}  // namespace

Dataset load_era5_subset(const std::string& dir, const VariableCatalog& catalog,
                         const Era5Config& cfg) {
  catalog.validate();
  cfg.validate();
  require_config(catalog.channels() >= 1, "ingest: empty catalog");

  const int k = catalog.channels();
  std::vector<ChannelData> data(k);
  Tensor time_axis;
  Tensor lat, lon;
  std::string time_owner;
  int grid_h = -1, grid_w = -1;

  for (int c = 0; c < k; ++c) {
    const std::string var = catalog.vars[c].channel_name();
    const std::string path = dir + "/" + var + ".nc";
    h5::File f = [&] {
      try {
        return h5::File::open_ro(path);
      } catch (const DataError&) {
        throw IngestError("variable '" + var + "': cannot open " + path);
      }
    }();
    // payload under the channel name, or the bare variable name as a fallback
    std::string ds_name = var;
    if (!h5::has_dataset(f, ds_name)) ds_name = catalog.vars[c].name;
    if (!h5::has_dataset(f, ds_name))
      throw IngestError("variable '" + var + "': no payload dataset in " + path);
    Tensor payload = h5::read_array_path(f, ds_name);

    if (payload.rank() == 2) {
      require_data(catalog.vars[c].kind == VarKind::constant,
                   "variable '" + var + "': time-free payload on a non-constant channel");
      Tensor t3({1, payload.dim(0), payload.dim(1)});
      std::copy(payload.data(), payload.data() + payload.size(), t3.data());
      data[c].frames = std::move(t3);
      data[c].constant = true;
    } else {
      if (payload.rank() != 3)
        throw ShapeError("variable '" + var + "': payload is " + payload.shape_str() +
                         ", expected (time,lat,lon)");
      data[c].frames = std::move(payload);
      // shared hourly time axis
      if (!h5::has_dataset(f, "time"))
        throw IngestError("variable '" + var + "': missing time coordinate");
      Tensor t = h5::read_array_path(f, "time");
      if (t.rank() != 1 || t.dim(0) != data[c].frames.dim(0))
        throw IngestError("variable '" + var + "': time axis length " + t.shape_str() +
                          " does not match payload " + data[c].frames.shape_str());
      for (long i = 1; i < t.size(); ++i)
        if (std::abs(t[i] - t[i - 1] - 1.0) > 1e-6)
          throw IngestError("variable '" + var + "': non-hourly gap after t=" +
                            std::to_string(t[i - 1]) + " h");
      if (time_axis.empty()) {
        time_axis = std::move(t);
        time_owner = var;
      } else {
        bool same = t.size() == time_axis.size();
        for (long i = 0; same && i < t.size(); ++i) same = t[i] == time_axis[i];
        if (!same)
          throw IngestError("variable '" + var + "': time axis differs from '" + time_owner +
                            "'");
      }
    }

    const int h = data[c].frames.dim(1), w = data[c].frames.dim(2);
    if (grid_h < 0) {
      grid_h = h;
      grid_w = w;
      if (h5::has_dataset(f, "lat")) lat = h5::read_array_path(f, "lat");
      if (h5::has_dataset(f, "lon")) lon = h5::read_array_path(f, "lon");
    } else if (h != grid_h || w != grid_w) {
      throw ShapeError("variable '" + var + "': grid " + std::to_string(h) + "x" +
                       std::to_string(w) + " does not match " + std::to_string(grid_h) + "x" +
                       std::to_string(grid_w));
    }
  }
  require_data(!time_axis.empty(), "ingest: catalog holds only constant channels");

  Dataset ds;
  if (!lat.empty() && !lon.empty()) {
    require_data(lat.rank() == 1 && lat.dim(0) == grid_h && lon.rank() == 1 &&
                     lon.dim(0) == grid_w,
                 "ingest: coordinate arrays do not match the payload grid");
    ds.grid = GridSpec::uniform_global(grid_h, grid_w);
    ds.grid.lat_deg.assign(lat.data(), lat.data() + lat.size());
    ds.grid.lon_deg.assign(lon.data(), lon.data() + lon.size());
  } else {
    ds.grid = GridSpec::uniform_global(grid_h, grid_w);
  }
  ds.grid.validate();
  ds.catalog = catalog;
  ds.meta = {{"kind", "era5"}, {"dir", dir}, {"config", cfg}};

  // t0 candidates: hourly lattice points of [t_lo, t_hi) whose full window
  // (history frame through lead N) lies inside the file coverage. The range
  // is clipped to coverage; gaps inside coverage were rejected above.
  const double file_lo = time_axis[0];
  const double file_hi = time_axis[time_axis.size() - 1];
  const int hist = cfg.with_history ? 1 : 0;
  double first_t0 = std::max(cfg.t_lo_hours, file_lo + hist);
  first_t0 = file_lo + std::ceil(first_t0 - file_lo);  // snap onto the axis
  for (double t0 = first_t0; t0 < cfg.t_hi_hours && t0 + cfg.n_leads <= file_hi;
       t0 += cfg.stride) {
    const long i0 = std::lround(t0 - file_lo);
    TrajectorySample s;
    s.t0_hours = t0;
    s.u0 = Tensor({k, grid_h, grid_w});
    s.targets = Tensor({cfg.n_leads, k, grid_h, grid_w});
    if (hist) {
      s.u_prev = Tensor({k, grid_h, grid_w});
      s.dt_prev_hours = 1.0;
    }
    const long cells = static_cast<long>(grid_h) * grid_w;
    for (int c = 0; c < k; ++c) {
      auto frame = [&](long idx) {
        return data[c].frames.data() + (data[c].constant ? 0 : idx) * cells;
      };
      std::copy(frame(i0), frame(i0) + cells, s.u0.data() + c * cells);
      if (hist) std::copy(frame(i0 - 1), frame(i0 - 1) + cells, s.u_prev.data() + c * cells);
      for (int n = 1; n <= cfg.n_leads; ++n)
        std::copy(frame(i0 + n), frame(i0 + n) + cells,
                  s.targets.data() + (static_cast<long>(n - 1) * k + c) * cells);
    }
    ds.samples.push_back(std::move(s));
  }
  if (!ds.samples.empty()) ds.stats = fit_norm_stats(ds.samples, ds.catalog);
  ds.validate();
  return ds;
}

}  // namespace fluxcast
