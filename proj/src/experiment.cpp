#include "fluxcast/experiment.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

namespace fluxcast {

// ============================================================================
// Data config JSON
// ============================================================================

static void to_json(nlohmann::json& j, const Era5Data& d) {
  j = nlohmann::json{{"dir", d.dir},
                     {"catalog", d.catalog},
                     {"n_leads", d.n_leads},
                     {"stride", d.stride},
                     {"with_history", d.with_history},
                     {"train_split", d.train_split},
                     {"val_split", d.val_split}};
}

static void from_json(const nlohmann::json& j, Era5Data& d) {
  d.dir = j.value("dir", std::string{});
  if (j.contains("catalog")) j.at("catalog").get_to(d.catalog);
  d.n_leads = j.value("n_leads", 6);
  d.stride = j.value("stride", 1);
  d.with_history = j.value("with_history", true);
  d.train_split = j.value("train_split", std::string("train"));
  d.val_split = j.value("val_split", std::string{});
}

static void to_json(nlohmann::json& j, const FileData& d) {
  j = nlohmann::json{{"train_path", d.train_path}, {"val_path", d.val_path}};
}

static void from_json(const nlohmann::json& j, FileData& d) {
  d.train_path = j.value("train_path", std::string{});
  d.val_path = j.value("val_path", std::string{});
}

static void to_json(nlohmann::json& j, const DataConfig& d) {
  j = nlohmann::json{{"kind", d.kind},
                     {"synth", d.synth},
                     {"val_fraction", d.val_fraction},
                     {"era5", d.era5},
                     {"file", d.file}};
}

static void from_json(const nlohmann::json& j, DataConfig& d) {
  d.kind = j.value("kind", std::string("synthetic"));
  if (j.contains("synth")) j.at("synth").get_to(d.synth);
  d.val_fraction = j.value("val_fraction", 0.0);
  if (j.contains("era5")) j.at("era5").get_to(d.era5);
  if (j.contains("file")) j.at("file").get_to(d.file);
}

void DataConfig::validate() const {
  if (kind == "synthetic") {
    synth.validate();
    require_config(val_fraction >= 0.0 && val_fraction < 1.0,
                   "config: data.val_fraction must lie in [0, 1)");
  } else if (kind == "era5") {
    require_config(!era5.dir.empty(), "config: data.era5.dir is required");
    require_config(era5.catalog.channels() > 0, "config: data.era5.catalog is empty");
    era5.catalog.validate();
    require_config(era5.n_leads >= 1, "config: data.era5.n_leads must be positive");
    require_config(era5.stride >= 1, "config: data.era5.stride must be positive");
    era5_split_range(era5.train_split);
    if (!era5.val_split.empty()) era5_split_range(era5.val_split);
  } else if (kind == "file") {
    require_config(!file.train_path.empty(), "config: data.file.train_path is required");
  } else {
    throw ConfigError("config: data.kind '" + kind + "' is not synthetic, era5, or file");
  }
}

// ============================================================================
// Parsing
// ============================================================================

namespace {

// A user key with no counterpart in the reference document is a typo; report
// it by its full path. Array contents are not schema-checked here, their
// parsers do their own validation.
void check_known_keys(const nlohmann::json& user, const nlohmann::json& ref,
                      const std::string& path) {
  if (!user.is_object() || !ref.is_object()) return;
  for (auto it = user.begin(); it != user.end(); ++it) {
    std::string here = path.empty() ? it.key() : path + "." + it.key();
    require_config(ref.contains(it.key()), "config: unknown field '" + here + "'");
    check_known_keys(it.value(), ref.at(it.key()), here);
  }
}

template <typename T>
T parse_section(const nlohmann::json& root, const char* key, T defaults) {
  if (!root.contains(key)) return defaults;
  nlohmann::json base = defaults;
  base.merge_patch(root.at(key));
  try {
    return base.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + key + ": " + e.what());
  }
}

nlohmann::json reference_schema() {
  ExperimentConfig d;
  // optional fields serialize only when set; the schema must show them
  d.data.synth.fixed_vx = 0.0;
  d.data.synth.fixed_vy = 0.0;
  nlohmann::json j = d.snapshot();
  // the reference bundle must show every overridable field
  BundleConfig full = BundleConfig::desk_default(2, GridSpec::uniform_global(8, 16), 0);
  j["bundle"] = full;
  return j;
}

}  // namespace

ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  require_config(j.is_object(), "config: the document root must be an object");
  check_known_keys(j, reference_schema(), "");

  ExperimentConfig cfg;
  try {
    cfg.seed = j.value("seed", static_cast<uint64_t>(0));
    cfg.out_dir = j.value("out_dir", std::string("runs/exp"));
    cfg.region = j.value("region", std::string("global"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  // Section seeds default to the experiment seed; an explicit value in the
  // file wins so snapshots replay exactly.
  DataConfig data_defaults;
  data_defaults.synth.seed = cfg.seed;
  OptimConfig optim_defaults;
  optim_defaults.seed = cfg.seed;

  cfg.data = parse_section(j, "data", data_defaults);
  cfg.solver = parse_section(j, "solver", SolverConfig{});
  cfg.optim = parse_section(j, "optim", optim_defaults);
  cfg.loss = parse_section(j, "loss", LossConfig{});
  cfg.eval = parse_section(j, "eval", EvalOptions{});
  cfg.bundle_patch = j.value("bundle", nlohmann::json::object());
  return cfg;
}

void ExperimentConfig::validate() const {
  require_config(!out_dir.empty(), "config: out_dir is required");
  RegionSpec::by_name(region);
  data.validate();
  solver.validate();
  optim.validate();
  loss.validate();
  // Synthetic geometry is known before any compute, so the bundle resolves
  // now; the other kinds resolve once their files fix the grid.
  if (data.kind == "synthetic")
    bundle_for(GridSpec::uniform_global(data.synth.h, data.synth.w), data.synth.k);
}

BundleConfig ExperimentConfig::bundle_for(const GridSpec& grid, int channels) const {
  nlohmann::json bj = BundleConfig::desk_default(channels, grid, seed);
  bj.merge_patch(bundle_patch);
  // geometry always comes from the data source, never from the patch
  bj["grid"] = grid;
  bj["channels"] = channels;
  BundleConfig out;
  try {
    out = bj.get<BundleConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: bundle: ") + e.what());
  }
  out.validate();
  return out;
}

nlohmann::json ExperimentConfig::snapshot(const BundleConfig* resolved) const {
  nlohmann::json j{{"seed", seed},     {"out_dir", out_dir}, {"region", region},
                   {"data", data},     {"solver", solver},   {"optim", optim},
                   {"loss", loss},     {"eval", eval}};
  j["bundle"] = resolved ? nlohmann::json(*resolved) : bundle_patch;
  return j;
}

nlohmann::json apply_overrides(nlohmann::json j, const std::vector<std::string>& dotted) {
  for (const std::string& item : dotted) {
    size_t eq = item.find('=');
    require_config(eq != std::string::npos && eq > 0,
                   "override '" + item + "' is not of the form path=value");
    std::string path = item.substr(0, eq);
    std::string raw = item.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;  // unquoted strings stay strings

    nlohmann::json* node = &j;
    size_t start = 0;
    while (true) {
      size_t dot = path.find('.', start);
      std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
      require_config(!key.empty(), "override '" + item + "' has an empty path segment");
      if (dot == std::string::npos) {
        (*node)[key] = value;
        break;
      }
      if (!node->contains(key)) (*node)[key] = nlohmann::json::object();
      node = &(*node)[key];
      require_config(node->is_object(),
                     "override '" + item + "': '" + path.substr(0, dot) + "' is not an object");
      start = dot + 1;
    }
  }
  return j;
}

ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  require_config(in.good(), "config: cannot read " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: " + path + ": " + e.what());
  }
  ExperimentConfig cfg = parse_experiment_config(apply_overrides(std::move(j), overrides));
  cfg.validate();
  return cfg;
}

// ============================================================================
// Materialization
// ============================================================================

ExperimentData build_datasets(const ExperimentConfig& cfg) {
  ExperimentData out;
  if (cfg.data.kind == "synthetic") {
    Dataset all = make_synthetic_dataset(cfg.data.synth);
    int n_val = static_cast<int>(
        std::floor(static_cast<double>(all.samples.size()) * cfg.data.val_fraction));
    if (n_val == 0) {
      out.train = std::move(all);
      return out;
    }
    int n_train = static_cast<int>(all.samples.size()) - n_val;
    require_config(n_train >= 1, "config: data.val_fraction leaves no training samples");
    Dataset val;
    val.grid = all.grid;
    val.catalog = all.catalog;
    val.meta = all.meta;
    val.meta["split"] = "val";
    val.samples.assign(all.samples.begin() + n_train, all.samples.end());
    all.samples.resize(static_cast<size_t>(n_train));
    all.meta["split"] = "train";
    // statistics describe what training sees, and the held-out tail is
    // normalized with them downstream
    all.stats = fit_norm_stats(all.samples, all.catalog);
    val.stats = all.stats;
    out.train = std::move(all);
    out.val = std::move(val);
  } else if (cfg.data.kind == "era5") {
    auto window = [&](const std::string& split) {
      SplitRange r = era5_split_range(split);
      Era5Config ec;
      ec.t_lo_hours = r.lo;
      ec.t_hi_hours = r.hi;
      ec.n_leads = cfg.data.era5.n_leads;
      ec.stride = cfg.data.era5.stride;
      ec.with_history = cfg.data.era5.with_history;
      return load_era5_subset(cfg.data.era5.dir, cfg.data.era5.catalog, ec);
    };
    out.train = window(cfg.data.era5.train_split);
    if (!cfg.data.era5.val_split.empty()) {
      out.val = window(cfg.data.era5.val_split);
      out.val->stats = out.train.stats;
    }
  } else if (cfg.data.kind == "file") {
    out.train = load_dataset(cfg.data.file.train_path);
    if (!cfg.data.file.val_path.empty()) out.val = load_dataset(cfg.data.file.val_path);
  } else {
    throw ConfigError("config: data.kind '" + cfg.data.kind + "' is not synthetic, era5, or file");
  }

  if (out.val) {
    require_data(out.val->grid.same_geometry(out.train.grid),
                 "config: validation grid does not match the training grid");
    require_data(out.val->catalog.channels() == out.train.catalog.channels(),
                 "config: validation catalog does not match the training catalog");
  }
  return out;
}

void write_snapshot(const std::string& run_dir, const nlohmann::json& snapshot) {
  std::error_code ec;
  std::filesystem::create_directories(run_dir, ec);
  require_data(!ec, "config: cannot create run directory " + run_dir);
  std::ofstream outf(run_dir + "/config.json");
  require_data(outf.good(), "config: cannot write " + run_dir + "/config.json");
  outf << snapshot.dump(2) << "\n";
}

}  // namespace fluxcast
