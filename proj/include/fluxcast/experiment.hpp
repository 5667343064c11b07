#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fluxcast/era5.hpp"
#include "fluxcast/evaluation.hpp"

namespace fluxcast {

// ============================================================================
// Data sources
// ============================================================================

/// Hourly reanalysis ingest parameters: the directory of per-channel files,
/// the catalog to read, and the named time windows.
struct Era5Data {
  std::string dir;
  VariableCatalog catalog;
  int n_leads = 6;
  int stride = 1;
  bool with_history = true;
  std::string train_split = "train";
  std::string val_split;  // empty: no held-out window
};

/// Pre-generated dataset files.
struct FileData {
  std::string train_path;
  std::string val_path;  // empty: no held-out file
};

struct DataConfig {
  std::string kind = "synthetic";  // synthetic | era5 | file
  SynthConfig synth;
  double val_fraction = 0.0;  // synthetic: tail share held out for validation
  Era5Data era5;
  FileData file;

  void validate() const;
};

// ============================================================================
// Experiment configuration
// ============================================================================

/// Everything one run needs, parsed from a single JSON file with defaults
/// filled in, dotted-path overrides applied, and unknown fields rejected by
/// path. The bundle section stays a patch until the data source fixes the
/// grid and channel count; bundle_for() then resolves it.
struct ExperimentConfig {
  uint64_t seed = 0;
  std::string out_dir = "runs/exp";
  std::string region = "global";
  DataConfig data;
  nlohmann::json bundle_patch = nlohmann::json::object();
  SolverConfig solver;
  OptimConfig optim;
  LossConfig loss;
  EvalOptions eval;

  /// Every check that needs no data: section invariants, region name, and
  /// for the synthetic kind (whose geometry is known up front) the fully
  /// resolved bundle.
  void validate() const;

  /// Desk default for (channels, grid, seed) with the bundle patch merged on
  /// top, geometry stamped, and the result validated.
  BundleConfig bundle_for(const GridSpec& grid, int channels) const;

  /// The resolved configuration as one reproducible document. Passing the
  /// materialized bundle records it fully; otherwise the patch is kept.
  nlohmann::json snapshot(const BundleConfig* resolved = nullptr) const;
};

/// Strict parse: defaults merged per section, every user-supplied key checked
/// against the schema, section errors reported with their field path.
ExperimentConfig parse_experiment_config(const nlohmann::json& j);

/// "a.b.c=value" assignments onto the raw JSON tree. Values parse as JSON
/// when they can (numbers, booleans, arrays) and fall back to strings.
nlohmann::json apply_overrides(nlohmann::json j, const std::vector<std::string>& dotted);

/// Read the file, apply overrides, parse, validate.
ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::vector<std::string>& overrides = {});

// ============================================================================
// Materialization
// ============================================================================

struct ExperimentData {
  Dataset train;
  std::optional<Dataset> val;
};

/// Generate or load the datasets the config describes. Synthetic validation
/// splits re-fit the normalization statistics on the training portion only.
ExperimentData build_datasets(const ExperimentConfig& cfg);

/// Create the run directory (parents included) and write the snapshot into
/// <run_dir>/config.json.
void write_snapshot(const std::string& run_dir, const nlohmann::json& snapshot);

}  // namespace fluxcast
