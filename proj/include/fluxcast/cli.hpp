#pragma once

#include <string>
#include <vector>

#include "fluxcast/experiment.hpp"

namespace fluxcast {

// Command front end over the experiment layer. Every command validates its
// whole config before any compute, writes a config snapshot next to its
// outputs, and is reproducible from that snapshot alone.

/// Generates the configured synthetic dataset and saves it with its config.
/// Requires data.kind == "synthetic".
int cmd_synth(const ExperimentConfig& cfg);

/// Builds datasets and bundle from the config, trains into out_dir (snapshot,
/// history.jsonl, last.h5/best.h5). Zero epochs leaves only the initial
/// checkpoint. A diverged run still keeps its outputs but exits via
/// InstabilityError.
int cmd_train(const ExperimentConfig& cfg, const std::string& resume_from = "");

/// Scores one forecaster on the configured data (the held-out split when one
/// exists, else the training split) and writes scores.csv / scores.json plus
/// an eval_config.json snapshot. forecaster is "model" (needs checkpoint),
/// "persistence", or "oracle" (targets fed back; pins the score floor).
/// lead > 0 restricts the printed summary to that lead and must lie in 1..N.
/// Reads checkpoints and datasets, never rewrites them.
int cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint,
             const std::string& forecaster = "model", int lead = 0);

/// Comparison studies, each writing a table (json + csv) and a chart:
///   velocity-inputs  trains one model per velocity input plan
///   source-arch      trains one model per source architecture
///   dt-interval      analytic time step study, no training
///   stability        learning rate by advection-variant survival matrix
int cmd_ablate(const ExperimentConfig& cfg, const std::string& study);

/// Renders loss curves from run_dir/history.jsonl and field maps of the run's
/// data (plus forecast maps when a checkpoint exists) into out_dir (default:
/// run_dir). An empty history is a data error.
int cmd_plot(const std::string& run_dir, const std::string& out_dir = "");

/// Parses args (no program name), assembles the config from file, the
/// FLUXCAST_SEED variable, and flags in that order (later wins), dispatches,
/// and maps the error taxonomy to exit codes: 0 ok, 2 config, 3 data,
/// 4 instability, 1 anything else.
int cli_main(const std::vector<std::string>& args);
int cli_main(int argc, char** argv);

}  // namespace fluxcast
