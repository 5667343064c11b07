#pragma once

#include <map>
#include <string>
#include <vector>

#include "fluxcast/datasets.hpp"
#include "fluxcast/dynamics.hpp"

namespace fluxcast {

// ============================================================================
// Loss
// ============================================================================

/// Every intermediate step 1..N is supervised. The channel subset only
/// affects reported scores, never the training objective.
struct LossConfig {
  std::vector<std::string> eval_channels;  // empty = every channel

  void validate() const {}
};

void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);

/// Mean over steps, channels and cells of alpha(h) * (pred - target)^2 with
/// the per-row area weights of the grid. Differentiable version for training.
ad::Var multi_task_loss(ad::Graph& g, const std::vector<ad::Var>& preds, const Tensor& targets,
                        const GridSpec& grid);

/// Same contraction on plain arrays, for validation and reporting.
double multi_task_loss_value(const Tensor& preds, const Tensor& targets, const GridSpec& grid);

// ============================================================================
// Schedule and optimizer
// ============================================================================

struct OptimConfig {
  double base_lr = 5e-4;
  double advection_lr = 1e-4;  // rate group 1: the advection correction
  double weight_decay = 1e-5;  // skipped for no-decay parameters
  double lr_floor = 1e-8;      // warmup start and cosine end
  int warmup_steps = 10;
  int epochs = 10;
  int batch_size = 4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const OptimConfig& c);
void from_json(const nlohmann::json& j, OptimConfig& c);

struct LrPair {
  double base = 0.0;
  double advection = 0.0;
};

/// Linear ramp from the floor to the peak over warmup_steps, then cosine back
/// down to the floor at total_steps. Exact at all three junction points; both
/// rates share the shape and differ only in peak.
LrPair lr_schedule(const OptimConfig& opt, long step, long total_steps);

/// Decoupled weight decay Adam over a parameter store. Rate group 1 uses the
/// advection rate; parameters flagged no-decay (positional embeddings) skip
/// the decay term. Moment state follows store creation order.
class AdamW {
 public:
  AdamW(ad::ParamStore& store, OptimConfig opt);

  /// One update from the accumulated gradients. Does not zero them.
  void step(const LrPair& lr);
  long steps_taken() const { return t_; }

  /// Checkpoint plumbing: moments as "opt.m.<param>" / "opt.v.<param>",
  /// step count as "opt.step".
  void export_state(std::map<std::string, Tensor>& extra,
                    std::map<std::string, uint64_t>& extra_u64) const;
  void import_state(const std::map<std::string, Tensor>& extra,
                    const std::map<std::string, uint64_t>& extra_u64);

 private:
  ad::ParamStore* store_;
  OptimConfig opt_;
  long t_ = 0;
  std::vector<Tensor> m_, v_;
};

// ============================================================================
// Training loop
// ============================================================================

struct TrainResult {
  std::vector<nlohmann::json> history;  // one record per optimizer step plus epoch records
  bool stable = true;
  int nan_epoch = -1;  // 1-based epoch of the first non-finite loss
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double best_val_loss = 0.0;
  int best_epoch = -1;  // 1-based; -1 when no validation set was given
  long steps = 0;
};

/// One-stage training: every optimizer step differentiates through the
/// velocity estimate, the unrolled transport solve, and the source correction
/// jointly. Samples are shuffled per epoch by seed and averaged per batch.
/// Inputs and targets are normalized with the training set's stats.
///
/// A non-finite loss ends training with stable=false and the epoch recorded;
/// nothing is thrown. With run_dir set, history lands in history.jsonl and
/// checkpoints in last.h5 / best.h5 (optimizer state included); resume_from
/// restores parameters and optimizer state before the first step.
TrainResult train(const Dataset& train_ds, const Dataset* val_ds, ModelBundle& bundle,
                  const SolverConfig& solver, const OptimConfig& opt, const LossConfig& loss,
                  const std::string& run_dir = "", const std::string& resume_from = "");

// ============================================================================
// Stability matrix
// ============================================================================

struct StabilityCase {
  BundleConfig bundle;
  double base_lr = 5e-4;
  double advection_lr = 1e-4;
};

/// One row of the stability report: which architectures, which rates, whether
/// the run survived, where it died if not, and its rank among survivors.
struct StabilityRecord {
  std::string velocity;
  std::string advection;
  std::string source;
  double base_lr = 0.0;
  double advection_lr = 0.0;
  bool stable = false;
  int nan_epoch = -1;     // 1-based; -1 when stable
  double val_loss = 0.0;  // NaN when diverged before any validation
  int rank = -1;          // 1-based among stable runs; -1 otherwise

  void validate() const;
};

void to_json(nlohmann::json& j, const StabilityRecord& r);
void from_json(const nlohmann::json& j, StabilityRecord& r);

/// Trains each case on identical data and seed, ranks the stable runs by
/// validation loss (train loss when no validation set is given). Divergence
/// is recorded, never asserted.
std::vector<StabilityRecord> stability_matrix(const Dataset& train_ds, const Dataset* val_ds,
                                              const std::vector<StabilityCase>& cases,
                                              const SolverConfig& solver,
                                              const OptimConfig& base_opt,
                                              const LossConfig& loss);

}  // namespace fluxcast
