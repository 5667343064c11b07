#include "fluxcast/experiment.hpp"

#include <cstring>
#include <fstream>

#include "harness.hpp"
#include "oracles.hpp"

using namespace fluxcast;
using harness::record;

namespace {

void default_checks() {
  ExperimentConfig cfg = parse_experiment_config(nlohmann::json::object());
  record("empty document yields the defaults",
         cfg.seed == 0 && cfg.region == "global" && cfg.data.kind == "synthetic" &&
             cfg.optim.base_lr == 5e-4 && cfg.bundle_patch.empty());
  cfg.validate();
  record("default config validates", true);

  ExperimentConfig seeded = parse_experiment_config({{"seed", 7}});
  record("experiment seed flows into the sections",
         seeded.seed == 7 && seeded.data.synth.seed == 7 && seeded.optim.seed == 7);

  ExperimentConfig pinned =
      parse_experiment_config({{"seed", 7}, {"data", {{"synth", {{"seed", 3}}}}}});
  record("an explicit section seed wins", pinned.seed == 7 && pinned.data.synth.seed == 3);
}

void rejection_checks() {
  bool threw = false;
  try {
    parse_experiment_config({{"optim", {{"learning_rate", 0.001}}}});
  } catch (const ConfigError& e) {
    threw = std::string(e.what()).find("optim.learning_rate") != std::string::npos;
  }
  record("unknown fields are rejected by path", threw);

  threw = false;
  try {
    parse_experiment_config({{"optim", {{"epochs", "many"}}}});
  } catch (const ConfigError& e) {
    threw = std::string(e.what()).find("optim") != std::string::npos;
  }
  record("wrong types name their section", threw);

  threw = false;
  try {
    ExperimentConfig cfg = parse_experiment_config({{"region", "atlantis"}});
    cfg.validate();
  } catch (const ConfigError&) {
    threw = true;
  }
  record("unknown region is refused", threw);

  threw = false;
  try {
    ExperimentConfig cfg =
        parse_experiment_config({{"bundle", {{"source", {{"arch", "mlp"}}}}}});
    cfg.validate();
  } catch (const ConfigError&) {
    threw = true;
  }
  record("unknown source architecture is refused", threw);

  threw = false;
  try {
    ExperimentConfig cfg = parse_experiment_config({{"data", {{"kind", "oracle"}}}});
    cfg.validate();
  } catch (const ConfigError&) {
    threw = true;
  }
  record("unknown data kind is refused", threw);
}

void override_checks() {
  nlohmann::json base = {{"seed", 1}, {"optim", {{"epochs", 2}}}};
  nlohmann::json j = apply_overrides(
      base, {"optim.base_lr=0.001", "region=australia", "data.synth.samples=12", "seed=9"});
  ExperimentConfig cfg = parse_experiment_config(j);
  record("overrides reach nested fields",
         cfg.optim.base_lr == 0.001 && cfg.data.synth.samples == 12 && cfg.optim.epochs == 2);
  record("overrides win over the file", cfg.seed == 9);
  record("bare words become strings", cfg.region == "australia");

  bool threw = false;
  try {
    apply_overrides(base, {"justapath"});
  } catch (const ConfigError&) {
    threw = true;
  }
  record("missing assignment is refused", threw);

  threw = false;
  try {
    apply_overrides(base, {"seed.sub=1"});
  } catch (const ConfigError&) {
    threw = true;
  }
  record("overriding through a scalar is refused", threw);
}

void bundle_checks() {
  ExperimentConfig cfg = parse_experiment_config(
      {{"seed", 5},
       {"bundle",
        {{"velocity", {{"plan", "u_only"}}}, {"advection", {{"backbone_enabled", false}}}}}});
  GridSpec grid = GridSpec::uniform_global(8, 16);
  BundleConfig b = cfg.bundle_for(grid, 3);
  record("patch lands on the desk default",
         b.velocity.plan == VelocityPlan::u_only && !b.advection.backbone_enabled &&
             b.source.arch != SourceArch::none);
  record("geometry and seed are stamped",
         b.channels == 3 && b.grid.h == 8 && b.grid.w == 16 && b.seed == 5);

  ExperimentConfig with_seed =
      parse_experiment_config({{"seed", 5}, {"bundle", {{"seed", 11}}}});
  record("an explicit bundle seed wins", with_seed.bundle_for(grid, 2).seed == 11);
}

void snapshot_checks() {
  nlohmann::json doc = {{"seed", 4},
                        {"out_dir", "/tmp/fxexp_run"},
                        {"data", {{"synth", {{"samples", 6}, {"h", 8}, {"w", 16}, {"k", 1}}}}},
                        {"bundle", {{"velocity", {{"plan", "u_only"}}}}}};
  ExperimentConfig cfg = parse_experiment_config(doc);
  cfg.validate();
  GridSpec grid = GridSpec::uniform_global(8, 16);
  BundleConfig resolved = cfg.bundle_for(grid, 1);

  nlohmann::json snap = cfg.snapshot(&resolved);
  ExperimentConfig back = parse_experiment_config(snap);
  back.validate();
  record("snapshot reparses and validates",
         back.seed == 4 && back.data.synth.samples == 6 && back.data.synth.seed == 4);

  BundleConfig again = back.bundle_for(grid, 1);
  record("snapshot pins the resolved bundle",
         nlohmann::json(again) == nlohmann::json(resolved));

  Dataset a = build_datasets(cfg).train;
  Dataset b = build_datasets(back).train;
  record("snapshot regenerates the same data",
         a.samples.size() == b.samples.size() &&
             std::memcmp(a.samples[0].u0.data(), b.samples[0].u0.data(),
                         static_cast<size_t>(a.samples[0].u0.size()) * sizeof(double)) == 0);
}

void dataset_checks() {
  nlohmann::json doc = {
      {"seed", 13},
      {"data",
       {{"synth", {{"samples", 10}, {"h", 8}, {"w", 16}, {"k", 1}}}, {"val_fraction", 0.3}}}};
  ExperimentConfig cfg = parse_experiment_config(doc);
  cfg.validate();
  ExperimentData data = build_datasets(cfg);
  record("validation tail is split off",
         data.train.samples.size() == 7 && data.val && data.val->samples.size() == 3);
  record("splits are tagged", data.train.meta["split"] == "train" &&
                                  data.val->meta["split"] == "val");
  record("held-out stats are the training stats",
         data.val->stats.mean == data.train.stats.mean &&
             data.val->stats.stddev == data.train.stats.stddev);

  // The tail must be the same samples a full generation produces.
  SynthConfig full_cfg = cfg.data.synth;
  Dataset full = make_synthetic_dataset(full_cfg);
  record("the split tail matches the full generation bitwise",
         std::memcmp(data.val->samples[0].u0.data(), full.samples[7].u0.data(),
                     static_cast<size_t>(full.samples[7].u0.size()) * sizeof(double)) == 0);

  // Training stats are refit on the head, so they differ from the full fit.
  record("training stats are refit on the head",
         data.train.stats.mean[0] != full.stats.mean[0]);

  ExperimentConfig no_val = parse_experiment_config(
      {{"data", {{"synth", {{"samples", 4}, {"h", 8}, {"w", 16}, {"k", 1}}}}}});
  record("zero fraction keeps everything for training",
         !build_datasets(no_val).val.has_value());
}

void file_kind_checks() {
  SynthConfig scfg;
  scfg.h = 8;
  scfg.w = 16;
  scfg.k = 1;
  scfg.n_leads = 2;
  scfg.samples = 3;
  scfg.seed = 17;
  Dataset ds = make_synthetic_dataset(scfg);
  save_dataset("/tmp/fxexp_data.h5", ds);

  ExperimentConfig cfg = parse_experiment_config(
      {{"data", {{"kind", "file"}, {"file", {{"train_path", "/tmp/fxexp_data.h5"}}}}}});
  cfg.validate();
  ExperimentData data = build_datasets(cfg);
  record("file kind loads the saved dataset",
         data.train.samples.size() == 3 && !data.val.has_value());

  ExperimentConfig missing = parse_experiment_config(
      {{"data", {{"kind", "file"}, {"file", {{"train_path", "/tmp/fxexp_nope.h5"}}}}}});
  bool threw = false;
  try {
    build_datasets(missing);
  } catch (const DataError&) {
    threw = true;
  }
  record("missing dataset file is a data error", threw);

  bool threw2 = false;
  try {
    ExperimentConfig bad = parse_experiment_config({{"data", {{"kind", "file"}}}});
    bad.validate();
  } catch (const ConfigError&) {
    threw2 = true;
  }
  record("file kind requires a path", threw2);
}

void snapshot_file_checks() {
  ExperimentConfig cfg = parse_experiment_config({{"out_dir", "/tmp/fxexp_run/nested"}});
  write_snapshot(cfg.out_dir, cfg.snapshot());
  std::ifstream in("/tmp/fxexp_run/nested/config.json");
  bool ok = in.good();
  nlohmann::json j;
  if (ok) in >> j;
  record("snapshot file lands in the run directory", ok && j["region"] == "global");
}

}  // namespace

int main() {
  return harness::run("experiment", [] {
    default_checks();
    rejection_checks();
    override_checks();
    bundle_checks();
    snapshot_checks();
    dataset_checks();
    file_kind_checks();
    snapshot_file_checks();
  });
}
