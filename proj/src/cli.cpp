#include "fluxcast/cli.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "fluxcast/dynamics.hpp"
#include "fluxcast/evaluation.hpp"
#include "fluxcast/plotting.hpp"
#include "fluxcast/training.hpp"

namespace fs = std::filesystem;

namespace fluxcast {

namespace {

uint64_t parse_env_seed(const char* s) {
  char* end = nullptr;
  errno = 0;
  unsigned long long v = std::strtoull(s, &end, 10);
  require_config(end != s && *end == '\0' && errno == 0,
                 "FLUXCAST_SEED must be an unsigned integer");
  return static_cast<uint64_t>(v);
}

void write_text_file(const std::string& path, const std::string& text) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream out(path);
  out << text;
  require_data(out.good(), "cannot write " + path);
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

Tensor channel_slice(const Tensor& u, int c) {
  const int h = u.dim(1), w = u.dim(2);
  Tensor out = Tensor::zeros({h, w});
  std::memcpy(out.data(), u.data() + static_cast<size_t>(c) * h * w,
              sizeof(double) * static_cast<size_t>(h) * w);
  return out;
}

Tensor lead_slice(const Tensor& t, int n) {
  const int k = t.dim(1), h = t.dim(2), w = t.dim(3);
  Tensor out = Tensor::zeros({k, h, w});
  std::memcpy(out.data(), t.data() + static_cast<size_t>(n) * k * h * w,
              sizeof(double) * static_cast<size_t>(k) * h * w);
  return out;
}

double mean_at_lead(const std::vector<std::vector<double>>& per_lead, int lead) {
  const std::vector<double>& row = per_lead[lead - 1];
  double m = 0.0;
  for (double v : row) m += v;
  return m / static_cast<double>(row.size());
}

std::optional<RegionSelection> region_for(const ExperimentConfig& cfg, const GridSpec& grid) {
  if (cfg.region == "global") return std::nullopt;
  return select_region(grid, RegionSpec::by_name(cfg.region));
}

std::string lr_label(double lr) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.0e", lr);
  return buf;
}

}  // namespace

// ============================================================================
// synth
// ============================================================================

int cmd_synth(const ExperimentConfig& cfg) {
  require_config(cfg.data.kind == "synthetic", "synth: data.kind must be synthetic");
  Dataset ds = make_synthetic_dataset(cfg.data.synth);
  fs::create_directories(cfg.out_dir);
  write_snapshot(cfg.out_dir, cfg.snapshot());
  const std::string path = cfg.out_dir + "/dataset.h5";
  save_dataset(path, ds);
  std::cout << "wrote " << ds.samples.size() << " samples (" << ds.catalog.channels()
            << " channels, " << ds.grid.h << "x" << ds.grid.w << ", " << cfg.data.synth.n_leads
            << " leads) to " << path << "\n";
  return 0;
}

// ============================================================================
// train
// ============================================================================

int cmd_train(const ExperimentConfig& cfg, const std::string& resume_from) {
  ExperimentData data = build_datasets(cfg);
  BundleConfig resolved = cfg.bundle_for(data.train.grid, data.train.catalog.channels());
  ModelBundle bundle(resolved);
  write_snapshot(cfg.out_dir, cfg.snapshot(&resolved));
  TrainResult res = train(data.train, data.val ? &*data.val : nullptr, bundle, cfg.solver,
                          cfg.optim, cfg.loss, cfg.out_dir, resume_from);
  std::cout << "run dir: " << cfg.out_dir << "\n";
  std::cout << "steps: " << res.steps << "\n";
  if (res.steps > 0) std::cout << "loss: " << res.initial_loss << " -> " << res.final_loss << "\n";
  if (res.best_epoch >= 1)
    std::cout << "best val loss: " << res.best_val_loss << " (epoch " << res.best_epoch << ")\n";
  if (!res.stable)
    throw InstabilityError("train: loss went non-finite in epoch " +
                           std::to_string(res.nan_epoch));
  return 0;
}

// ============================================================================
// eval
// ============================================================================

int cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint,
             const std::string& forecaster, int lead) {
  ExperimentData data = build_datasets(cfg);
  const Dataset& scored = data.val ? *data.val : data.train;
  auto sel = region_for(cfg, scored.grid);
  const RegionSelection* selp = sel ? &*sel : nullptr;

  ScoreReport report;
  std::unique_ptr<ModelBundle> loaded;
  if (forecaster == "model") {
    require_config(!checkpoint.empty(), "eval: --checkpoint is required to score a model");
    loaded = load_checkpoint(checkpoint);
    require_config(loaded->channels() == scored.catalog.channels() &&
                       loaded->grid().h == scored.grid.h && loaded->grid().w == scored.grid.w,
                   "eval: checkpoint geometry does not match the dataset");
    report = evaluate_model(*loaded, scored, data.train.stats, cfg.solver, cfg.eval, selp);
  } else if (forecaster == "persistence") {
    report = evaluate_persistence(scored, cfg.eval, selp);
  } else if (forecaster == "oracle") {
    // targets fed straight back through the scorer; pins the score floor
    report = score_forecasts(
        scored,
        [](const TrajectorySample& s) {
          Forecast f;
          f.states = s.targets;
          for (int n = 1; n <= s.n_leads(); ++n) f.t_hours.push_back(s.t0_hours + n);
          return f;
        },
        cfg.eval, selp);
    report.meta["forecaster"] = "oracle";
  } else {
    throw ConfigError("eval: unknown forecaster " + forecaster +
                      " (expected model, persistence, or oracle)");
  }
  if (lead != 0)
    require_config(lead >= 1 && lead <= report.n_leads,
                   "eval: lead " + std::to_string(lead) + " outside 1.." +
                       std::to_string(report.n_leads));

  fs::create_directories(cfg.out_dir);
  write_json_file(cfg.out_dir + "/eval_config.json", cfg.snapshot());
  write_json_file(cfg.out_dir + "/scores.json", report);
  write_text_file(cfg.out_dir + "/scores.csv", report.csv());

  std::cout << "forecaster: " << forecaster << ", samples: " << report.meta["samples"]
            << ", channels: " << report.channels.size() << "\n";
  auto print_lead = [&](int n) {
    std::cout << "lead " << n << ": rmse " << mean_at_lead(report.rmse, n) << ", acc "
              << mean_at_lead(report.acc, n) << "\n";
  };
  if (lead != 0)
    print_lead(lead);
  else
    for (int n = 1; n <= report.n_leads; ++n) print_lead(n);
  std::cout << "wrote " << cfg.out_dir << "/scores.csv\n";
  return 0;
}

// ============================================================================
// ablate
// ============================================================================

namespace {

// velocity-inputs and source-arch share everything except the patched field
int ablate_variants(const ExperimentConfig& cfg, bool velocity) {
  ExperimentData data = build_datasets(cfg);
  const Dataset& scored = data.val ? *data.val : data.train;
  const Dataset* valp = data.val ? &*data.val : nullptr;
  auto sel = region_for(cfg, scored.grid);
  const RegionSelection* selp = sel ? &*sel : nullptr;

  std::vector<std::string> names;
  if (velocity) {
    for (VelocityPlan p : kAllVelocityPlans) names.push_back(to_string(p));
    // the ladder contains time-derivative plans, so history frames are a must
    require_config(!data.train.samples.empty() && data.train.samples[0].has_history(),
                   "ablate: velocity-inputs needs a dataset with history frames");
  } else {
    for (SourceArch a : kAllSourceArchs) names.push_back(to_string(a));
  }

  const std::string key = velocity ? "velocity" : "source";
  const std::string field = velocity ? "plan" : "arch";
  const std::string tag = velocity ? "velocity_inputs" : "source_arch";

  nlohmann::json rows = nlohmann::json::array();
  std::vector<std::string> bar_labels;
  std::vector<double> bar_vals;
  std::ostringstream csv;
  csv << std::setprecision(17) << "name,stable,steps,final_loss,rmse_final_lead,acc_final_lead\n";
  int final_lead = 0;

  for (const std::string& name : names) {
    ExperimentConfig vcfg = cfg;
    if (!vcfg.bundle_patch.is_object()) vcfg.bundle_patch = nlohmann::json::object();
    vcfg.bundle_patch[key][field] = name;
    BundleConfig resolved = vcfg.bundle_for(data.train.grid, data.train.catalog.channels());
    ModelBundle bundle(resolved);
    const std::string sub = cfg.out_dir + "/" + key + "_" + name;
    fs::create_directories(sub);
    write_snapshot(sub, vcfg.snapshot(&resolved));
    TrainResult res = train(data.train, valp, bundle, cfg.solver, cfg.optim, cfg.loss, sub);

    double rmse_n = std::numeric_limits<double>::quiet_NaN();
    double acc_n = std::numeric_limits<double>::quiet_NaN();
    if (res.stable) {
      try {
        ScoreReport rep =
            evaluate_model(bundle, scored, data.train.stats, cfg.solver, cfg.eval, selp);
        final_lead = rep.n_leads;
        rmse_n = mean_at_lead(rep.rmse, rep.n_leads);
        acc_n = mean_at_lead(rep.acc, rep.n_leads);
        bar_labels.push_back(name);
        bar_vals.push_back(rmse_n);
      } catch (const InstabilityError&) {
        // trained but blows up on the scored split; recorded, not fatal
      }
    }
    rows.push_back({{"name", name},
                    {"stable", res.stable},
                    {"steps", res.steps},
                    {"final_loss", res.final_loss},
                    {"rmse_final_lead", rmse_n},
                    {"acc_final_lead", acc_n}});
    csv << name << "," << (res.stable ? 1 : 0) << "," << res.steps << "," << res.final_loss << ","
        << rmse_n << "," << acc_n << "\n";
    std::cout << std::left << std::setw(12) << name << (res.stable ? " stable  " : " DIVERGED")
              << "  loss " << res.final_loss << "  rmse " << rmse_n << "\n";
  }

  write_json_file(cfg.out_dir + "/" + tag + ".json",
                  {{"study", velocity ? "velocity-inputs" : "source-arch"},
                   {"final_lead", final_lead},
                   {"rows", rows}});
  write_text_file(cfg.out_dir + "/" + tag + ".csv", csv.str());
  if (!bar_labels.empty())
    write_png(cfg.out_dir + "/" + tag + ".png",
              bar_chart(bar_labels, bar_vals,
                        tag + " rmse at lead " + std::to_string(final_lead)));
  std::cout << "wrote " << cfg.out_dir << "/" << tag << ".csv\n";
  return 0;
}

int ablate_dt(const ExperimentConfig& cfg) {
  const std::vector<double> dts = {1, 2, 3, 6, 12, 24};
  std::vector<DtStudyRow> rows = dt_derivative_study(dts);
  nlohmann::json jr = nlohmann::json::array();
  std::ostringstream csv;
  csv << std::setprecision(17) << "dt_hours,rms_error,closed_form\n";
  std::vector<double> measured, closed;
  for (const DtStudyRow& r : rows) {
    jr.push_back({{"dt_hours", r.dt_hours},
                  {"rms_error", r.rms_error},
                  {"closed_form", r.closed_form}});
    csv << r.dt_hours << "," << r.rms_error << "," << r.closed_form << "\n";
    measured.push_back(r.rms_error);
    closed.push_back(r.closed_form);
    std::cout << "dt " << std::setw(2) << r.dt_hours << " h: rms error " << r.rms_error
              << " (closed form " << r.closed_form << ")\n";
  }
  fs::create_directories(cfg.out_dir);
  write_json_file(cfg.out_dir + "/dt_interval.json", {{"study", "dt-interval"}, {"rows", jr}});
  write_text_file(cfg.out_dir + "/dt_interval.csv", csv.str());
  write_png(cfg.out_dir + "/dt_interval.png",
            line_chart({measured, closed}, {"measured", "closed form"},
                       "velocity estimate error by frame interval", true));
  std::cout << "wrote " << cfg.out_dir << "/dt_interval.csv\n";
  return 0;
}

int ablate_stability(const ExperimentConfig& cfg) {
  ExperimentData data = build_datasets(cfg);
  // the study's axis is the advection variant, so both are pinned explicitly
  BundleConfig learned = cfg.bundle_for(data.train.grid, data.train.catalog.channels());
  learned.advection.backbone_enabled = true;
  BundleConfig linear = learned;
  linear.advection.backbone_enabled = false;

  std::vector<StabilityCase> cases;
  for (double mult : {1.0, 10.0, 100.0}) {
    cases.push_back({learned, cfg.optim.base_lr * mult, cfg.optim.advection_lr * mult});
    cases.push_back({linear, cfg.optim.base_lr * mult, cfg.optim.advection_lr * mult});
  }
  std::vector<StabilityRecord> recs =
      stability_matrix(data.train, data.val ? &*data.val : nullptr, cases, cfg.solver, cfg.optim,
                       cfg.loss);

  std::ostringstream csv;
  csv << std::setprecision(17)
      << "velocity,advection,source,base_lr,advection_lr,stable,nan_epoch,val_loss,rank\n";
  std::vector<std::string> bar_labels;
  std::vector<double> bar_vals;
  for (const StabilityRecord& r : recs) {
    csv << r.velocity << "," << r.advection << "," << r.source << "," << r.base_lr << ","
        << r.advection_lr << "," << (r.stable ? 1 : 0) << "," << r.nan_epoch << "," << r.val_loss
        << "," << r.rank << "\n";
    if (r.stable) {
      bar_labels.push_back(r.advection + "@" + lr_label(r.base_lr));
      bar_vals.push_back(r.val_loss);
    }
    std::cout << std::left << std::setw(10) << r.advection << " base lr " << std::setw(8)
              << lr_label(r.base_lr)
              << (r.stable ? ("stable, loss " + std::to_string(r.val_loss) + ", rank " +
                              std::to_string(r.rank))
                           : ("diverged in epoch " + std::to_string(r.nan_epoch)))
              << "\n";
  }
  fs::create_directories(cfg.out_dir);
  write_json_file(cfg.out_dir + "/stability.json",
                  {{"study", "stability"}, {"rows", nlohmann::json(recs)}});
  write_text_file(cfg.out_dir + "/stability.csv", csv.str());
  if (!bar_labels.empty())
    write_png(cfg.out_dir + "/stability.png",
              bar_chart(bar_labels, bar_vals, "validation loss of surviving runs"));
  std::cout << "wrote " << cfg.out_dir << "/stability.csv\n";
  return 0;
}

}  // namespace

int cmd_ablate(const ExperimentConfig& cfg, const std::string& study) {
  if (study == "velocity-inputs") return ablate_variants(cfg, true);
  if (study == "source-arch") return ablate_variants(cfg, false);
  if (study == "dt-interval") return ablate_dt(cfg);
  if (study == "stability") return ablate_stability(cfg);
  throw ConfigError("ablate: unknown study " + study +
                    " (expected velocity-inputs, source-arch, dt-interval, or stability)");
}

// ============================================================================
// plot
// ============================================================================

int cmd_plot(const std::string& run_dir, const std::string& out_dir_arg) {
  const std::string out_dir = out_dir_arg.empty() ? run_dir : out_dir_arg;

  std::ifstream hist(run_dir + "/history.jsonl");
  require_data(hist.good(), "plot: no history.jsonl in " + run_dir);
  std::vector<double> losses, val_losses;
  std::string line;
  while (std::getline(hist, line)) {
    if (line.empty()) continue;
    nlohmann::json r = nlohmann::json::parse(line, nullptr, false);
    require_data(!r.is_discarded(), "plot: history.jsonl has a malformed line");
    if (r.contains("loss") && r["loss"].is_number()) losses.push_back(r["loss"].get<double>());
    if (r.contains("val_loss") && r["val_loss"].is_number())
      val_losses.push_back(r["val_loss"].get<double>());
  }
  require_data(!losses.empty(), "plot: history is empty in " + run_dir);

  fs::create_directories(out_dir);
  int written = 0;
  write_png(out_dir + "/loss_curve.png",
            line_chart({losses}, {"train loss"}, "training loss by step"));
  ++written;
  if (!val_losses.empty()) {
    write_png(out_dir + "/val_curve.png",
              line_chart({val_losses}, {"val loss"}, "validation loss by epoch"));
    ++written;
  }

  std::ifstream cf(run_dir + "/config.json");
  require_data(cf.good(), "plot: no config.json in " + run_dir);
  nlohmann::json cj = nlohmann::json::parse(cf, nullptr, false);
  require_data(!cj.is_discarded(), "plot: config.json is not valid json");
  ExperimentConfig cfg = parse_experiment_config(cj);
  cfg.validate();
  ExperimentData data = build_datasets(cfg);
  const Dataset& ds = data.train;
  require_data(!ds.samples.empty(), "plot: the run's dataset is empty");
  const TrajectorySample& s0 = ds.samples[0];

  for (int c = 0; c < ds.catalog.channels(); ++c) {
    const std::string nm = ds.catalog.vars[c].channel_name();
    write_png(out_dir + "/field_u0_" + nm + ".png",
              field_map(channel_slice(s0.u0, c), 12, "u0 " + nm));
    ++written;
  }

  const std::string best = run_dir + "/best.h5";
  const std::string last = run_dir + "/last.h5";
  const std::string ck = fs::exists(best) ? best : fs::exists(last) ? last : "";
  if (!ck.empty()) {
    std::unique_ptr<ModelBundle> bundle = load_checkpoint(ck);
    const int n = s0.n_leads();
    try {
      Forecast f = model_forecast(*bundle, s0, ds.stats, cfg.solver, n);
      if (!f.diverged) {
        Tensor pred = f.lead(n);
        for (int c = 0; c < ds.catalog.channels(); ++c) {
          const std::string nm = ds.catalog.vars[c].channel_name();
          write_png(out_dir + "/field_forecast_" + nm + ".png",
                    field_map(channel_slice(pred, c), 12,
                              "forecast +" + std::to_string(n) + "h " + nm));
          Tensor truth = channel_slice(lead_slice(s0.targets, n - 1), c);
          write_png(out_dir + "/field_truth_" + nm + ".png",
                    field_map(truth, 12, "truth +" + std::to_string(n) + "h " + nm));
          written += 2;
        }
      } else {
        std::cout << "forecast diverged, skipping forecast maps\n";
      }
    } catch (const InstabilityError&) {
      std::cout << "forecast diverged, skipping forecast maps\n";
    }
  }
  std::cout << "wrote " << written << " images to " << out_dir << "\n";
  return 0;
}

// ============================================================================
// front end
// ============================================================================

namespace {

struct CommonFlags {
  std::string config, out, region;
  uint64_t seed = 0;
  std::vector<std::string> sets;
  CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* sub, CommonFlags& c, bool with_region) {
  sub->add_option("--config", c.config, "experiment config file (json)");
  sub->add_option("--set", c.sets, "dotted config override, key=value (repeatable)");
  c.seed_opt = sub->add_option("--seed", c.seed, "master seed override");
  sub->add_option("--out", c.out, "output directory override");
  if (with_region) sub->add_option("--region", c.region, "named scoring region");
}

// file < FLUXCAST_SEED < flags; among flags, the dedicated ones win over --set
ExperimentConfig assemble(const CommonFlags& c) {
  std::vector<std::string> ov;
  if (const char* env = std::getenv("FLUXCAST_SEED"))
    if (*env) ov.push_back("seed=" + std::to_string(parse_env_seed(env)));
  for (const std::string& s : c.sets) ov.push_back(s);
  if (c.seed_opt && c.seed_opt->count() > 0) ov.push_back("seed=" + std::to_string(c.seed));
  if (!c.out.empty()) ov.push_back("out_dir=" + c.out);
  if (!c.region.empty()) ov.push_back("region=" + c.region);
  if (!c.config.empty()) return load_experiment_config(c.config, ov);
  ExperimentConfig cfg = parse_experiment_config(apply_overrides(nlohmann::json::object(), ov));
  cfg.validate();
  return cfg;
}

}  // namespace

int cli_main(const std::vector<std::string>& args) {
  CLI::App app{"physics-driven transport forecaster"};
  app.require_subcommand(1);

  CommonFlags cs, ct, ce, ca;
  std::string resume, checkpoint, forecaster = "model", study, run_dir, plot_out;
  int lead = 0;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset and save it");
  add_common(synth, cs, false);

  CLI::App* tr = app.add_subcommand("train", "train a model into a run directory");
  add_common(tr, ct, true);
  tr->add_option("--checkpoint", resume, "checkpoint to resume from");

  CLI::App* ev = app.add_subcommand("eval", "score a checkpoint or baseline");
  add_common(ev, ce, true);
  ev->add_option("--checkpoint", checkpoint, "checkpoint to score");
  ev->add_option("--forecaster", forecaster, "model, persistence, or oracle");
  ev->add_option("--lead", lead, "print a single lead hour");

  CLI::App* ab = app.add_subcommand("ablate", "run a comparison study");
  add_common(ab, ca, true);
  ab->add_option("--study", study,
                 "velocity-inputs, source-arch, dt-interval, or stability")
      ->required();

  CLI::App* pl = app.add_subcommand("plot", "render charts and field maps for a run");
  pl->add_option("run_dir", run_dir, "run directory with history.jsonl and config.json")
      ->required();
  pl->add_option("--out", plot_out, "image output directory (default: the run directory)");

  std::vector<const char*> argv;
  argv.push_back("fluxcast");
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // help exits clean; any parse failure is a config error
  }

  try {
    if (synth->parsed()) return cmd_synth(assemble(cs));
    if (tr->parsed()) return cmd_train(assemble(ct), resume);
    if (ev->parsed()) return cmd_eval(assemble(ce), checkpoint, forecaster, lead);
    if (ab->parsed()) return cmd_ablate(assemble(ca), study);
    return cmd_plot(run_dir, plot_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const InstabilityError& e) {
    std::cerr << "instability: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cli_main(args);
}

}  // namespace fluxcast
