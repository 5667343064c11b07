#include "fluxcast/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace fluxcast {

// ============================================================================
// Loss
// ============================================================================

void to_json(nlohmann::json& j, const LossConfig& c) {
  j = {{"eval_channels", c.eval_channels}};
}

void from_json(const nlohmann::json& j, LossConfig& c) {
  j.at("eval_channels").get_to(c.eval_channels);
}

namespace {

Tensor alpha_map(const GridSpec& grid, int k) {
  Tensor w = latitude_weights(grid);
  Tensor am({k, grid.h, grid.w});
  for (int c = 0; c < k; ++c)
    for (int i = 0; i < grid.h; ++i)
      for (int j = 0; j < grid.w; ++j) am.at(c, i, j) = w[i];
  return am;
}

void check_loss_shapes(size_t n_preds, const std::vector<int>& pred0, const Tensor& targets) {
  if (targets.rank() != 4 || targets.dim(0) != static_cast<int>(n_preds) ||
      targets.dim(1) != pred0[0] || targets.dim(2) != pred0[1] || targets.dim(3) != pred0[2])
    throw ShapeError("loss: " + std::to_string(n_preds) + " predictions of (" +
                     std::to_string(pred0[0]) + "," + std::to_string(pred0[1]) + "," +
                     std::to_string(pred0[2]) + ") vs targets " + targets.shape_str());
}

}  // namespace

ad::Var multi_task_loss(ad::Graph& g, const std::vector<ad::Var>& preds, const Tensor& targets,
                        const GridSpec& grid) {
  require_data(!preds.empty(), "loss: no supervised steps");
  // copy the dims out: val() references go stale as ops append nodes
  require_data(g.val(preds[0]).rank() == 3, "loss: predictions must be (K,H,W)");
  const int k = g.val(preds[0]).dim(0), h = g.val(preds[0]).dim(1), w = g.val(preds[0]).dim(2);
  check_loss_shapes(preds.size(), {k, h, w}, targets);
  require_data(h == grid.h && w == grid.w, "loss: grid does not match fields");

  ad::Var am = g.constant(alpha_map(grid, k));
  const long step_sz = targets.size() / targets.dim(0);
  std::vector<ad::Var> terms;
  for (size_t n = 0; n < preds.size(); ++n) {
    Tensor tn({k, h, w});
    std::copy(targets.data() + n * step_sz, targets.data() + (n + 1) * step_sz, tn.data());
    ad::Var d = ad::sub(g, preds[n], g.constant(std::move(tn)));
    terms.push_back(ad::mean_all(g, ad::mul(g, ad::mul(g, d, d), am)));
  }
  return ad::scale(g, ad::add_all(g, terms), 1.0 / preds.size());
}

double multi_task_loss_value(const Tensor& preds, const Tensor& targets, const GridSpec& grid) {
  require_data(preds.rank() == 4, "loss: predictions must be (N,K,H,W)");
  if (!preds.same_shape(targets))
    throw ShapeError("loss: predictions " + preds.shape_str() + " vs targets " +
                     targets.shape_str());
  require_data(preds.dim(2) == grid.h && preds.dim(3) == grid.w,
               "loss: grid does not match fields");
  Tensor w = latitude_weights(grid);
  double acc = 0.0;
  const int n = preds.dim(0), k = preds.dim(1);
  for (int s = 0; s < n; ++s)
    for (int c = 0; c < k; ++c)
      for (int i = 0; i < grid.h; ++i)
        for (int j = 0; j < grid.w; ++j) {
          double d = preds.at(s, c, i, j) - targets.at(s, c, i, j);
          acc += w[i] * d * d;
        }
  return acc / preds.size();
}

// ============================================================================
// Schedule and optimizer
// ============================================================================

void OptimConfig::validate() const {
  // zero rates are allowed: they make training a diagnostic no-op
  require_config(base_lr >= 0.0 && advection_lr >= 0.0, "optim: negative learning rate");
  require_config(weight_decay >= 0.0, "optim: negative weight decay");
  require_config(lr_floor > 0.0, "optim: schedule floor must be positive");
  require_config(warmup_steps >= 0, "optim: negative warmup");
  // zero epochs is a checkpoint-only run: useful for materializing a bundle
  require_config(epochs >= 0, "optim: negative epoch count");
  require_config(batch_size >= 1, "optim: batch size must be positive");
  require_config(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
                 "optim: betas must lie in [0,1)");
  require_config(adam_eps > 0.0, "optim: adam epsilon must be positive");
}

void to_json(nlohmann::json& j, const OptimConfig& c) {
  j = {{"base_lr", c.base_lr},
       {"advection_lr", c.advection_lr},
       {"weight_decay", c.weight_decay},
       {"lr_floor", c.lr_floor},
       {"warmup_steps", c.warmup_steps},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"adam_eps", c.adam_eps},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, OptimConfig& c) {
  j.at("base_lr").get_to(c.base_lr);
  j.at("advection_lr").get_to(c.advection_lr);
  j.at("weight_decay").get_to(c.weight_decay);
  j.at("lr_floor").get_to(c.lr_floor);
  j.at("warmup_steps").get_to(c.warmup_steps);
  j.at("epochs").get_to(c.epochs);
  j.at("batch_size").get_to(c.batch_size);
  j.at("beta1").get_to(c.beta1);
  j.at("beta2").get_to(c.beta2);
  j.at("adam_eps").get_to(c.adam_eps);
  j.at("seed").get_to(c.seed);
}

LrPair lr_schedule(const OptimConfig& opt, long step, long total_steps) {
  require_config(step >= 0 && total_steps >= 1, "schedule: bad step indices");
  auto shape = [&](double peak) {
    if (peak == 0.0) return 0.0;  // frozen rate: a diagnostic no-op, no floor
    // two-coefficient blends are exact at both endpoints, unlike a +delta form
    if (step <= opt.warmup_steps && opt.warmup_steps > 0) {
      double x = static_cast<double>(step) / opt.warmup_steps;
      return (1.0 - x) * opt.lr_floor + x * peak;
    }
    if (opt.warmup_steps >= total_steps) return peak;
    double x = static_cast<double>(std::min(step, total_steps) - opt.warmup_steps) /
               static_cast<double>(total_steps - opt.warmup_steps);
    double w = 0.5 * (1.0 + std::cos(M_PI * x));
    return w * peak + (1.0 - w) * opt.lr_floor;
  };
  return {shape(opt.base_lr), shape(opt.advection_lr)};
}

AdamW::AdamW(ad::ParamStore& store, OptimConfig opt) : store_(&store), opt_(std::move(opt)) {
  opt_.validate();
  for (const auto& p : store.all()) {
    m_.push_back(Tensor(p->value.shape()));
    v_.push_back(Tensor(p->value.shape()));
  }
}

void AdamW::step(const LrPair& lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  const auto& params = store_->all();
  for (size_t i = 0; i < params.size(); ++i) {
    ad::Param& p = *params[i];
    const double rate = p.group == 1 ? lr.advection : lr.base;
    const double wd = p.no_decay ? 0.0 : opt_.weight_decay;
    for (long j = 0; j < p.value.size(); ++j) {
      double gval = p.grad.size() ? p.grad[j] : 0.0;
      m_[i][j] = opt_.beta1 * m_[i][j] + (1.0 - opt_.beta1) * gval;
      v_[i][j] = opt_.beta2 * v_[i][j] + (1.0 - opt_.beta2) * gval * gval;
      double mh = m_[i][j] / bc1;
      double vh = v_[i][j] / bc2;
      p.value[j] -= rate * (mh / (std::sqrt(vh) + opt_.adam_eps) + wd * p.value[j]);
    }
  }
}

void AdamW::export_state(std::map<std::string, Tensor>& extra,
                         std::map<std::string, uint64_t>& extra_u64) const {
  const auto& params = store_->all();
  for (size_t i = 0; i < params.size(); ++i) {
    extra["opt.m." + params[i]->name] = m_[i];
    extra["opt.v." + params[i]->name] = v_[i];
  }
  extra_u64["opt.step"] = static_cast<uint64_t>(t_);
}

void AdamW::import_state(const std::map<std::string, Tensor>& extra,
                         const std::map<std::string, uint64_t>& extra_u64) {
  const auto& params = store_->all();
  for (size_t i = 0; i < params.size(); ++i) {
    for (auto [slot, dst] : {std::pair{"opt.m.", &m_}, {"opt.v.", &v_}}) {
      auto it = extra.find(slot + params[i]->name);
      require_data(it != extra.end(),
                   "checkpoint has no optimizer state for " + params[i]->name);
      require_data(it->second.same_shape((*dst)[i]),
                   "optimizer state shape mismatch for " + params[i]->name);
      (*dst)[i] = it->second;
    }
  }
  auto it = extra_u64.find("opt.step");
  require_data(it != extra_u64.end(), "checkpoint has no optimizer step counter");
  t_ = static_cast<long>(it->second);
}

// ============================================================================
// Training loop
// ============================================================================

namespace {

struct ForwardOut {
  ad::Var loss;
  bool diverged = false;
};

ForwardOut sample_forward(ad::Graph& g, const ModelBundle& bundle, const TrajectorySample& s,
                          const Dataset& ds, const SolverConfig& solver) {
  Tensor u0n = normalize(s.u0, ds.stats);
  ad::Var u0 = g.constant(u0n);
  ad::Var dudt{};
  if (velocity_plan_needs_history(bundle.config().velocity.plan)) {
    require_data(s.has_history(),
                 "train: the velocity plan needs the previous frame but the sample has none");
    dudt = g.constant(finite_difference_velocity_baseline(
        u0n, normalize(s.u_prev, ds.stats), s.dt_prev_hours));
  }
  ad::Var v0 = bundle.velocity_forward(g, u0, dudt);
  Rollout r = integrate(g, bundle, u0, v0, s.t0_hours, s.n_leads(), solver);
  std::vector<ad::Var> corrected = apply_source(g, bundle, r, u0, v0);
  ad::Var loss = multi_task_loss(g, corrected, normalize(s.targets, ds.stats), ds.grid);
  return {loss, r.diverged};
}

double validation_loss(const ModelBundle& bundle, const Dataset& val, const NormStats& stats,
                       const SolverConfig& solver) {
  // held-out samples are normalized with the training stats, never their own
  Dataset view;
  view.grid = val.grid;
  view.catalog = val.catalog;
  view.stats = stats;
  double acc = 0.0;
  for (const auto& s : val.samples) {
    ad::Graph g(false, 0);
    ForwardOut out = sample_forward(g, bundle, s, view, solver);
    if (out.diverged) return std::numeric_limits<double>::quiet_NaN();
    acc += g.val(out.loss)[0];
  }
  return acc / val.samples.size();
}

uint64_t mix_seed(uint64_t seed, uint64_t counter) {
  return seed ^ (0x9e3779b97f4a7c15ULL * (counter + 1));
}

void write_history(const std::string& run_dir, const std::vector<nlohmann::json>& history) {
  if (run_dir.empty()) return;
  std::ofstream out(run_dir + "/history.jsonl", std::ios::trunc);
  require_data(out.good(), "train: cannot write history in " + run_dir);
  for (const auto& rec : history) out << rec.dump() << "\n";
}

}  // namespace

TrainResult train(const Dataset& train_ds, const Dataset* val_ds, ModelBundle& bundle,
                  const SolverConfig& solver, const OptimConfig& opt, const LossConfig& loss,
                  const std::string& run_dir, const std::string& resume_from) {
  opt.validate();
  solver.validate();
  loss.validate();
  require_data(!train_ds.samples.empty(), "train: empty dataset");
  require_data(train_ds.stats.channels() == train_ds.catalog.channels(),
               "train: dataset lacks fitted normalization stats");
  require_config(bundle.channels() == train_ds.catalog.channels(),
                 "train: bundle channel count does not match the dataset");
  require_config(bundle.grid().h == train_ds.grid.h && bundle.grid().w == train_ds.grid.w,
                 "train: bundle grid does not match the dataset");

  AdamW adam(bundle.params(), opt);
  if (!resume_from.empty()) {
    std::map<std::string, Tensor> extra;
    std::map<std::string, uint64_t> extra_u64;
    auto loaded = load_checkpoint(resume_from, &extra, &extra_u64);
    for (const auto& p : loaded->params().all()) {
      ad::Param* dst = bundle.params().find(p->name);
      require_data(dst && dst->value.same_shape(p->value),
                   "resume: checkpoint parameter " + p->name + " does not fit this bundle");
      dst->value = p->value;
    }
    adam.import_state(extra, extra_u64);
  }

  const long s_count = static_cast<long>(train_ds.samples.size());
  const long steps_per_epoch = (s_count + opt.batch_size - 1) / opt.batch_size;
  const long total_steps = steps_per_epoch * opt.epochs;

  TrainResult res;
  res.best_val_loss = std::numeric_limits<double>::quiet_NaN();
  uint64_t sample_counter = 0;
  bool first_batch = true;

  auto finish = [&](int nan_epoch) {
    if (nan_epoch > 0) {
      res.stable = false;
      res.nan_epoch = nan_epoch;
      res.history.push_back({{"epoch", nan_epoch}, {"event", "nan"}, {"step", res.steps}});
    }
    write_history(run_dir, res.history);
    return res;
  };

  if (!run_dir.empty()) {
    // the pre-loop save makes a zero-epoch run leave a loadable initial state
    std::map<std::string, Tensor> extra;
    std::map<std::string, uint64_t> extra_u64;
    adam.export_state(extra, extra_u64);
    extra_u64["epoch"] = 0;
    save_checkpoint(bundle, run_dir + "/last.h5", extra, extra_u64);
  }

  for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
    std::vector<long> order(s_count);
    std::iota(order.begin(), order.end(), 0);
    Rng shuf = Rng(opt.seed).fork(900 + epoch);
    for (long i = s_count - 1; i > 0; --i)
      std::swap(order[i], order[static_cast<long>(shuf.next_below(i + 1))]);

    for (long b = 0; b < s_count; b += opt.batch_size) {
      const long bn = std::min<long>(opt.batch_size, s_count - b);
      bundle.params().zero_grads();
      double batch_loss = 0.0;
      for (long i = 0; i < bn; ++i) {
        const TrajectorySample& s = train_ds.samples[order[b + i]];
        ad::Graph g(true, mix_seed(opt.seed, sample_counter++));
        ForwardOut out;
        try {
          out = sample_forward(g, bundle, s, train_ds, solver);
        } catch (const InstabilityError&) {
          return finish(epoch);
        }
        double lv = g.val(out.loss)[0];
        if (out.diverged || !std::isfinite(lv)) return finish(epoch);
        g.backward(out.loss);
        batch_loss += lv;
      }
      batch_loss /= bn;
      for (const auto& p : bundle.params().all())
        if (p->grad.size()) p->grad *= 1.0 / bn;
      LrPair lr = lr_schedule(opt, adam.steps_taken(), total_steps);
      adam.step(lr);
      ++res.steps;
      if (first_batch) {
        res.initial_loss = batch_loss;
        first_batch = false;
      }
      res.final_loss = batch_loss;
      res.history.push_back({{"step", res.steps},
                             {"epoch", epoch},
                             {"loss", batch_loss},
                             {"lr_base", lr.base},
                             {"lr_adv", lr.advection}});
    }

    if (val_ds && !val_ds->samples.empty()) {
      double vl;
      try {
        vl = validation_loss(bundle, *val_ds, train_ds.stats, solver);
      } catch (const InstabilityError&) {
        vl = std::numeric_limits<double>::quiet_NaN();
      }
      if (!std::isfinite(vl)) return finish(epoch);
      res.history.push_back({{"epoch", epoch}, {"val_loss", vl}});
      if (res.best_epoch < 0 || vl < res.best_val_loss) {
        res.best_val_loss = vl;
        res.best_epoch = epoch;
        if (!run_dir.empty()) {
          std::map<std::string, Tensor> extra;
          std::map<std::string, uint64_t> extra_u64;
          adam.export_state(extra, extra_u64);
          extra_u64["epoch"] = static_cast<uint64_t>(epoch);
          save_checkpoint(bundle, run_dir + "/best.h5", extra, extra_u64);
        }
      }
    }
    if (!run_dir.empty()) {
      std::map<std::string, Tensor> extra;
      std::map<std::string, uint64_t> extra_u64;
      adam.export_state(extra, extra_u64);
      extra_u64["epoch"] = static_cast<uint64_t>(epoch);
      save_checkpoint(bundle, run_dir + "/last.h5", extra, extra_u64);
    }
  }
  return finish(-1);
}

// ============================================================================
// Stability matrix
// ============================================================================

void StabilityRecord::validate() const {
  require_data(!velocity.empty() && !advection.empty() && !source.empty(),
               "stability record: missing architecture names");
  if (stable) {
    require_data(nan_epoch == -1, "stability record: stable run with a NaN epoch");
    require_data(rank >= 1 && std::isfinite(val_loss),
                 "stability record: stable run without rank or loss");
  } else {
    require_data(nan_epoch >= 1, "stability record: diverged run must carry its epoch");
  }
}

void to_json(nlohmann::json& j, const StabilityRecord& r) {
  j = {{"velocity", r.velocity},
       {"advection", r.advection},
       {"source", r.source},
       {"base_lr", r.base_lr},
       {"advection_lr", r.advection_lr},
       {"stable", r.stable},
       {"nan_epoch", r.nan_epoch},
       {"val_loss", std::isfinite(r.val_loss) ? nlohmann::json(r.val_loss) : nlohmann::json()},
       {"rank", r.rank}};
}

void from_json(const nlohmann::json& j, StabilityRecord& r) {
  j.at("velocity").get_to(r.velocity);
  j.at("advection").get_to(r.advection);
  j.at("source").get_to(r.source);
  j.at("base_lr").get_to(r.base_lr);
  j.at("advection_lr").get_to(r.advection_lr);
  j.at("stable").get_to(r.stable);
  j.at("nan_epoch").get_to(r.nan_epoch);
  r.val_loss = j.at("val_loss").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                          : j.at("val_loss").get<double>();
  j.at("rank").get_to(r.rank);
}

std::vector<StabilityRecord> stability_matrix(const Dataset& train_ds, const Dataset* val_ds,
                                              const std::vector<StabilityCase>& cases,
                                              const SolverConfig& solver,
                                              const OptimConfig& base_opt,
                                              const LossConfig& loss) {
  require_config(!cases.empty(), "stability: no cases");
  std::vector<StabilityRecord> records;
  for (const auto& cs : cases) {
    ModelBundle bundle(cs.bundle);
    OptimConfig opt = base_opt;
    opt.base_lr = cs.base_lr;
    opt.advection_lr = cs.advection_lr;
    TrainResult tr = train(train_ds, val_ds, bundle, solver, opt, loss);
    StabilityRecord rec;
    rec.velocity = to_string(cs.bundle.velocity.kind);
    rec.advection =
        cs.bundle.advection.backbone_enabled ? to_string(cs.bundle.advection.kind) : "linear";
    rec.source = to_string(cs.bundle.source.arch);
    rec.base_lr = cs.base_lr;
    rec.advection_lr = cs.advection_lr;
    rec.stable = tr.stable;
    rec.nan_epoch = tr.stable ? -1 : tr.nan_epoch;
    rec.val_loss = !tr.stable ? std::numeric_limits<double>::quiet_NaN()
                   : (val_ds && !val_ds->samples.empty()) ? tr.best_val_loss
                                                          : tr.final_loss;
    records.push_back(std::move(rec));
  }
  std::vector<size_t> stable_idx;
  for (size_t i = 0; i < records.size(); ++i)
    if (records[i].stable) stable_idx.push_back(i);
  std::sort(stable_idx.begin(), stable_idx.end(), [&](size_t a, size_t b) {
    return records[a].val_loss < records[b].val_loss;
  });
  for (size_t r = 0; r < stable_idx.size(); ++r) records[stable_idx[r]].rank = static_cast<int>(r) + 1;
  for (const auto& rec : records) rec.validate();
  return records;
}

}  // namespace fluxcast
