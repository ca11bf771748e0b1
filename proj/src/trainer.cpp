#include "puat/trainer.hpp"

#include "puat/checkpoint.hpp"
#include "puat/text.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

namespace puat {
namespace {

void apply(Sgd& opt, LayerStore& store, const Tape& tape, double lr, bool ascend, std::uint64_t& version) {
  auto params = store.parameters();
  std::vector<Matrix> grads;
  grads.reserve(params.size());
  for (auto* p : params) grads.push_back(tape.grad(*p));
  opt.step(params, grads, lr, ascend);
  ++version;
}

Scalar checked(const Var& v, const char* what, std::int64_t step) {
  const Scalar s = v.scalar();
  if (!std::isfinite(s)) {
    std::ostringstream msg;
    msg << "non-finite " << what << " (" << s << ") at step " << step;
    throw NonFiniteLoss(msg.str());
  }
  return s;
}

Matrix soft_labels(const Classifier& c, const Matrix& x, NormMode mode) {
  Tape t;
  return ad::softmax_rows(c.logits(t, t.constant(x), mode)).value();
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string fmt(const std::optional<Scalar>& v) { return v ? fmt(*v) : "nan"; }

LossTerms mean_terms(const std::vector<LossTerms>& steps, std::size_t from, GanMode mode) {
  LossTerms m;
  m.mode = mode;
  const double n = static_cast<double>(steps.size() - from);
  double adv = 0.0, r = 0.0;
  bool has_adv = false, has_r = false;
  for (std::size_t i = from; i < steps.size(); ++i) {
    const auto& s = steps[i];
    m.L_D += s.L_D / n;
    m.L_G += s.L_G / n;
    m.L_Cgan += s.L_Cgan / n;
    m.L_gan_total += s.L_gan_total / n;
    m.L_nat += s.L_nat / n;
    m.total += s.total / n;
    if (s.L_adv) has_adv = true, adv += *s.L_adv / n;
    if (s.L_r) has_r = true, r += *s.L_r / n;
  }
  if (has_adv) m.L_adv = adv;
  if (has_r) m.L_r = r;
  return m;
}

std::string rng_state(const Rng& a, const Rng& b) {
  std::ostringstream o;
  o << a << '\n' << b;
  return o.str();
}

}  // namespace

void validate(const TrainConfig& c) {
  validate(c.weights);
  validate(c.optimizer);
  validate(c.rae_attack);
  validate(c.val_attack);
  if (c.rae_attack.family != AttackFamily::PixelPgd) throw std::invalid_argument("train.rae_attack must be pixel pgd");
  if (c.val_attack.family != AttackFamily::PixelPgd) throw std::invalid_argument("train.val_attack must be pixel pgd");
  if (!(c.gan_lr_scale >= 0.0)) throw std::invalid_argument("train.gan_lr_scale must be >= 0");
  if (c.labeled_batch <= 0 || c.unlabeled_batch <= 0) throw std::invalid_argument("train batch sizes must be positive");
  if (c.pretrain_epochs < 0 || c.epochs < 0) throw std::invalid_argument("train epochs must be >= 0");
  if (c.steps_per_epoch < 0) throw std::invalid_argument("train.steps_per_epoch must be >= 0");
  if (c.early_stopping.patience < 1) throw std::invalid_argument("train.patience must be >= 1");
  if (c.early_stopping.metric != "val_rob_acc" && c.early_stopping.metric != "val_nat_acc")
    throw std::invalid_argument("train.early_stopping_metric must be val_rob_acc or val_nat_acc");
  if (!(c.ema_decay >= 0.0 && c.ema_decay <= 1.0)) throw std::invalid_argument("train.ema_decay must lie in [0, 1]");
  if (!(c.ema_rampup >= 0.0 && c.ema_rampup <= 1.0)) throw std::invalid_argument("train.ema_rampup must lie in [0, 1]");
  if (!(c.pseudo_threshold >= 0.0)) throw std::invalid_argument("train.pseudo_threshold must be >= 0");
  if (c.inner_steps < 1) throw std::invalid_argument("train.inner_steps must be >= 1");
}

Optimizers make_optimizers(const TrainConfig& c) {
  Optimizers o;
  o.C = make_optimizer(c.optimizer);
  o.G = make_optimizer(c.optimizer);
  o.D = make_optimizer(c.optimizer);
  o.A = make_optimizer(c.optimizer);
  return o;
}

double ema_decay_at(const TrainConfig& cfg, std::int64_t step, std::int64_t total_steps) {
  const double ramp = std::max(1.0, std::round(cfg.ema_rampup * static_cast<double>(total_steps)));
  return cfg.ema_decay * std::min(1.0, static_cast<double>(step + 1) / ramp);
}

std::int64_t steps_per_epoch(const TrainConfig& cfg, const DatasetSplit& data) {
  if (cfg.steps_per_epoch > 0) return cfg.steps_per_epoch;
  const double l = static_cast<double>(data.labeled.size()) / static_cast<double>(cfg.labeled_batch);
  const double u = static_cast<double>(data.unlabeled.size()) / static_cast<double>(cfg.unlabeled_batch);
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(std::max(l, u))));
}

LossTerms train_step(ModelBundle& m, Optimizers& opt, const BatchPair& batch, const UAEBatch& uae,
                     const TrainConfig& cfg, const StepContext& ctx) {
  if (uae.z.rows() != uae.labels.rows()) throw std::invalid_argument("train_step: noise and label counts differ");
  const GanMode mode = cfg.gan_mode;
  const WeightConfig& w = cfg.weights;
  LossTerms terms;
  terms.mode = mode;

  // D ascends the C-D and G-D critic objectives.
  for (int k = 0; k < cfg.inner_steps; ++k) {
    spectral_normalize(m.D, m.spec.power_iterations);
    Tape t;
    t.track(Role::Discriminator);
    Var x_g = t.constant(generate_natural(m.G, uae.z, uae.labels, NormMode::TrainFrozenStats));
    Var x_u = t.constant(batch.unlabeled_x);
    Var ld = loss_D(t, m.D, t.constant(batch.labeled_x), t.constant(batch.labeled_y), mode);
    Var lg = loss_G(t, m.D, x_g, t.constant(uae.labels), mode, GanSide::Discriminator);
    Var lc = loss_C_gan(t, m.D, x_u, t.constant(soft_labels(m.C, batch.unlabeled_x, NormMode::TrainFrozenStats)), mode,
                        GanSide::Discriminator);
    Var obj = 2.0 * ld + lg + lc;
    checked(obj, "discriminator objective", ctx.step);
    t.backward(obj);
    apply(opt.D, m.D.layers, t, ctx.lr_gan, true, m.D.version);
    terms.L_D = ld.scalar();
  }

  // A ascends the adversarial loss through a fixed G.
  for (int k = 0; k < cfg.inner_steps; ++k) {
    Tape t;
    t.track(Role::Attacker);
    Var y = t.constant(uae.labels);
    Var x_tilde = m.G.forward(t, m.A.forward(t, t.constant(uae.z), y), y, NormMode::TrainFrozenStats);
    Var ladv = loss_adv(t, m.C, x_tilde, uae.labels, NormMode::TrainFrozenStats);
    checked(ladv, "attacker objective", ctx.step);
    t.backward(ladv);
    apply(opt.A, m.A.layers, t, ctx.lr_gan, true, m.A.version);
  }

  // C descends natural, adversarial, C-D and robust losses; teacher follows.
  {
    const Matrix x_tilde = generate_natural(m.G, perturb_seed(m.A, uae.z, uae.labels), uae.labels,
                                            NormMode::TrainFrozenStats);
    Tape t;
    t.track(Role::Classifier);
    Var x_u = t.constant(batch.unlabeled_x);
    Var lnat = loss_nat(t, m.C, m.teacher, t.constant(batch.labeled_x), batch.labeled_y, x_u, w.alpha, NormMode::Train);
    Var ladv = loss_adv(t, m.C, t.constant(x_tilde), uae.labels, NormMode::TrainFrozenStats);
    Var soft = ad::softmax_rows(m.C.logits(t, x_u, NormMode::TrainFrozenStats));
    Var lc = loss_C_gan(t, m.D, x_u, soft, mode, GanSide::Generator);
    Var obj = lnat;
    if (w.lambda != 0.0) obj = obj + w.lambda * ladv;
    if (w.gamma != 0.0) obj = obj + w.gamma * lc;
    if (w.beta != 0.0) {
      Var lr = loss_rae(t, m.C, batch.labeled_x, batch.labeled_y, cfg.rae_attack, NormMode::TrainFrozenStats);
      obj = obj + w.beta * lr;
      terms.L_r = checked(lr, "robust loss", ctx.step);
    }
    checked(obj, "classifier objective", ctx.step);
    t.backward(obj);
    apply(opt.C, m.C.layers, t, ctx.lr_classifier, false, m.C.version);
    ema_update(m.teacher, m.C, ema_decay_at(cfg, ctx.step, ctx.total_steps));
    terms.L_nat = lnat.scalar();
    terms.L_adv = ladv.scalar();
    terms.L_Cgan = lc.scalar();
  }

  // G descends its generator objective.
  {
    Tape t;
    t.track(Role::Generator);
    Var y = t.constant(uae.labels);
    Var x_g = m.G.forward(t, t.constant(uae.z), y, NormMode::Train);
    Var lg = loss_G(t, m.D, x_g, y, mode, GanSide::Generator);
    terms.L_G = checked(lg, "generator objective", ctx.step);
    t.backward(lg);
    apply(opt.G, m.G.layers, t, ctx.lr_gan, false, m.G.version);
  }

  terms.L_gan_total = loss_gan_total({terms.L_D, mode}, {terms.L_G, mode}, {terms.L_Cgan, mode});
  terms.total = total_objective(terms, w);
  return terms;
}

std::vector<LossTerms> pretrain(ModelBundle& m, Optimizers& opt, const DatasetSplit& data, const TrainConfig& cfg,
                                Rng& data_rng, Rng& noise_rng) {
  std::vector<LossTerms> out;
  if (cfg.pretrain_epochs == 0) return out;
  const std::int64_t spe = steps_per_epoch(cfg, data);
  const std::int64_t total = spe * cfg.pretrain_epochs;
  const GanMode mode = cfg.gan_mode;
  for (std::int64_t step = 0; step < total; ++step) {
    const BatchPair batch = sample_batch(data, cfg.labeled_batch, cfg.unlabeled_batch, data_rng);
    const Matrix z = sample_noise(noise_rng, batch.labeled_y.rows(), m.spec.noise_dim);
    const double lr = schedule_lr(cfg.optimizer, step, total);
    const double lr_gan = lr * cfg.gan_lr_scale * opt.gan_lr_factor;
    LossTerms terms;
    terms.mode = mode;
    {
      spectral_normalize(m.D, m.spec.power_iterations);
      Tape t;
      t.track(Role::Discriminator);
      Var ld = loss_D(t, m.D, t.constant(batch.labeled_x), t.constant(batch.labeled_y), mode);
      Var lg = loss_G(t, m.D, t.constant(generate_natural(m.G, z, batch.labeled_y)), t.constant(batch.labeled_y), mode,
                      GanSide::Discriminator);
      Var obj = ld + lg;
      checked(obj, "pretraining discriminator objective", step);
      t.backward(obj);
      apply(opt.D, m.D.layers, t, lr_gan, true, m.D.version);
      terms.L_D = ld.scalar();
    }
    {
      Tape t;
      t.track(Role::Classifier);
      Var lnat = loss_nat(t, m.C, m.teacher, t.constant(batch.labeled_x), batch.labeled_y,
                          t.constant(batch.unlabeled_x), cfg.weights.alpha, NormMode::Train);
      terms.L_nat = checked(lnat, "pretraining natural loss", step);
      t.backward(lnat);
      apply(opt.C, m.C.layers, t, lr, false, m.C.version);
      ema_update(m.teacher, m.C, ema_decay_at(cfg, step, total));
    }
    {
      Tape t;
      t.track(Role::Generator);
      Var y = t.constant(batch.labeled_y);
      Var lg = loss_G(t, m.D, m.G.forward(t, t.constant(z), y, NormMode::Train), y, mode, GanSide::Generator);
      terms.L_G = checked(lg, "pretraining generator objective", step);
      t.backward(lg);
      apply(opt.G, m.G.layers, t, lr_gan, false, m.G.version);
    }
    terms.total = terms.L_nat;
    out.push_back(terms);
  }
  return out;
}

std::string metrics_csv(const TrainReport& r) {
  std::ostringstream o;
  o << "epoch,L_D,L_G,L_Cgan,L_nat,L_adv,L_r,total,val_nat_acc,val_rob_acc,lr\n";
  for (std::size_t e = 0; e < r.epoch_losses.size(); ++e) {
    const auto& t = r.epoch_losses[e];
    o << e << ',' << fmt(t.L_D) << ',' << fmt(t.L_G) << ',' << fmt(t.L_Cgan) << ',' << fmt(t.L_nat) << ','
      << fmt(t.L_adv) << ',' << fmt(t.L_r) << ',' << fmt(t.total) << ',' << fmt(r.val_nat_acc[e]) << ','
      << fmt(r.val_rob_acc[e]) << ',' << fmt(r.lr[e]) << '\n';
  }
  return o.str();
}

std::string steps_csv(const TrainReport& r) {
  std::ostringstream o;
  o << "step,L_D,L_G,L_Cgan,L_gan_total,L_nat,L_adv,L_r,total\n";
  for (std::size_t i = 0; i < r.step_losses.size(); ++i) {
    const auto& t = r.step_losses[i];
    o << i << ',' << fmt(t.L_D) << ',' << fmt(t.L_G) << ',' << fmt(t.L_Cgan) << ',' << fmt(t.L_gan_total) << ','
      << fmt(t.L_nat) << ',' << fmt(t.L_adv) << ',' << fmt(t.L_r) << ',' << fmt(t.total) << '\n';
  }
  return o.str();
}

FitResult fit(const TrainConfig& cfg, const NetSpec& spec, const DatasetSplit& data, const std::filesystem::path& out_dir) {
  validate(cfg);
  const auto started = std::chrono::steady_clock::now();
  ModelBundle m = build_models(spec, data.shape, data.num_classes, cfg.seed);
  Rng data_rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 1);
  Rng noise_rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 2);

  const bool write = !out_dir.empty();
  const auto ckpt_dir = out_dir / "checkpoints";
  if (write) {
    std::filesystem::create_directories(ckpt_dir);
    write_split_manifest(data, out_dir / "splits");
  }
  const auto write_file = [&](const char* name, const std::string& text) {
    std::ofstream f(out_dir / name, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + (out_dir / name).string());
    f << text;
  };

  {
    Optimizers pre = make_optimizers(cfg);
    pretrain(m, pre, data, cfg, data_rng, noise_rng);
  }

  FitResult result;
  TrainReport& report = result.report;
  Optimizers opt = make_optimizers(cfg);
  const std::int64_t spe = steps_per_epoch(cfg, data);
  const std::int64_t total = spe * cfg.epochs;
  std::int64_t global_step = 0;
  double best_metric = -1.0;
  int since_best = 0;
  result.best = m;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const ModelBundle snap_models = m;
    const Optimizers snap_opt = opt;
    const Rng snap_data = data_rng, snap_noise = noise_rng;
    const std::int64_t snap_step = global_step;
    const std::size_t first = report.step_losses.size();
    double lr = 0.0;
    try {
      const DatasetSplit pool = cfg.pseudo_labels ? augment_with_pseudo_labels(data, m.C, cfg.pseudo_threshold) : data;
      for (std::int64_t s = 0; s < spe; ++s, ++global_step) {
        const BatchPair batch = sample_batch(pool, cfg.labeled_batch, cfg.unlabeled_batch, data_rng);
        UAEBatch uae;
        uae.labels = batch.labeled_y;
        uae.z = sample_noise(noise_rng, batch.labeled_y.rows(), spec.noise_dim);
        StepContext ctx;
        lr = schedule_lr(cfg.optimizer, global_step, total);
        ctx.lr_classifier = lr;
        ctx.lr_gan = lr * cfg.gan_lr_scale * opt.gan_lr_factor;
        ctx.step = global_step;
        ctx.total_steps = total;
        report.step_losses.push_back(train_step(m, opt, batch, uae, cfg, ctx));
      }
    } catch (const NonFiniteLoss&) {
      if (report.gan_lr_halved) throw;
      m = snap_models;
      opt = snap_opt;
      data_rng = snap_data;
      noise_rng = snap_noise;
      global_step = snap_step;
      report.step_losses.resize(first);
      opt.gan_lr_factor *= 0.5;
      report.gan_lr_halved = true;
      --epoch;
      continue;
    }

    report.epoch_losses.push_back(mean_terms(report.step_losses, first, cfg.gan_mode));
    report.lr.push_back(lr);
    double nat = std::nan(""), rob = std::nan("");
    if (data.validation.size() > 0) {
      nat = natural_accuracy(m.C, data.validation);
      rob = evaluate_robust_accuracy(m.C, cfg.val_attack, data.validation);
    }
    report.val_nat_acc.push_back(nat);
    report.val_rob_acc.push_back(rob);
    report.stop_epoch = epoch + 1;

    const double metric = cfg.early_stopping.metric == "val_nat_acc" ? nat : rob;
    const bool improved = std::isnan(metric) || report.best_epoch < 0 || metric > best_metric;
    if (improved) {
      best_metric = metric;
      report.best_epoch = epoch;
      since_best = 0;
      result.best = m;
      if (write) {
        report.best_checkpoint = (ckpt_dir / "best.ckpt").string();
        save_checkpoint(ckpt_dir / "best.ckpt", m, {rng_state(data_rng, noise_rng), epoch, global_step});
      }
    } else {
      ++since_best;
    }
    if (write) {
      write_file("metrics.csv", metrics_csv(report));
      save_checkpoint(ckpt_dir / "last.ckpt", m, {rng_state(data_rng, noise_rng), epoch, global_step});
    }
    if (since_best >= cfg.early_stopping.patience) break;
  }

  if (write) {
    write_file("metrics.csv", metrics_csv(report));
    write_file("steps.csv", steps_csv(report));
    if (cfg.epochs == 0) save_checkpoint(ckpt_dir / "last.ckpt", m, {rng_state(data_rng, noise_rng), 0, 0});
  }
  result.last = std::move(m);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

}  // namespace puat
