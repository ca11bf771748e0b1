#include "doctest.h"

#include "puat/trainer.hpp"

#include <cmath>

using namespace puat;

namespace {

NetSpec small_spec() {
  NetSpec s;
  s.classifier_depth = 1;
  s.classifier_width = 8;
  s.generator_channels = 8;
  s.discriminator_channels = 8;
  s.attacker_hidden = 8;
  s.noise_dim = 3;
  s.label_embed_dim = 2;
  return s;
}

DatasetSplit toy_data() {
  LoadOptions o;
  o.seed = 2;
  o.n_labeled = 50;
  o.synthetic.train_size = 400;
  o.synthetic.test_size = 60;
  return load_dataset("gauss2d", "unused", o);
}

TrainConfig quick_config() {
  TrainConfig c;
  c.labeled_batch = 16;
  c.unlabeled_batch = 32;
  c.steps_per_epoch = 3;
  c.epochs = 2;
  c.pseudo_labels = false;
  c.optimizer.lr = 0.05;
  c.gan_lr_scale = 1.0;
  c.rae_attack = pgd_preset(8);
  c.rae_attack.steps = 2;
  c.val_attack = c.rae_attack;
  return c;
}

std::vector<Matrix> snapshot(const LayerStore& s) {
  std::vector<Matrix> out;
  for (const auto* p : s.parameters()) out.push_back(p->value);
  return out;
}

struct Step {
  BatchPair batch;
  UAEBatch uae;
};

Step draw(const DatasetSplit& d, const TrainConfig& c, int noise_dim, std::uint64_t seed) {
  Rng rng(seed);
  Step s;
  s.batch = sample_batch(d, c.labeled_batch, c.unlabeled_batch, rng);
  s.uae.labels = s.batch.labeled_y;
  s.uae.z = sample_noise(rng, s.batch.labeled_y.rows(), noise_dim);
  return s;
}

}  // namespace

TEST_CASE("optimizer defaults") {
  const OptimizerConfig c;
  CHECK(c.lr == 0.2);
  CHECK(c.weight_decay == 5e-4);
  CHECK(c.momentum == 0.9);
  CHECK(c.nesterov);
  CHECK(parse_schedule(schedule_name(ScheduleKind::Constant)) == ScheduleKind::Constant);
  OptimizerConfig bad;
  bad.lr = -1;
  CHECK_THROWS_AS(validate(bad), std::invalid_argument);
}

TEST_CASE("SGD steps") {
  Parameter p;
  p.value = Matrix::Constant(1, 1, 1.0);
  const std::vector<Parameter*> ps{&p};
  const std::vector<Matrix> g{Matrix::Constant(1, 1, 0.5)};

  OptimizerConfig plain;
  plain.momentum = 0;
  plain.weight_decay = 0;
  Sgd a(plain);
  a.step(ps, g, 0.1);
  CHECK(p.value(0, 0) == doctest::Approx(0.95));
  a.step(ps, g, 0.1, true);
  CHECK(p.value(0, 0) == doctest::Approx(1.0));

  // Worked by hand: wd 0.1, momentum 0.9, Nesterov, lr 0.1.
  OptimizerConfig nes;
  nes.weight_decay = 0.1;
  p.value(0, 0) = 1.0;
  Sgd b(nes);
  b.step(ps, g, 0.1);
  CHECK(p.value(0, 0) == doctest::Approx(0.886).epsilon(1e-12));
  b.step(ps, g, 0.1);
  CHECK(p.value(0, 0) == doctest::Approx(0.725566).epsilon(1e-12));

  // Weight decay shrinks even while ascending.
  OptimizerConfig decay;
  decay.momentum = 0;
  decay.weight_decay = 1.0;
  p.value(0, 0) = 1.0;
  Sgd c(decay);
  c.step(ps, {Matrix::Zero(1, 1)}, 0.1, true);
  CHECK(p.value(0, 0) == doctest::Approx(0.9));
  CHECK_THROWS_AS(c.step(ps, {}, 0.1), std::invalid_argument);
}

TEST_CASE("learning-rate schedule") {
  OptimizerConfig c;
  c.lr = 0.2;
  CHECK(schedule_lr(c, 0, 1000) == doctest::Approx(0.2 / 25));
  CHECK(schedule_lr(c, 300, 1000) == doctest::Approx(0.2));
  const double end = 0.2 / 25 / 1e4;
  CHECK(schedule_lr(c, 650, 1000) == doctest::Approx(end + (0.2 - end) / 2));
  CHECK(schedule_lr(c, 1000, 1000) == doctest::Approx(end));
  double prev = 0;
  for (int s = 0; s <= 300; ++s) {
    const double v = schedule_lr(c, s, 1000);
    CHECK(v >= prev);
    prev = v;
  }
  for (int s = 300; s <= 1000; ++s) {
    const double v = schedule_lr(c, s, 1000);
    CHECK(v <= prev);
    prev = v;
  }
  c.schedule = ScheduleKind::Constant;
  CHECK(schedule_lr(c, 650, 1000) == 0.2);
}

TEST_CASE("EMA ramp and steps per epoch") {
  TrainConfig c;
  c.ema_decay = 0.9;
  c.ema_rampup = 0.1;
  CHECK(ema_decay_at(c, 0, 100) == doctest::Approx(0.09));
  CHECK(ema_decay_at(c, 9, 100) == doctest::Approx(0.9));
  CHECK(ema_decay_at(c, 50, 100) == doctest::Approx(0.9));
  c.ema_rampup = 0;
  CHECK(ema_decay_at(c, 0, 100) == doctest::Approx(0.9));

  DatasetSplit d;
  d.labeled.x = Matrix::Zero(40, 2);
  d.unlabeled.x = Matrix::Zero(360, 2);
  c.labeled_batch = 16;
  c.unlabeled_batch = 128;
  CHECK(steps_per_epoch(c, d) == 3);
  c.steps_per_epoch = 7;
  CHECK(steps_per_epoch(c, d) == 7);
}

TEST_CASE("config validation") {
  TrainConfig c = quick_config();
  CHECK_NOTHROW(validate(c));
  c.labeled_batch = 0;
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  c = quick_config();
  c.early_stopping.metric = "loss";
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  c = quick_config();
  c.ema_decay = 1.5;
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
}

TEST_CASE("pretraining") {
  const DatasetSplit d = toy_data();
  TrainConfig c = quick_config();
  ModelBundle m = build_models(small_spec(), d.shape, d.num_classes, 1);
  const auto c0 = snapshot(m.C.layers), a0 = snapshot(m.A.layers), g0 = snapshot(m.G.layers);
  Optimizers opt = make_optimizers(c);
  Rng r1(1), r2(2);
  c.pretrain_epochs = 0;
  CHECK(pretrain(m, opt, d, c, r1, r2).empty());
  CHECK(snapshot(m.C.layers) == c0);

  c.pretrain_epochs = 10;
  c.steps_per_epoch = 5;
  c.optimizer.schedule = ScheduleKind::Constant;
  const auto terms = pretrain(m, opt, d, c, r1, r2);
  CHECK(terms.size() == 50);
  CHECK(snapshot(m.A.layers) == a0);
  CHECK(m.A.version == 0);
  CHECK(snapshot(m.C.layers) != c0);
  CHECK(snapshot(m.G.layers) != g0);
  double first = 0, last = 0;
  for (int i = 0; i < 5; ++i) {
    first += terms[static_cast<std::size_t>(i)].L_nat;
    last += terms[terms.size() - 1 - static_cast<std::size_t>(i)].L_nat;
  }
  CHECK(last < first);
}

TEST_CASE("a training step with zero learning rates leaves every network unchanged") {
  const DatasetSplit d = toy_data();
  const TrainConfig c = quick_config();
  ModelBundle m = build_models(small_spec(), d.shape, d.num_classes, 3);
  const auto before = std::vector{snapshot(m.C.layers), snapshot(m.G.layers), snapshot(m.D.layers),
                                  snapshot(m.A.layers), snapshot(m.teacher.layers)};
  Optimizers opt = make_optimizers(c);
  const Step s = draw(d, c, 3, 4);
  const LossTerms t = train_step(m, opt, s.batch, s.uae, c, {0.0, 0.0, 0, 10});
  CHECK(snapshot(m.C.layers) == before[0]);
  CHECK(snapshot(m.G.layers) == before[1]);
  CHECK(snapshot(m.D.layers) == before[2]);
  CHECK(snapshot(m.A.layers) == before[3]);
  CHECK(snapshot(m.teacher.layers) == before[4]);
  CHECK(m.C.version == 1);
  CHECK(m.G.version == 1);
  CHECK(m.D.version == 1);
  CHECK(m.A.version == 1);
  CHECK(t.finite());
  CHECK(t.L_r.has_value());
  CHECK(t.L_gan_total == doctest::Approx(t.L_D + t.L_G / 2 + t.L_Cgan / 2));
  CHECK(t.total == doctest::Approx(total_objective(t, c.weights)));
}

TEST_CASE("inner ascent steps") {
  const DatasetSplit d = toy_data();
  TrainConfig c = quick_config();
  c.inner_steps = 3;
  ModelBundle m = build_models(small_spec(), d.shape, d.num_classes, 3);
  Optimizers opt = make_optimizers(c);
  const Step s = draw(d, c, 3, 4);
  train_step(m, opt, s.batch, s.uae, c, {0.05, 0.05, 0, 10});
  CHECK(m.D.version == 3);
  CHECK(m.A.version == 3);
  CHECK(m.C.version == 1);
  CHECK(m.G.version == 1);
}

TEST_CASE("one step moves all four networks and the teacher follows") {
  const DatasetSplit d = toy_data();
  TrainConfig c = quick_config();
  c.ema_decay = 0.8;
  c.ema_rampup = 0;
  ModelBundle m = build_models(small_spec(), d.shape, d.num_classes, 5);
  const auto c0 = snapshot(m.C.layers), g0 = snapshot(m.G.layers), d0 = snapshot(m.D.layers),
             a0 = snapshot(m.A.layers), t0 = snapshot(m.teacher.layers);
  Optimizers opt = make_optimizers(c);
  const Step s = draw(d, c, 3, 6);
  train_step(m, opt, s.batch, s.uae, c, {0.05, 0.05, 0, 10});
  CHECK(snapshot(m.C.layers) != c0);
  CHECK(snapshot(m.G.layers) != g0);
  CHECK(snapshot(m.D.layers) != d0);
  CHECK(snapshot(m.A.layers) != a0);
  const auto c1 = snapshot(m.C.layers), t1 = snapshot(m.teacher.layers);
  for (std::size_t i = 0; i < t1.size(); ++i) CHECK(t1[i].isApprox(0.8 * t0[i] + 0.2 * c1[i], 1e-14));
}

TEST_CASE("with zero weights the classifier follows the natural loss alone") {
  const DatasetSplit d = toy_data();
  TrainConfig c = quick_config();
  c.weights = {0, 0, 0, 50};
  c.optimizer.momentum = 0;
  c.optimizer.weight_decay = 0;
  ModelBundle m = build_models(small_spec(), d.shape, d.num_classes, 7);
  ModelBundle ref = m;
  Optimizers opt = make_optimizers(c);
  const Step s = draw(d, c, 3, 8);
  const LossTerms t = train_step(m, opt, s.batch, s.uae, c, {0.05, 0.05, 0, 10});
  CHECK_FALSE(t.L_r.has_value());
  CHECK(t.total == t.L_nat);

  Tape tape;
  tape.track(Role::Classifier);
  tape.backward(loss_nat(tape, ref.C, ref.teacher, tape.constant(s.batch.labeled_x), s.batch.labeled_y,
                         tape.constant(s.batch.unlabeled_x), 50, NormMode::Train));
  const auto ps = ref.C.layers.parameters();
  const auto got = m.C.layers.parameters();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const Matrix expected = ps[i]->value - 0.05 * tape.grad(*ps[i]);
    CHECK((got[i]->value - expected).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("fit stops on patience and is deterministic") {
  const DatasetSplit d = toy_data();
  TrainConfig c = quick_config();
  c.optimizer.lr = 1e-12;  // validation keeps accuracy frozen
  c.epochs = 5;
  c.early_stopping.patience = 1;
  const FitResult r = fit(c, small_spec(), d);
  CHECK(r.report.stop_epoch == 2);
  CHECK(r.report.best_epoch == 0);
  CHECK(r.report.epoch_losses.size() == 2);
  CHECK(r.report.step_losses.size() == 6);

  c = quick_config();
  c.pretrain_epochs = 1;
  const FitResult a = fit(c, small_spec(), d);
  const FitResult b = fit(c, small_spec(), d);
  CHECK(metrics_csv(a.report) == metrics_csv(b.report));
  CHECK(steps_csv(a.report) == steps_csv(b.report));
  CHECK(snapshot(a.last.C.layers) == snapshot(b.last.C.layers));
  c.seed = 1;
  CHECK(steps_csv(fit(c, small_spec(), d).report) != steps_csv(a.report));
  CHECK(metrics_csv(a.report).rfind("epoch,L_D,L_G,L_Cgan,L_nat,L_adv,L_r,total,val_nat_acc,val_rob_acc,lr\n", 0) == 0);
}
