#include "doctest.h"

#include "puat/checkpoint.hpp"
#include "puat/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

using namespace puat;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("puat_cfg_" + std::to_string(::getpid()) + "_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

std::string slurp(const std::filesystem::path& f) {
  std::ifstream in(f, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const std::filesystem::path& f, const std::string& text) {
  std::ofstream out(f, std::ios::binary);
  out << text;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + PUAT_CLI + "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const char* kTinyConfig = R"(seed = 3
[dataset]
name = gauss2d
train_size = 400
test_size = 90
[net]
classifier_width = 8
generator_channels = 8
discriminator_channels = 8
attacker_hidden = 8
noise_dim = 3
[train]
epochs = 2
steps_per_epoch = 3
labeled_batch = 16
unlabeled_batch = 32
pseudo_labels = false
rae_attack = pgd eps=0.1 steps=2 step=0.05
val_attack = pgd eps=0.1 steps=2 step=0.05
[attacks]
attack = pgd eps=0.1 steps=3 step=0.05
attack = gpgd eps=0.1 steps=3 step=0.1
[eval]
per_class = 10
)";

}  // namespace

TEST_CASE("empty config keeps defaults") {
  const ExperimentConfig c = parse_config_text("");
  CHECK(c == ExperimentConfig{});
  CHECK(c.attacks.size() == 6);
  CHECK(c.train.weights.lambda == 10.0);
  CHECK(c.train.optimizer.lr == 0.2);
}

TEST_CASE("config errors name the key") {
  CHECK_THROWS_WITH_AS(parse_config_text("[train]\nlambda = -1\n"), doctest::Contains("train.lambda"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_text("[train]\nlearning_speed = 3\n"), doctest::Contains("learning_speed"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_text("[train]\nepochs = many\n"), doctest::Contains("train.epochs"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("[nowhere]\nx = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("[train]\nlabeled_batch\n"), ConfigError);
}

TEST_CASE("attack lines") {
  CHECK(parse_attack("pgd eps=8/255 steps=20 step=1/255") == pgd_preset(8));
  CHECK(parse_attack("gpgd eps=0.1") == gpgd_preset(0.1));
  CHECK(parse_attack("usong") == latent_search_preset());
  const AttackSpec s = parse_attack("usong eps=0.02 steps=50 step=0.05 lambda1=10 lambda2=1 label=weak");
  CHECK(s.steps == 50);
  CHECK(s.lambda1 == 10);
  CHECK(s.label == "weak");
  CHECK(parse_attack(format_attack(s)) == s);
  CHECK(parse_attack(format_attack(pgd_preset(4))) == pgd_preset(4));
  CHECK_THROWS(parse_attack("pgd eps"));
  CHECK_THROWS(parse_attack("pgd eps=-1"));
  CHECK_THROWS(parse_attack("fgsm eps=0.1"));
}

TEST_CASE("serialize round trip") {
  ExperimentConfig c = parse_config_text(kTinyConfig);
  CHECK(c.seed == 3);
  CHECK(c.train.seed == 3);
  CHECK(c.load.seed == 3);
  CHECK(c.attacks.size() == 2);
  CHECK(c.net.noise_dim == 3);
  c.sweep_betas = {0, 2.5};
  c.train.gan_mode = GanMode::Linear;
  c.train.optimizer.schedule = ScheduleKind::Constant;
  c.train.weights.gamma = 0.125;
  CHECK(parse_config_text(serialize_config(c)) == c);
  apply_seed(c, 11);
  CHECK(c.train.seed == 11);
  CHECK(c.load.seed == 11);
  c.data_root = "/somewhere";
  CHECK(resolve_data_root(c) == "/somewhere");
}

TEST_CASE("checkpoint round trip") {
  NetSpec spec;
  spec.classifier_width = 5;
  spec.noise_dim = 3;
  ModelBundle m = build_models(spec, DataShape::vector(2), 3, 4);
  spectral_normalize(m.D, 3);
  const auto dir = scratch("ckpt");
  save_checkpoint(dir / "m.ckpt", m, {"engine 1 2 3", 7, 140});
  CheckpointMeta meta;
  const ModelBundle back = load_checkpoint(dir / "m.ckpt", &meta);
  CHECK(meta.rng_state == "engine 1 2 3");
  CHECK(meta.epoch == 7);
  CHECK(meta.step == 140);
  CHECK(back.spec == m.spec);
  CHECK(back.num_classes == 3);
  const std::vector<std::pair<const LayerStore*, const LayerStore*>> stores{
      {&m.C.layers, &back.C.layers}, {&m.teacher.layers, &back.teacher.layers}, {&m.G.layers, &back.G.layers},
      {&m.D.layers, &back.D.layers}, {&m.A.layers, &back.A.layers}};
  for (const auto& [a, b] : stores) {
    const auto pa = a->parameters(), pb = b->parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);
  }
  for (std::size_t i = 0; i < m.D.layers.linear.size(); ++i) CHECK(m.D.layers.linear[i].sn.u == back.D.layers.linear[i].sn.u);
  save_checkpoint(dir / "again.ckpt", back, meta);
  CHECK(slurp(dir / "m.ckpt") == slurp(dir / "again.ckpt"));

  write(dir / "bad.ckpt", "NOTACHECKPOINT\n");
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), CheckpointError);
  const std::string full = slurp(dir / "m.ckpt");
  write(dir / "short.ckpt", full.substr(0, full.size() - 40));
  CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), CheckpointError);

  NetSpec s;
  CHECK(set_netspec_field(s, "noise_dim", "12"));
  CHECK(s.noise_dim == 12);
  CHECK_FALSE(set_netspec_field(s, "dropout", "0.5"));
  CHECK(netspec_lines(s).find("noise_dim = 12") != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("command line") {
  const auto dir = scratch("cli");
  write(dir / "tiny.ini", kTinyConfig);
  const std::string cfg = "--config \"" + (dir / "tiny.ini").string() + "\"";

  CHECK(run_cli("verify-theory --out \"" + (dir / "theory").string() + "\"") == 0);
  const std::string table = slurp(dir / "theory" / "theory.txt");
  CHECK(table.find("uae_equals_rae") != std::string::npos);
  CHECK(table.find("FAIL") == std::string::npos);

  CHECK(run_cli("train " + cfg + " --out \"" + (dir / "a").string() + "\"") == 0);
  CHECK(run_cli("train " + cfg + " --out \"" + (dir / "b").string() + "\"") == 0);
  CHECK(slurp(dir / "a" / "metrics.csv") == slurp(dir / "b" / "metrics.csv"));
  CHECK(slurp(dir / "a" / "checkpoints" / "last.ckpt") == slurp(dir / "b" / "checkpoints" / "last.ckpt"));
  CHECK(run_cli("train " + cfg + " --seed 4 --out \"" + (dir / "c").string() + "\"") == 0);
  CHECK(slurp(dir / "a" / "steps.csv") != slurp(dir / "c" / "steps.csv"));

  const std::string ckpt = "--checkpoint \"" + (dir / "a" / "checkpoints" / "last.ckpt").string() + "\"";
  CHECK(run_cli("attack " + cfg + " " + ckpt + " --out \"" + (dir / "atk").string() + "\"") == 0);
  const std::string report = slurp(dir / "atk" / "attack_report.csv");
  CHECK(report.rfind("attack,natural_accuracy,robust_accuracy\n", 0) == 0);
  CHECK(std::count(report.begin(), report.end(), '\n') == 3);

  CHECK(run_cli("eval " + cfg + " " + ckpt + " --out \"" + (dir / "ev").string() + "\"") == 0);
  CHECK(std::filesystem::exists(dir / "ev" / "class_counts.csv"));
  CHECK(std::filesystem::exists(dir / "ev" / "alignment.csv"));

  CHECK(run_cli("") == 1);
  CHECK(run_cli("attack " + cfg) == 1);
  CHECK(run_cli("train --bogus") == 1);
  write(dir / "broken.ini", "[train]\nlambda = -2\n");
  CHECK(run_cli("train --config \"" + (dir / "broken.ini").string() + "\"") == 1);
  CHECK(run_cli("attack " + cfg + " --checkpoint \"" + (dir / "nothing.ckpt").string() + "\"") == 2);
  std::filesystem::remove_all(dir);
}
