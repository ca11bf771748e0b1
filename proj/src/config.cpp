#include "puat/config.hpp"

#include "puat/checkpoint.hpp"
#include "puat/text.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace puat {
namespace {

[[noreturn]] void fail(const std::string& key, const std::string& what) { throw ConfigError(key + ": " + what); }

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) fail(key, what);
}

std::string lower(std::string s) {
  for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

struct Fields {
  using Setter = std::function<void(const std::string&)>;
  std::map<std::string, Setter> set;
};

Fields fields_for(ExperimentConfig& c, bool& attacks_seen) {
  Fields f;
  auto& s = f.set;
  auto& t = c.train;
  const auto num = [](double& target) { return [&target](const std::string& v) { target = parse_number(v); }; };
  const auto i64 = [](std::int64_t& target) { return [&target](const std::string& v) { target = parse_integer(v); }; };
  const auto i32 = [](int& target) { return [&target](const std::string& v) { target = static_cast<int>(parse_integer(v)); }; };
  const auto flag = [](bool& target) { return [&target](const std::string& v) { target = parse_bool(v); }; };

  s["seed"] = [&c](const std::string& v) {
    const auto n = parse_integer(v);
    if (n < 0) throw std::invalid_argument("must be >= 0");
    apply_seed(c, static_cast<std::uint64_t>(n));
  };

  s["dataset.name"] = [&c](const std::string& v) { c.dataset = v; };
  s["dataset.root"] = [&c](const std::string& v) { c.data_root = v; };
  s["dataset.n_labeled"] = i64(c.load.n_labeled);
  s["dataset.validation_fraction"] = num(c.load.validation_fraction);
  s["dataset.train_size"] = i64(c.load.synthetic.train_size);
  s["dataset.test_size"] = i64(c.load.synthetic.test_size);
  s["dataset.ring_classes"] = i32(c.load.synthetic.ring_classes);
  s["dataset.ring_noise"] = num(c.load.synthetic.ring_noise);
  s["dataset.component"] = [&c](const std::string& v) {
    const auto parts = split(v, ' ');
    std::vector<double> vals;
    for (const auto& p : parts)
      if (!trim(p).empty()) vals.push_back(parse_number(p));
    if (vals.size() != 4) throw std::invalid_argument("expects 'mean_x mean_y std_x std_y'");
    c.load.synthetic.components.push_back({vals[0], vals[1], vals[2], vals[3]});
  };

  for (const char* key : {"classifier", "classifier_depth", "classifier_width", "generator_channels",
                          "discriminator_channels", "attacker_hidden", "noise_dim", "label_embed_dim",
                          "power_iterations", "attacker_init_scale", "attacker_clamp"}) {
    const std::string k = key;
    s["net." + k] = [&c, k](const std::string& v) { set_netspec_field(c.net, k, v); };
  }

  s["train.lambda"] = num(t.weights.lambda);
  s["train.gamma"] = num(t.weights.gamma);
  s["train.beta"] = num(t.weights.beta);
  s["train.alpha"] = num(t.weights.alpha);
  s["train.lr"] = num(t.optimizer.lr);
  s["train.weight_decay"] = num(t.optimizer.weight_decay);
  s["train.momentum"] = num(t.optimizer.momentum);
  s["train.nesterov"] = flag(t.optimizer.nesterov);
  s["train.schedule"] = [&t](const std::string& v) { t.optimizer.schedule = parse_schedule(v); };
  s["train.warmup_fraction"] = num(t.optimizer.warmup_fraction);
  s["train.div_factor"] = num(t.optimizer.div_factor);
  s["train.final_div_factor"] = num(t.optimizer.final_div_factor);
  s["train.gan_lr_scale"] = num(t.gan_lr_scale);
  s["train.labeled_batch"] = i64(t.labeled_batch);
  s["train.unlabeled_batch"] = i64(t.unlabeled_batch);
  s["train.pretrain_epochs"] = i32(t.pretrain_epochs);
  s["train.epochs"] = i32(t.epochs);
  s["train.steps_per_epoch"] = i64(t.steps_per_epoch);
  s["train.early_stopping_metric"] = [&t](const std::string& v) { t.early_stopping.metric = v; };
  s["train.patience"] = i32(t.early_stopping.patience);
  s["train.gan_mode"] = [&t](const std::string& v) { t.gan_mode = parse_gan_mode(v); };
  s["train.ema_decay"] = num(t.ema_decay);
  s["train.ema_rampup"] = num(t.ema_rampup);
  s["train.rae_attack"] = [&t](const std::string& v) { t.rae_attack = parse_attack(v); };
  s["train.val_attack"] = [&t](const std::string& v) { t.val_attack = parse_attack(v); };
  s["train.pseudo_labels"] = flag(t.pseudo_labels);
  s["train.pseudo_threshold"] = num(t.pseudo_threshold);
  s["train.inner_steps"] = i32(t.inner_steps);

  s["attacks.attack"] = [&c, &attacks_seen](const std::string& v) {
    if (!attacks_seen) c.attacks.clear();
    attacks_seen = true;
    c.attacks.push_back(parse_attack(v));
  };

  s["output.dir"] = [&c](const std::string& v) { c.output_dir = v; };

  s["sweep.betas"] = [&c](const std::string& v) {
    c.sweep_betas.clear();
    for (const auto& p : split(v, ','))
      if (!trim(p).empty()) c.sweep_betas.push_back(parse_number(p));
  };
  s["eval.per_class"] = i32(c.alignment_per_class);
  return f;
}

std::string join_numbers(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_exact(v[i]);
  return out;
}

}  // namespace

std::vector<AttackSpec> ExperimentConfig::default_battery() {
  return {pgd_preset(2.0), pgd_preset(4.0), pgd_preset(8.0), gpgd_preset(0.01), gpgd_preset(0.1),
          latent_search_preset()};
}

AttackSpec parse_attack(const std::string& line) {
  std::istringstream in(line);
  std::string word;
  if (!(in >> word)) throw std::invalid_argument("empty attack entry");
  AttackSpec spec;
  const AttackFamily family = parse_family(lower(word));
  switch (family) {
    case AttackFamily::PixelPgd: spec = pgd_preset(8.0); break;
    case AttackFamily::LatentPgd: spec = gpgd_preset(0.1); break;
    case AttackFamily::LatentSearch: spec = latent_search_preset(); break;
  }
  while (in >> word) {
    const auto eq = word.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("attack option '" + word + "' is not key=value");
    const std::string key = word.substr(0, eq), value = word.substr(eq + 1);
    if (key == "eps") spec.epsilon = parse_number(value);
    else if (key == "step") spec.step_size = parse_number(value);
    else if (key == "steps") spec.steps = static_cast<int>(parse_integer(value));
    else if (key == "lambda1") spec.lambda1 = parse_number(value);
    else if (key == "lambda2") spec.lambda2 = parse_number(value);
    else if (key == "label") spec.label = value;
    else throw std::invalid_argument("unknown attack option '" + key + "'");
  }
  validate(spec);
  return spec;
}

std::string format_attack(const AttackSpec& spec) {
  std::string out = family_name(spec.family) + " eps=" + format_exact(spec.epsilon) + " steps=" +
                    std::to_string(spec.steps) + " step=" + format_exact(spec.step_size);
  if (spec.family != AttackFamily::PixelPgd || spec.lambda1 != 100.0 || spec.lambda2 != 100.0)
    out += " lambda1=" + format_exact(spec.lambda1) + " lambda2=" + format_exact(spec.lambda2);
  if (!spec.label.empty()) out += " label=" + spec.label;
  return out;
}

void apply_seed(ExperimentConfig& c, std::uint64_t seed) {
  c.seed = seed;
  c.load.seed = seed;
  c.train.seed = seed;
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig c;
  bool attacks_seen = false;
  bool components_seen = false;
  Fields f = fields_for(c, attacks_seen);
  std::string section;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = raw;
    if (const auto hash = line.find('#'); hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = (section.empty() ? "" : section + ".") + trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = f.set.find(key);
    if (it == f.set.end()) fail(key, "unknown key");
    if (key == "dataset.component" && !components_seen) {
      c.load.synthetic.components.clear();
      components_seen = true;
    }
    try {
      it->second(value);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      fail(key, std::string("invalid value '") + value + "': " + e.what());
    }
  }
  validate(c);
  return c;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config_text(text.str());
}

void validate(const ExperimentConfig& c) {
  const auto& t = c.train;
  const auto& o = t.optimizer;
  const auto nonneg = [](double v, const std::string& key) { require(v >= 0.0 && std::isfinite(v), key, "must be >= 0"); };

  DatasetProfile profile;
  try {
    profile = dataset_profile(c.dataset);
  } catch (const std::exception& e) {
    fail("dataset.name", e.what());
  }
  require(c.load.n_labeled == -1 || c.load.n_labeled > 0, "dataset.n_labeled", "must be positive or -1");
  require(c.load.validation_fraction >= 0.0 && c.load.validation_fraction < 1.0, "dataset.validation_fraction",
          "must lie in [0, 1)");
  require(c.load.synthetic.train_size > 0, "dataset.train_size", "must be positive");
  require(c.load.synthetic.test_size > 0, "dataset.test_size", "must be positive");
  require(c.load.synthetic.ring_classes >= 2, "dataset.ring_classes", "must be >= 2");
  nonneg(c.load.synthetic.ring_noise, "dataset.ring_noise");
  for (const auto& g : c.load.synthetic.components)
    require(g.std_x > 0 && g.std_y > 0, "dataset.component", "standard deviations must be positive");

  try {
    validate(c.net, profile.shape, profile.num_classes);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }

  nonneg(t.weights.lambda, "train.lambda");
  nonneg(t.weights.gamma, "train.gamma");
  nonneg(t.weights.beta, "train.beta");
  nonneg(t.weights.alpha, "train.alpha");
  require(o.lr > 0 && std::isfinite(o.lr), "train.lr", "must be > 0");
  nonneg(o.weight_decay, "train.weight_decay");
  require(o.momentum >= 0 && o.momentum < 1, "train.momentum", "must lie in [0, 1)");
  require(o.warmup_fraction > 0 && o.warmup_fraction < 1, "train.warmup_fraction", "must lie in (0, 1)");
  require(o.div_factor >= 1, "train.div_factor", "must be >= 1");
  require(o.final_div_factor >= 1, "train.final_div_factor", "must be >= 1");
  nonneg(t.gan_lr_scale, "train.gan_lr_scale");
  require(t.labeled_batch > 0, "train.labeled_batch", "must be positive");
  require(t.unlabeled_batch > 0, "train.unlabeled_batch", "must be positive");
  require(t.pretrain_epochs >= 0, "train.pretrain_epochs", "must be >= 0");
  require(t.epochs >= 0, "train.epochs", "must be >= 0");
  require(t.steps_per_epoch >= 0, "train.steps_per_epoch", "must be >= 0");
  require(t.early_stopping.metric == "val_rob_acc" || t.early_stopping.metric == "val_nat_acc",
          "train.early_stopping_metric", "must be val_rob_acc or val_nat_acc");
  require(t.early_stopping.patience >= 1, "train.patience", "must be >= 1");
  require(t.ema_decay >= 0 && t.ema_decay <= 1, "train.ema_decay", "must lie in [0, 1]");
  require(t.ema_rampup >= 0 && t.ema_rampup <= 1, "train.ema_rampup", "must lie in [0, 1]");
  require(t.rae_attack.family == AttackFamily::PixelPgd, "train.rae_attack", "must be a pgd attack");
  require(t.val_attack.family == AttackFamily::PixelPgd, "train.val_attack", "must be a pgd attack");
  nonneg(t.pseudo_threshold, "train.pseudo_threshold");
  require(t.inner_steps >= 1, "train.inner_steps", "must be >= 1");
  for (const auto& a : c.attacks) {
    try {
      validate(a);
    } catch (const std::exception& e) {
      fail("attacks.attack", e.what());
    }
  }
  require(!c.output_dir.empty(), "output.dir", "must not be empty");
  require(!c.sweep_betas.empty(), "sweep.betas", "must list at least one value");
  for (double b : c.sweep_betas) nonneg(b, "sweep.betas");
  require(c.alignment_per_class >= 2, "eval.per_class", "must be >= 2");
}

std::string serialize_config(const ExperimentConfig& c) {
  const auto& t = c.train;
  const auto& o = t.optimizer;
  std::ostringstream out;
  out << "seed = " << c.seed << "\n\n[dataset]\n"
      << "name = " << c.dataset << '\n';
  if (!c.data_root.empty()) out << "root = " << c.data_root << '\n';
  out << "n_labeled = " << c.load.n_labeled << '\n'
      << "validation_fraction = " << format_exact(c.load.validation_fraction) << '\n'
      << "train_size = " << c.load.synthetic.train_size << '\n'
      << "test_size = " << c.load.synthetic.test_size << '\n'
      << "ring_classes = " << c.load.synthetic.ring_classes << '\n'
      << "ring_noise = " << format_exact(c.load.synthetic.ring_noise) << '\n';
  for (const auto& g : c.load.synthetic.components)
    out << "component = " << format_exact(g.mean_x) << ' ' << format_exact(g.mean_y) << ' ' << format_exact(g.std_x)
        << ' ' << format_exact(g.std_y) << '\n';

  out << "\n[net]\n" << netspec_lines(c.net);

  out << "\n[train]\n"
      << "lambda = " << format_exact(t.weights.lambda) << '\n'
      << "gamma = " << format_exact(t.weights.gamma) << '\n'
      << "beta = " << format_exact(t.weights.beta) << '\n'
      << "alpha = " << format_exact(t.weights.alpha) << '\n'
      << "lr = " << format_exact(o.lr) << '\n'
      << "weight_decay = " << format_exact(o.weight_decay) << '\n'
      << "momentum = " << format_exact(o.momentum) << '\n'
      << "nesterov = " << (o.nesterov ? "true" : "false") << '\n'
      << "schedule = " << schedule_name(o.schedule) << '\n'
      << "warmup_fraction = " << format_exact(o.warmup_fraction) << '\n'
      << "div_factor = " << format_exact(o.div_factor) << '\n'
      << "final_div_factor = " << format_exact(o.final_div_factor) << '\n'
      << "gan_lr_scale = " << format_exact(t.gan_lr_scale) << '\n'
      << "labeled_batch = " << t.labeled_batch << '\n'
      << "unlabeled_batch = " << t.unlabeled_batch << '\n'
      << "pretrain_epochs = " << t.pretrain_epochs << '\n'
      << "epochs = " << t.epochs << '\n'
      << "steps_per_epoch = " << t.steps_per_epoch << '\n'
      << "early_stopping_metric = " << t.early_stopping.metric << '\n'
      << "patience = " << t.early_stopping.patience << '\n'
      << "gan_mode = " << gan_mode_name(t.gan_mode) << '\n'
      << "ema_decay = " << format_exact(t.ema_decay) << '\n'
      << "ema_rampup = " << format_exact(t.ema_rampup) << '\n'
      << "rae_attack = " << format_attack(t.rae_attack) << '\n'
      << "val_attack = " << format_attack(t.val_attack) << '\n'
      << "pseudo_labels = " << (t.pseudo_labels ? "true" : "false") << '\n'
      << "pseudo_threshold = " << format_exact(t.pseudo_threshold) << '\n'
      << "inner_steps = " << t.inner_steps << '\n';

  out << "\n[attacks]\n";
  for (const auto& a : c.attacks) out << "attack = " << format_attack(a) << '\n';
  out << "\n[output]\ndir = " << c.output_dir << '\n';
  out << "\n[sweep]\nbetas = " << join_numbers(c.sweep_betas) << '\n';
  out << "\n[eval]\nper_class = " << c.alignment_per_class << '\n';
  return out.str();
}

std::filesystem::path resolve_data_root(const ExperimentConfig& c) {
  if (!c.data_root.empty()) return c.data_root;
  if (const char* env = std::getenv("PUAT_DATA_ROOT"); env && *env) return env;
  return "data";
}

}  // namespace puat
