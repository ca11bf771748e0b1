#include "puat/checkpoint.hpp"
#include "puat/config.hpp"
#include "puat/eval.hpp"
#include "puat/text.hpp"
#include "puat/theory_suite.hpp"
#include "puat/uae.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kRuntime = 2;
constexpr int kAcceptance = 3;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

puat::ExperimentConfig load_config(const Options& o) {
  puat::ExperimentConfig c = o.config.empty() ? puat::parse_config_text("") : puat::parse_config(o.config);
  if (o.seed) puat::apply_seed(c, *o.seed);
  if (!o.out.empty()) c.output_dir = o.out;
  return c;
}

void write_text(const std::filesystem::path& file, const std::string& text) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream f(file, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + file.string());
  f << text;
}

void write_manifest(const std::string& command, const puat::ExperimentConfig& c, const Options& o) {
  const std::filesystem::path dir = c.output_dir;
  write_text(dir / "config.ini", puat::serialize_config(c));
  std::ostringstream m;
  m << "command = " << command << '\n'
    << "version = " << PUAT_VERSION << '\n'
    << "seed = " << c.seed << '\n'
    << "dataset = " << c.dataset << '\n'
    << "data_root = " << puat::resolve_data_root(c).string() << '\n'
    << "config = config.ini\n";
  if (!o.checkpoint.empty()) m << "checkpoint = " << o.checkpoint << '\n';
  write_text(dir / "manifest.txt", m.str());
}

puat::DatasetSplit load_data(const puat::ExperimentConfig& c) {
  return puat::load_dataset(c.dataset, puat::resolve_data_root(c), c.load);
}

puat::ModelBundle load_models(const Options& o, const puat::DatasetSplit& data) {
  if (o.checkpoint.empty()) throw UsageError("--checkpoint is required for this subcommand");
  puat::ModelBundle m = puat::load_checkpoint(o.checkpoint);
  if (m.num_classes != data.num_classes || !(m.shape == data.shape))
    throw std::runtime_error("checkpoint does not match dataset " + data.name);
  return m;
}

int run_train(const Options& o) {
  const auto c = load_config(o);
  write_manifest("train", c, o);
  const auto data = load_data(c);
  const auto result = puat::fit(c.train, c.net, data, c.output_dir);
  const double nat = puat::natural_accuracy(result.best.C, data.test);
  std::cout << "best epoch " << result.report.best_epoch + 1 << ", test natural accuracy " << nat << '\n';
  return kOk;
}

std::string attack_report(const puat::ExperimentConfig& c, const puat::ModelBundle& m, const puat::DatasetSplit& data) {
  std::ostringstream csv;
  csv << "attack,natural_accuracy,robust_accuracy\n";
  const double nat = puat::natural_accuracy(m.C, data.test);
  for (const auto& a : c.attacks)
    csv << puat::attack_label(a) << ',' << puat::format_exact(nat) << ','
        << puat::format_exact(puat::robust_accuracy(m, a, data.test, c.seed + 17)) << '\n';
  return csv.str();
}

int run_attack(const Options& o) {
  const auto c = load_config(o);
  const auto data = load_data(c);
  const auto m = load_models(o, data);
  write_manifest("attack", c, o);
  const std::string csv = attack_report(c, m, data);
  write_text(std::filesystem::path(c.output_dir) / "attack_report.csv", csv);
  std::cout << csv;
  return kOk;
}

int run_eval(const Options& o) {
  const auto c = load_config(o);
  const auto data = load_data(c);
  const auto m = load_models(o, data);
  write_manifest("eval", c, o);
  const std::filesystem::path dir = c.output_dir;
  const std::string csv = attack_report(c, m, data);
  write_text(dir / "attack_report.csv", csv);
  const auto sample = puat::build_alignment_sample(m, data.test, c.alignment_per_class, c.seed + 29);
  const double sil = puat::silhouette_alignment(sample);
  const auto counts = puat::class_count_table(sample);
  write_text(dir / "class_counts.csv", puat::class_count_csv(counts));
  write_text(dir / "alignment.csv", "metric,value\nsilhouette," + puat::format_exact(sil) + '\n');
  std::cout << csv << "silhouette " << sil << '\n' << puat::class_count_csv(counts);
  return kOk;
}

int run_verify_theory(const Options& o) {
  puat::theory::SuiteOptions so;
  if (o.seed) so.seed = *o.seed;
  const auto rows = puat::theory::run_suite(so);
  const std::string table = puat::theory::format_suite(rows);
  std::cout << table;
  if (!o.out.empty()) write_text(std::filesystem::path(o.out) / "theory.txt", table);
  for (const auto& r : rows)
    if (!r.pass) return kAcceptance;
  return kOk;
}

int run_sweep(const Options& o) {
  const auto c = load_config(o);
  write_manifest("sweep", c, o);
  const auto data = load_data(c);
  const auto rows = puat::pareto_sweep(c.train, c.net, data, c.sweep_betas, c.attacks);
  const std::string csv = puat::pareto_csv(rows, c.attacks);
  write_text(std::filesystem::path(c.output_dir) / "pareto.csv", csv);
  std::cout << csv;
  return kOk;
}

int run_export_uaes(const Options& o) {
  const auto c = load_config(o);
  const auto data = load_data(c);
  const auto m = load_models(o, data);
  write_manifest("export-uaes", c, o);
  puat::Rng rng(c.seed + 31);
  std::vector<int> labels;
  for (int k = 0; k < m.num_classes; ++k) labels.insert(labels.end(), static_cast<std::size_t>(c.alignment_per_class), k);
  const puat::Matrix y = puat::one_hot(labels, m.num_classes);
  const auto batch = puat::generate_uae(m.G, m.A, puat::sample_noise(rng, y.rows(), m.G.noise_dim), y, puat::NormMode::Eval);
  const auto pred_g = puat::argmax_rows(puat::classify(m.C, batch.x_g));
  const auto pred_t = puat::argmax_rows(puat::classify(m.C, batch.x_tilde));

  std::ostringstream tsv;
  tsv << "class\tpred_natural\tpred_uae";
  for (Eigen::Index j = 0; j < batch.x_g.cols(); ++j) tsv << "\tx_g" << j;
  for (Eigen::Index j = 0; j < batch.x_tilde.cols(); ++j) tsv << "\tx_uae" << j;
  tsv << '\n';
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const auto r = static_cast<std::size_t>(i);
    tsv << labels[r] << '\t' << pred_g[r] << '\t' << pred_t[r];
    for (Eigen::Index j = 0; j < batch.x_g.cols(); ++j) tsv << '\t' << puat::format_exact(batch.x_g(i, j));
    for (Eigen::Index j = 0; j < batch.x_tilde.cols(); ++j) tsv << '\t' << puat::format_exact(batch.x_tilde(i, j));
    tsv << '\n';
  }
  write_text(std::filesystem::path(c.output_dir) / "uaes.tsv", tsv.str());
  return kOk;
}

int run_export_embeddings(const Options& o) {
  const auto c = load_config(o);
  const auto data = load_data(c);
  const auto m = load_models(o, data);
  write_manifest("export-embeddings", c, o);
  puat::export_embeddings(m, data.test, std::filesystem::path(c.output_dir) / "embeddings.tsv", c.alignment_per_class,
                          c.seed + 29);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unrestricted adversarial training toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", PUAT_VERSION);

  Options opts;
  std::uint64_t seed = 0;
  int (*handler)(const Options&) = nullptr;

  const auto add = [&](const std::string& name, const std::string& help, int (*fn)(const Options&), bool needs_ckpt) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opts.config, "Experiment config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Override the config seed")->each([&](const std::string&) { opts.seed = seed; });
    sub->add_option("--out", opts.out, "Output directory");
    auto* ck = sub->add_option("--checkpoint", opts.checkpoint, "Model checkpoint");
    if (needs_ckpt) ck->required();
    sub->callback([&handler, fn] { handler = fn; });
  };
  add("train", "Train a classifier with the full objective", run_train, false);
  add("attack", "Evaluate the attack battery on a checkpoint", run_attack, true);
  add("eval", "Accuracy, robustness and alignment diagnostics", run_eval, true);
  add("verify-theory", "Run the exact property suite on discrete instances", run_verify_theory, false);
  add("sweep", "Natural vs robust accuracy across beta values", run_sweep, false);
  add("export-uaes", "Write generated examples and their adversarial versions", run_export_uaes, true);
  add("export-embeddings", "Write penultimate features for the three-source sample", run_export_embeddings, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    return handler(opts);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const puat::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
}
