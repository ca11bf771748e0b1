#include "doctest.h"
#include "gradcheck.hpp"

#include "puat/eval.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unistd.h>

using namespace puat;
using puat::testing::random_matrix;

namespace {

NetSpec small_spec() {
  NetSpec s;
  s.classifier_depth = 1;
  s.classifier_width = 6;
  s.generator_channels = 6;
  s.discriminator_channels = 6;
  s.attacker_hidden = 6;
  s.noise_dim = 3;
  s.label_embed_dim = 2;
  return s;
}

Examples balanced(int per_class, int classes, std::uint64_t seed) {
  Examples e;
  e.x = random_matrix(per_class * classes, 2, seed, 0, 1);
  for (int i = 0; i < per_class * classes; ++i) {
    e.labels.push_back(i % classes);
    e.ids.push_back(i);
  }
  return e;
}

// Textbook silhouette with explicit pairwise distances.
double naive_silhouette(const Matrix& p, const std::vector<int>& y) {
  const auto n = static_cast<std::size_t>(p.rows());
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::map<int, std::pair<double, int>> by_class;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      auto& slot = by_class[y[j]];
      slot.first += (p.row(static_cast<Eigen::Index>(i)) - p.row(static_cast<Eigen::Index>(j))).norm();
      slot.second += 1;
    }
    const double a = by_class[y[i]].first / by_class[y[i]].second;
    double b = 1e300;
    for (const auto& [k, s] : by_class)
      if (k != y[i]) b = std::min(b, s.first / s.second);
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("puat_eval_" + std::to_string(::getpid()) + "_" + name);
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

}  // namespace

TEST_CASE("natural accuracy extremes") {
  NetSpec spec = small_spec();
  spec.classifier_depth = 0;
  ModelBundle m = build_models(spec, DataShape::vector(2), 2, 1);
  auto& head = m.C.layers.linear[m.C.head];
  head.weight.value << -10, 10, 0, 0;
  head.bias.value << 5, -5;
  Examples e;
  e.x = (Matrix(4, 2) << 0.1, 0.5, 0.3, 0.1, 0.7, 0.9, 0.9, 0.2).finished();
  e.labels = {0, 0, 1, 1};
  CHECK(natural_accuracy(m.C, e) == 1.0);
  head.weight.value.setZero();
  CHECK(natural_accuracy(m.C, e) == 0.5);
}

TEST_CASE("reference results") {
  const auto rows = read_reference_results(std::filesystem::path(PUAT_SOURCE_DIR) / "resources/reference_results.csv");
  const auto* r = find_reference(rows, "cifar10", "PUAT", "natural");
  REQUIRE(r != nullptr);
  CHECK(r->mean == 83.02);
  CHECK(r->std == 0.36);
  CHECK(find_reference(rows, "cifar10", "PUAT", "accuracy") == nullptr);
  CHECK_THROWS(read_reference_results("/nonexistent/reference.csv"));
}

TEST_CASE("silhouette") {
  Matrix sep(6, 2);
  sep << 0, 0, 0.01, 0, 0, 0.01, 10, 10, 10.01, 10, 10, 10.01;
  const std::vector<int> two{0, 0, 0, 1, 1, 1};
  CHECK(silhouette(sep, two) > 0.99);
  CHECK(silhouette(sep, two) == doctest::Approx(naive_silhouette(sep, two)).epsilon(1e-12));

  Matrix line(8, 1);
  for (int i = 0; i < 8; ++i) line(i, 0) = i;
  const std::vector<int> alt{0, 1, 0, 1, 0, 1, 0, 1};
  CHECK(silhouette(line, alt) <= 0.0);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix p = random_matrix(30, 4, seed);
    std::vector<int> y;
    for (int i = 0; i < 30; ++i) y.push_back((i * 7 + static_cast<int>(seed)) % 3);
    CHECK(silhouette(p, y) == doctest::Approx(naive_silhouette(p, y)).epsilon(1e-10));
  }
  CHECK_THROWS_AS(silhouette(sep, std::vector<int>(6, 0)), std::invalid_argument);
  CHECK_THROWS_AS(silhouette(sep, {0, 0, 0, 0, 0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(silhouette(sep, {0, 1}), std::invalid_argument);
}

TEST_CASE("class count table") {
  ModelBundle m = build_models(small_spec(), DataShape::vector(2), 3, 2);
  const Examples real = balanced(20, 3, 3);
  const AlignmentSample s = build_alignment_sample(m, real, 5, 4);
  CHECK(s.size() == 45);
  CHECK(s.features.cols() == 6);
  const ClassCountTable t = class_count_table(s);
  CHECK(t.rows == std::vector<std::string>{"P(y)", "P_G(y)", "P_C(y)"});
  CHECK(t.counts.row(0) == Eigen::RowVector3i(5, 5, 5));
  CHECK(t.counts.row(1) == Eigen::RowVector3i(5, 5, 5));
  CHECK(t.counts.row(2).sum() == 15);

  // A classifier stuck on one class shows up as a single full column.
  auto& head = m.C.layers.linear[m.C.head];
  head.weight.value.setZero();
  head.bias.value << 0, 3, 0;
  const ClassCountTable collapsed = class_count_table(build_alignment_sample(m, real, 5, 4));
  CHECK(collapsed.counts.row(2) == Eigen::RowVector3i(0, 15, 0));
  const std::string csv = class_count_csv(collapsed);
  CHECK(csv.rfind("distribution,class0,class1,class2,total\n", 0) == 0);
  CHECK(csv.find("P_C(y),0,15,0,15") != std::string::npos);
  CHECK(build_alignment_sample(m, real, 5, 4).features == build_alignment_sample(m, real, 5, 4).features);
}

TEST_CASE("embedding export") {
  const ModelBundle m = build_models(small_spec(), DataShape::vector(2), 3, 5);
  const Examples real = balanced(10, 3, 6);
  const auto dir = scratch("emb");
  export_embeddings(m, real, dir / "a.tsv", 4, 9);
  export_embeddings(m, real, dir / "b.tsv", 4, 9);
  const std::string a = slurp(dir / "a.tsv");
  CHECK(a == slurp(dir / "b.tsv"));
  std::istringstream in(a);
  std::string line;
  std::getline(in, line);
  CHECK(line.rfind("source\tclass\tf0", 0) == 0);
  int rows = 0;
  std::set<std::string> tags;
  while (std::getline(in, line)) {
    ++rows;
    tags.insert(line.substr(0, line.find('\t')));
  }
  CHECK(rows == 36);
  CHECK(tags == std::set<std::string>{source_name(Source::Real), source_name(Source::Generator),
                                      source_name(Source::ClassifierPseudo)});
  std::filesystem::remove_all(dir);
}

TEST_CASE("training time ratio") {
  TrainReport a, b;
  a.wall_seconds = 5;
  b.wall_seconds = 2;
  CHECK(training_time_ratio(a, b) == 2.5);
  CHECK(training_time_ratio(b, b) == 1.0);
  b.wall_seconds = 0;
  CHECK_THROWS_AS(training_time_ratio(a, b), std::invalid_argument);
}

TEST_CASE("pareto sweep") {
  LoadOptions o;
  o.seed = 1;
  o.n_labeled = 40;
  o.synthetic.train_size = 300;
  o.synthetic.test_size = 60;
  const DatasetSplit d = load_dataset("gauss2d", "unused", o);
  TrainConfig c;
  c.epochs = 1;
  c.steps_per_epoch = 2;
  c.labeled_batch = 16;
  c.unlabeled_batch = 16;
  c.pseudo_labels = false;
  c.rae_attack.steps = 2;
  c.val_attack.steps = 2;
  AttackSpec quick = pgd_preset(8);
  quick.steps = 2;
  const std::vector<AttackSpec> battery{quick, pgd_preset(0)};
  const auto rows = pareto_sweep(c, small_spec(), d, {3.0}, battery);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].beta == 3.0);
  REQUIRE(rows[0].robust.size() == 2);
  CHECK(rows[0].robust[1] == rows[0].natural);
  CHECK(rows[0].robust[0] <= rows[0].natural);
  const std::string csv = pareto_csv(rows, battery);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
  CHECK(csv.rfind("beta,natural,", 0) == 0);
}

TEST_CASE("robust accuracy dispatches on the attack family") {
  const ModelBundle m = build_models(small_spec(), DataShape::vector(2), 3, 7);
  const Examples test = balanced(10, 3, 8);
  AttackSpec a = pgd_preset(8);
  a.steps = 3;
  CHECK(robust_accuracy(m, a, test, 1) == evaluate_robust_accuracy(m.C, a, test));
  AttackSpec g = gpgd_preset(0.1);
  g.steps = 3;
  CHECK(robust_accuracy(m, g, test, 1) == robust_accuracy(m, g, test, 1));
}
