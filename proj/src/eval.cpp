#include "puat/eval.hpp"

#include "puat/text.hpp"
#include "puat/uae.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace puat {

std::string source_name(Source s) {
  switch (s) {
    case Source::Real: return "real";
    case Source::Generator: return "generator";
    case Source::ClassifierPseudo: return "classifier";
  }
  return "?";
}

AlignmentSample build_alignment_sample(const ModelBundle& m, const Examples& real, int per_class, std::uint64_t seed) {
  if (per_class < 1) throw std::invalid_argument("per_class must be positive");
  if (real.size() == 0 || !real.labeled()) throw std::invalid_argument("alignment needs labeled real data");
  const int K = m.num_classes;
  Rng rng(seed);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(real.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> taken(static_cast<std::size_t>(K), 0);
  std::vector<Eigen::Index> real_rows;
  for (auto i : order) {
    const int y = real.labels[static_cast<std::size_t>(i)];
    if (taken[static_cast<std::size_t>(y)] < per_class) {
      ++taken[static_cast<std::size_t>(y)];
      real_rows.push_back(i);
    }
  }

  std::vector<int> gen_labels;
  for (int k = 0; k < K; ++k) gen_labels.insert(gen_labels.end(), static_cast<std::size_t>(per_class), k);
  const Matrix z = sample_noise(rng, static_cast<Eigen::Index>(gen_labels.size()), m.G.noise_dim);
  const Matrix x_g = generate_natural(m.G, z, one_hot(gen_labels, K), NormMode::Eval);

  std::shuffle(order.begin(), order.end(), rng);
  const auto pool_size = std::min<std::size_t>(order.size(), static_cast<std::size_t>(K) * static_cast<std::size_t>(per_class));
  const Eigen::Index nr = static_cast<Eigen::Index>(real_rows.size());
  const Eigen::Index ng = x_g.rows();
  const Eigen::Index np = static_cast<Eigen::Index>(pool_size);

  Matrix x(nr + ng + np, real.x.cols());
  for (Eigen::Index i = 0; i < nr; ++i) x.row(i) = real.x.row(real_rows[static_cast<std::size_t>(i)]);
  x.middleRows(nr, ng) = x_g;
  for (Eigen::Index i = 0; i < np; ++i) x.row(nr + ng + i) = real.x.row(order[static_cast<std::size_t>(i)]);
  const auto pseudo = argmax_rows(classify(m.C, x.bottomRows(np)));

  AlignmentSample s;
  s.num_classes = K;
  s.features = features(m.C, x);
  for (auto i : real_rows) s.labels.push_back(real.labels[static_cast<std::size_t>(i)]);
  s.labels.insert(s.labels.end(), gen_labels.begin(), gen_labels.end());
  s.labels.insert(s.labels.end(), pseudo.begin(), pseudo.end());
  s.sources.insert(s.sources.end(), static_cast<std::size_t>(nr), Source::Real);
  s.sources.insert(s.sources.end(), static_cast<std::size_t>(ng), Source::Generator);
  s.sources.insert(s.sources.end(), static_cast<std::size_t>(np), Source::ClassifierPseudo);
  return s;
}

double silhouette(const Matrix& points, const std::vector<int>& labels) {
  const Eigen::Index n = points.rows();
  if (static_cast<Eigen::Index>(labels.size()) != n) throw std::invalid_argument("silhouette: label count mismatch");
  if (n == 0) throw std::invalid_argument("silhouette: no points");
  const int K = *std::max_element(labels.begin(), labels.end()) + 1;
  if (*std::min_element(labels.begin(), labels.end()) < 0) throw std::invalid_argument("silhouette: negative label");
  std::vector<Eigen::Index> size(static_cast<std::size_t>(K), 0);
  for (int y : labels) ++size[static_cast<std::size_t>(y)];
  int clusters = 0;
  for (auto c : size) {
    if (c == 1) throw std::invalid_argument("silhouette: a class has a single point");
    clusters += c > 0;
  }
  if (clusters < 2) throw std::invalid_argument("silhouette: need at least two classes");

  const Vector sq = points.rowwise().squaredNorm();
  double total = 0.0;
  Vector sums(K);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector d2 = ((sq.array() + sq(i)).matrix() - 2.0 * points * points.row(i).transpose()).cwiseMax(0.0);
    sums.setZero();
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) sums(labels[static_cast<std::size_t>(j)]) += std::sqrt(d2(j));
    const int own = labels[static_cast<std::size_t>(i)];
    const double a = sums(own) / static_cast<double>(size[static_cast<std::size_t>(own)] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int k = 0; k < K; ++k)
      if (k != own && size[static_cast<std::size_t>(k)] > 0) b = std::min(b, sums(k) / static_cast<double>(size[static_cast<std::size_t>(k)]));
    const double denom = std::max(a, b);
    total += denom > 0 ? (b - a) / denom : 0.0;
  }
  return total / static_cast<double>(n);
}

double silhouette_alignment(const AlignmentSample& s) { return silhouette(s.features, s.labels); }

ClassCountTable class_count_table(const AlignmentSample& s) {
  ClassCountTable t;
  t.rows = {"P(y)", "P_G(y)", "P_C(y)"};
  t.counts = Eigen::MatrixXi::Zero(3, s.num_classes);
  for (std::size_t i = 0; i < s.labels.size(); ++i) t.counts(static_cast<int>(s.sources[i]), s.labels[i]) += 1;
  return t;
}

std::string class_count_csv(const ClassCountTable& t) {
  std::ostringstream out;
  out << "distribution";
  for (Eigen::Index k = 0; k < t.counts.cols(); ++k) out << ",class" << k;
  out << ",total\n";
  for (Eigen::Index r = 0; r < t.counts.rows(); ++r) {
    out << t.rows[static_cast<std::size_t>(r)];
    for (Eigen::Index k = 0; k < t.counts.cols(); ++k) out << ',' << t.counts(r, k);
    out << ',' << t.counts.row(r).sum() << '\n';
  }
  return out.str();
}

double robust_accuracy(const ModelBundle& m, const AttackSpec& spec, const Examples& test, std::uint64_t seed) {
  if (spec.family == AttackFamily::PixelPgd) return evaluate_robust_accuracy(m.C, spec, test);
  Rng rng(seed);
  return evaluate_robust_accuracy(m, spec, test, rng);
}

std::vector<ParetoRow> pareto_sweep(const TrainConfig& base, const NetSpec& spec, const DatasetSplit& data,
                                    const std::vector<double>& betas, const std::vector<AttackSpec>& battery) {
  std::vector<ParetoRow> rows;
  for (double beta : betas) {
    TrainConfig cfg = base;
    cfg.weights.beta = beta;
    validate(cfg);
    const FitResult fit_result = fit(cfg, spec, data);
    ParetoRow row;
    row.beta = beta;
    row.natural = natural_accuracy(fit_result.best.C, data.test);
    for (const auto& a : battery) row.robust.push_back(robust_accuracy(fit_result.best, a, data.test, cfg.seed + 17));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string pareto_csv(const std::vector<ParetoRow>& rows, const std::vector<AttackSpec>& battery) {
  std::ostringstream out;
  out << "beta,natural";
  for (const auto& a : battery) out << ',' << attack_label(a);
  out << '\n';
  for (const auto& r : rows) {
    out << format_exact(r.beta) << ',' << format_exact(r.natural);
    for (double v : r.robust) out << ',' << format_exact(v);
    out << '\n';
  }
  return out.str();
}

void export_embeddings(const AlignmentSample& s, const std::filesystem::path& out) {
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  std::ofstream f(out, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + out.string());
  f << "source\tclass";
  for (Eigen::Index j = 0; j < s.features.cols(); ++j) f << "\tf" << j;
  f << '\n';
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    f << source_name(s.sources[static_cast<std::size_t>(i)]) << '\t' << s.labels[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < s.features.cols(); ++j) f << '\t' << format_exact(s.features(i, j));
    f << '\n';
  }
  if (!f) throw std::runtime_error("write failed for " + out.string());
}

void export_embeddings(const ModelBundle& m, const Examples& real, const std::filesystem::path& out, int per_class,
                       std::uint64_t seed) {
  export_embeddings(build_alignment_sample(m, real, per_class, seed), out);
}

double training_time_ratio(const TrainReport& report, const TrainReport& baseline) {
  if (!(baseline.wall_seconds > 0)) throw std::invalid_argument("baseline training time must be positive");
  return report.wall_seconds / baseline.wall_seconds;
}

std::vector<ReferenceResult> read_reference_results(const std::filesystem::path& csv) {
  std::ifstream in(csv);
  if (!in) throw std::runtime_error("missing reference results " + csv.string());
  std::vector<ReferenceResult> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    const auto cells = split(trim(line), ',');
    if (cells.size() != 5) throw std::runtime_error("malformed reference row: " + line);
    rows.push_back({cells[0], cells[1], cells[2], parse_number(cells[3]), parse_number(cells[4])});
  }
  return rows;
}

const ReferenceResult* find_reference(const std::vector<ReferenceResult>& rows, const std::string& dataset,
                                      const std::string& method, const std::string& metric) {
  for (const auto& r : rows)
    if (r.dataset == dataset && r.method == method && r.metric == metric) return &r;
  return nullptr;
}

}  // namespace puat
