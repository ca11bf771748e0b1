#include "puat/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace puat {
namespace fs = std::filesystem;

namespace {

std::vector<std::int64_t> permutation(std::int64_t n, std::uint64_t seed) {
  std::vector<std::int64_t> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  Rng rng(seed);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

Examples concat(const Examples& a, const Examples& b) {
  if (a.size() == 0) return b;
  if (b.size() == 0) return a;
  Examples out;
  out.x.resize(a.x.rows() + b.x.rows(), a.x.cols());
  out.x << a.x, b.x;
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.ids = a.ids;
  out.ids.insert(out.ids.end(), b.ids.begin(), b.ids.end());
  return out;
}

Examples without_labels(Examples e) {
  e.labels.clear();
  return e;
}

}  // namespace

std::vector<std::string> supported_datasets() { return {"cifar10-subset", "svhn-subset", "gauss2d", "rings2d"}; }

DatasetProfile dataset_profile(const std::string& name) {
  if (name == "cifar10-subset") return {name, DataShape::picture(3, 32, 32), 10, 4000, 46000, 10000};
  if (name == "svhn-subset") return {name, DataShape::picture(3, 32, 32), 10, 1000, 72257, 26032};
  if (name == "gauss2d") return {name, DataShape::vector(2), 3, 200, 2000, 1500};
  if (name == "rings2d") return {name, DataShape::vector(2), 3, 200, 2000, 1500};
  throw DatasetError("unknown dataset id '" + name + "'");
}

Examples subset(const Examples& e, const std::vector<std::int64_t>& rows) {
  Examples out;
  out.x.resize(static_cast<Eigen::Index>(rows.size()), e.x.cols());
  const bool has_labels = e.labeled();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = rows[i];
    out.x.row(static_cast<Eigen::Index>(i)) = e.x.row(r);
    if (has_labels) out.labels.push_back(e.labels[static_cast<std::size_t>(r)]);
    out.ids.push_back(e.ids[static_cast<std::size_t>(r)]);
  }
  return out;
}

std::vector<GaussComponent> default_gauss2d_components() {
  return {{0.17, 0.50, 0.01, 0.01}, {0.53, 0.50, 0.12, 0.12}, {0.89, 0.50, 0.01, 0.01}};
}

Examples synth_gauss2d(const std::vector<GaussComponent>& components, std::int64_t n, Rng& rng) {
  if (components.size() < 2) throw DatasetError("gauss2d needs at least two components");
  std::uniform_int_distribution<int> pick(0, static_cast<int>(components.size()) - 1);
  std::normal_distribution<double> nd(0.0, 1.0);
  Examples e;
  e.x.resize(n, 2);
  for (std::int64_t i = 0; i < n; ++i) {
    const int k = pick(rng);
    const auto& c = components[static_cast<std::size_t>(k)];
    const double a = nd(rng), b = nd(rng);
    e.x(i, 0) = std::clamp(c.mean_x + c.std_x * a, 0.0, 1.0);
    e.x(i, 1) = std::clamp(c.mean_y + c.std_y * b, 0.0, 1.0);
    e.labels.push_back(k);
    e.ids.push_back(i);
  }
  return e;
}

Examples synth_rings2d(int classes, double noise, std::int64_t n, Rng& rng) {
  if (classes < 2) throw DatasetError("rings2d needs at least two classes");
  std::uniform_int_distribution<int> pick(0, classes - 1);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
  std::normal_distribution<double> nd(0.0, noise);
  const double spacing = 0.4 / classes;
  Examples e;
  e.x.resize(n, 2);
  for (std::int64_t i = 0; i < n; ++i) {
    const int k = pick(rng);
    const double r = 0.05 + spacing * (k + 0.5) + nd(rng);
    const double t = angle(rng);
    e.x(i, 0) = std::clamp(0.5 + r * std::cos(t), 0.0, 1.0);
    e.x(i, 1) = std::clamp(0.5 + r * std::sin(t), 0.0, 1.0);
    e.labels.push_back(k);
    e.ids.push_back(i);
  }
  return e;
}

Examples read_binary_records(const fs::path& file, const ImageShape& shape, int num_classes, std::int64_t id_offset) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DatasetError("missing dataset file " + file.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t record = 1 + static_cast<std::size_t>(shape.size());
  if (bytes.empty() || bytes.size() % record != 0)
    throw DatasetError("corrupt dataset file " + file.string() + ": size is not a multiple of the record size");
  const auto n = static_cast<Eigen::Index>(bytes.size() / record);
  Examples e;
  e.x.resize(n, shape.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const unsigned char* rec = bytes.data() + static_cast<std::size_t>(i) * record;
    if (rec[0] >= num_classes)
      throw DatasetError("corrupt dataset file " + file.string() + ": label " + std::to_string(rec[0]) + " out of range");
    e.labels.push_back(rec[0]);
    e.ids.push_back(id_offset + i);
    for (Eigen::Index j = 0; j < shape.size(); ++j) e.x(i, j) = rec[1 + j] / 255.0;
  }
  return e;
}

DatasetSplit make_semisupervised_split(const Examples& full, std::int64_t n_labeled, std::uint64_t seed) {
  if (!full.labeled()) throw DatasetError("make_semisupervised_split needs a labeled source");
  if (n_labeled <= 0 || n_labeled > full.size())
    throw DatasetError("n_labeled=" + std::to_string(n_labeled) + " outside (0, " + std::to_string(full.size()) + "]");
  const auto perm = permutation(full.size(), seed);
  DatasetSplit split;
  split.labeled = subset(full, {perm.begin(), perm.begin() + n_labeled});
  split.unlabeled = without_labels(subset(full, {perm.begin() + n_labeled, perm.end()}));
  split.original_labeled = split.labeled.size();
  return split;
}

void reserve_validation(DatasetSplit& split, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw DatasetError("validation fraction must lie in [0, 1)");
  const auto n = split.labeled.size();
  const auto count = static_cast<std::int64_t>(std::llround(fraction * static_cast<double>(n)));
  if (count == 0) return;
  if (count >= n) throw DatasetError("validation would consume the whole labeled pool");
  const auto perm = permutation(n, seed);
  split.validation = subset(split.labeled, {perm.begin(), perm.begin() + count});
  split.labeled = subset(split.labeled, {perm.begin() + count, perm.end()});
  split.original_labeled = split.labeled.size();
}

DatasetSplit load_dataset(const std::string& name, const fs::path& root, const LoadOptions& options) {
  const DatasetProfile profile = dataset_profile(name);
  const std::int64_t n_labeled = options.n_labeled > 0 ? options.n_labeled : profile.n_labeled;
  Examples train, test;
  int num_classes = profile.num_classes;

  if (name == "cifar10-subset") {
    const fs::path dir = root / name;
    for (int b = 1; b <= 5; ++b)
      train = concat(train, read_binary_records(dir / ("data_batch_" + std::to_string(b) + ".bin"), profile.shape.image,
                                                num_classes, train.size()));
    test = read_binary_records(dir / "test_batch.bin", profile.shape.image, num_classes, 0);
  } else if (name == "svhn-subset") {
    const fs::path dir = root / name;
    train = read_binary_records(dir / "train.bin", profile.shape.image, num_classes, 0);
    test = read_binary_records(dir / "test.bin", profile.shape.image, num_classes, 0);
  } else {
    const auto& syn = options.synthetic;
    Rng train_rng(options.seed * 2 + 11);
    Rng test_rng(options.seed * 2 + 12);
    if (name == "gauss2d") {
      const auto comps = syn.components.empty() ? default_gauss2d_components() : syn.components;
      num_classes = static_cast<int>(comps.size());
      train = synth_gauss2d(comps, syn.train_size, train_rng);
      test = synth_gauss2d(comps, syn.test_size, test_rng);
    } else {
      num_classes = syn.ring_classes;
      train = synth_rings2d(syn.ring_classes, syn.ring_noise, syn.train_size, train_rng);
      test = synth_rings2d(syn.ring_classes, syn.ring_noise, syn.test_size, test_rng);
    }
  }

  DatasetSplit split = make_semisupervised_split(train, n_labeled, options.seed);
  reserve_validation(split, options.validation_fraction, options.seed + 1);
  split.name = name;
  split.shape = profile.shape;
  split.num_classes = num_classes;
  split.test = std::move(test);
  return split;
}

BatchPair sample_batch(const DatasetSplit& split, std::int64_t labeled_size, std::int64_t unlabeled_size, Rng& rng) {
  if (labeled_size <= 0 || unlabeled_size <= 0) throw DatasetError("batch sizes must be positive");
  if (split.labeled.size() == 0) throw DatasetError("cannot sample from an empty labeled partition");
  if (split.unlabeled.size() == 0) throw DatasetError("cannot sample from an empty unlabeled partition");
  std::uniform_int_distribution<Eigen::Index> pick_l(0, split.labeled.size() - 1);
  std::uniform_int_distribution<Eigen::Index> pick_u(0, split.unlabeled.size() - 1);
  BatchPair b;
  b.labeled_x.resize(labeled_size, split.labeled.x.cols());
  b.labeled_y = Matrix::Zero(labeled_size, split.num_classes);
  for (Eigen::Index i = 0; i < labeled_size; ++i) {
    const auto r = pick_l(rng);
    b.labeled_x.row(i) = split.labeled.x.row(r);
    b.labeled_y(i, split.labeled.labels[static_cast<std::size_t>(r)]) = 1.0;
  }
  b.unlabeled_x.resize(unlabeled_size, split.unlabeled.x.cols());
  for (Eigen::Index i = 0; i < unlabeled_size; ++i) b.unlabeled_x.row(i) = split.unlabeled.x.row(pick_u(rng));
  return b;
}

DatasetSplit augment_with_pseudo_labels(const DatasetSplit& split, const Classifier& c, double threshold) {
  DatasetSplit out = split;
  if (split.unlabeled.size() == 0) return out;
  const Matrix p = classify(c, split.unlabeled.x);
  std::vector<std::int64_t> rows;
  std::vector<int> labels;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    Eigen::Index k;
    if (p.row(i).maxCoeff(&k) >= threshold) {
      rows.push_back(i);
      labels.push_back(static_cast<int>(k));
    }
  }
  if (rows.empty()) return out;
  Examples extra = subset(split.unlabeled, rows);
  extra.labels = labels;
  out.labeled = concat(split.labeled, extra);
  return out;
}

Vector label_marginal(const std::vector<int>& labels, int num_classes) {
  if (labels.empty()) throw DatasetError("label_marginal needs a nonempty labeled set");
  Vector p = Vector::Zero(num_classes);
  for (int y : labels) p(y) += 1.0;
  return p / static_cast<double>(labels.size());
}

Vector label_marginal(const DatasetSplit& split) { return label_marginal(split.labeled.labels, split.num_classes); }

void write_split_manifest(const DatasetSplit& split, const fs::path& dir) {
  fs::create_directories(dir);
  const auto write = [&](const char* file, const Examples& e) {
    std::ofstream out(dir / file);
    if (!out) throw DatasetError("cannot write " + (dir / file).string());
    for (auto id : e.ids) out << id << '\n';
  };
  write("labeled.idx", split.labeled);
  write("unlabeled.idx", split.unlabeled);
  write("validation.idx", split.validation);
  write("test.idx", split.test);
}

std::vector<std::int64_t> read_index_file(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DatasetError("missing index file " + file.string());
  std::vector<std::int64_t> ids;
  std::int64_t v;
  while (in >> v) ids.push_back(v);
  if (!in.eof()) throw DatasetError("corrupt index file " + file.string());
  return ids;
}

}  // namespace puat
