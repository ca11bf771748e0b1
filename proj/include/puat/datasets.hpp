#pragma once

#include "puat/nets.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace puat {

/// A set of examples, one per row. `labels` is empty for unlabeled data.
/// `ids` identify each example within its source pool.
struct Examples {
  Matrix x;
  std::vector<int> labels;
  std::vector<std::int64_t> ids;

  Eigen::Index size() const { return x.rows(); }
  bool labeled() const { return labels.size() == static_cast<std::size_t>(x.rows()); }
};

struct DatasetSplit {
  std::string name;
  DataShape shape;
  int num_classes = 0;
  Examples labeled;
  Examples unlabeled;
  Examples validation;
  Examples test;
  /// Leading rows of `labeled` that are original (not pseudo-labeled).
  Eigen::Index original_labeled = 0;
};

struct BatchPair {
  Matrix labeled_x;
  Matrix labeled_y;  // one-hot
  Matrix unlabeled_x;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One isotropic-per-axis Gaussian component of the 2-D mixture.
struct GaussComponent {
  double mean_x = 0.5;
  double mean_y = 0.5;
  double std_x = 0.05;
  double std_y = 0.05;

  bool operator==(const GaussComponent&) const = default;
};

struct SyntheticOptions {
  std::vector<GaussComponent> components;  // gauss2d; empty selects the built-in layout
  int ring_classes = 3;                    // rings2d
  double ring_noise = 0.02;
  std::int64_t train_size = 2200;
  std::int64_t test_size = 1500;

  bool operator==(const SyntheticOptions&) const = default;
};

struct LoadOptions {
  std::uint64_t seed = 0;
  std::int64_t n_labeled = -1;  // -1 keeps the dataset default
  double validation_fraction = 0.2;
  SyntheticOptions synthetic;

  bool operator==(const LoadOptions&) const = default;
};

/// Table-style defaults for a dataset id.
struct DatasetProfile {
  std::string name;
  DataShape shape;
  int num_classes = 0;
  std::int64_t n_labeled = 0;
  std::int64_t n_unlabeled = 0;
  std::int64_t n_test = 0;
};

DatasetProfile dataset_profile(const std::string& name);
std::vector<std::string> supported_datasets();

DatasetSplit load_dataset(const std::string& name, const std::filesystem::path& root, const LoadOptions& options = {});

/// Randomly keeps n_labeled labels; the rest become unlabeled.
DatasetSplit make_semisupervised_split(const Examples& full, std::int64_t n_labeled, std::uint64_t seed);

/// Moves a random fraction of the labeled pool into validation.
void reserve_validation(DatasetSplit& split, double fraction, std::uint64_t seed);

Examples synth_gauss2d(const std::vector<GaussComponent>& components, std::int64_t n, Rng& rng);
Examples synth_rings2d(int classes, double noise, std::int64_t n, Rng& rng);
std::vector<GaussComponent> default_gauss2d_components();

/// Parses CIFAR-style binary records (label byte followed by C*H*W bytes).
Examples read_binary_records(const std::filesystem::path& file, const ImageShape& shape, int num_classes,
                             std::int64_t id_offset);

BatchPair sample_batch(const DatasetSplit& split, std::int64_t labeled_size, std::int64_t unlabeled_size, Rng& rng);

DatasetSplit augment_with_pseudo_labels(const DatasetSplit& split, const Classifier& c, double threshold);

/// Empirical class frequencies of the labeled pool.
Vector label_marginal(const DatasetSplit& split);
Vector label_marginal(const std::vector<int>& labels, int num_classes);

/// Writes labeled.idx, unlabeled.idx, validation.idx and test.idx.
void write_split_manifest(const DatasetSplit& split, const std::filesystem::path& dir);
std::vector<std::int64_t> read_index_file(const std::filesystem::path& file);

Examples subset(const Examples& e, const std::vector<std::int64_t>& rows);

}  // namespace puat
