#pragma once

#include "puat/trainer.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace puat {

enum class Source { Real, Generator, ClassifierPseudo };

std::string source_name(Source s);

/// Feature vectors (one per row) tagged with their source and class.
struct AlignmentSample {
  Matrix features;
  std::vector<int> labels;
  std::vector<Source> sources;
  int num_classes = 0;

  Eigen::Index size() const { return features.rows(); }
};

/// Three-source sample: `per_class` real items per class, `per_class`
/// generated items per class, and an equal-size pool of real items tagged with
/// the classifier's argmax (so its class counts follow P_C(y)). Features are
/// the classifier's penultimate activations.
AlignmentSample build_alignment_sample(const ModelBundle& m, const Examples& real, int per_class, std::uint64_t seed);

/// Mean silhouette coefficient with clusters given by the class labels,
/// pooling all sources. Throws on fewer than two classes or a class with
/// fewer than two points.
double silhouette_alignment(const AlignmentSample& s);
double silhouette(const Matrix& points, const std::vector<int>& labels);

struct ClassCountTable {
  std::vector<std::string> rows;  // P(y), P_G(y), P_C(y)
  Eigen::MatrixXi counts;         // rows x num_classes
};

ClassCountTable class_count_table(const AlignmentSample& s);
std::string class_count_csv(const ClassCountTable& t);

struct ParetoRow {
  double beta = 0.0;
  double natural = 0.0;
  std::vector<double> robust;  // one per attack, in battery order
};

/// Robust accuracy for any attack family; latent attacks draw their noise from `seed`.
double robust_accuracy(const ModelBundle& m, const AttackSpec& spec, const Examples& test, std::uint64_t seed);

/// Trains one model per beta and evaluates it on the test split.
std::vector<ParetoRow> pareto_sweep(const TrainConfig& base, const NetSpec& spec, const DatasetSplit& data,
                                    const std::vector<double>& betas, const std::vector<AttackSpec>& battery);
std::string pareto_csv(const std::vector<ParetoRow>& rows, const std::vector<AttackSpec>& battery);

/// Tab-separated: header `source class f0 f1 ...`, then one row per sample.
void export_embeddings(const AlignmentSample& s, const std::filesystem::path& out);
void export_embeddings(const ModelBundle& m, const Examples& real, const std::filesystem::path& out, int per_class,
                       std::uint64_t seed);

/// Ratio of wall-clock seconds up to the stopping epoch.
double training_time_ratio(const TrainReport& report, const TrainReport& baseline);

struct ReferenceResult {
  std::string dataset;
  std::string method;
  std::string metric;
  double mean = 0.0;
  double std = 0.0;
};

/// Reads `dataset,method,metric,mean,std` rows.
std::vector<ReferenceResult> read_reference_results(const std::filesystem::path& csv);
const ReferenceResult* find_reference(const std::vector<ReferenceResult>& rows, const std::string& dataset,
                                      const std::string& method, const std::string& metric);

}  // namespace puat
