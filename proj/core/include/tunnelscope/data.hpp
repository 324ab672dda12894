#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tunnelscope/linalg.hpp"

namespace tunnelscope::data {

/// Labelled feature matrix. Labels are class indices in [0, num_classes).
struct Dataset {
    Matrix features;
    std::vector<int> labels;
    std::size_t num_classes = 0;
    std::string name;

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }
    std::vector<std::size_t> class_counts() const;

    /// Throws PreconditionError on a shape or label violation.
    void validate() const;
};

struct DatasetPair {
    Dataset train;
    Dataset test;
};

/// Isotropic Gaussian clusters around uniformly drawn centers. With
/// clusters_per_class > 1 each class is a union of several clusters, which
/// makes the raw input non-linearly-separable.
struct BlobSpec {
    std::size_t num_classes = 10;
    std::size_t dim = 32;
    std::size_t per_class_train = 500;
    std::size_t per_class_test = 100;
    double center_scale = 3.0;
    double noise_std = 0.5;
    std::size_t clusters_per_class = 1;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const BlobSpec&) const = default;
};

DatasetPair make_blobs(const BlobSpec& spec);

/// Keeps samples whose label is in `classes`, relabelled by position in `classes`.
Dataset class_subset(const Dataset& d, std::span<const int> classes);

using ClassPartition = std::vector<std::vector<int>>;

/// One relabelled dataset per (disjoint) class group.
std::vector<Dataset> split_tasks(const Dataset& d, const ClassPartition& partition);

struct OodPair {
    DatasetPair source;
    DatasetPair target;
};

/// Source and target tasks with independently drawn class geometry.
/// Identical specs are refused.
OodPair ood_pair(const BlobSpec& source, const BlobSpec& target);

/// Per-column z-scoring with statistics taken from a training split.
struct Standardizer {
    Eigen::RowVectorXd mean;
    Eigen::RowVectorXd scale;  ///< 1 where the training column has zero variance

    static Standardizer fit(const Dataset& train);
    Dataset apply(const Dataset& d) const;
};

/// Fits on `pair.train`, applies to both splits.
DatasetPair standardize(const DatasetPair& pair);

/// Rows are `label,f0,f1,...`. Errors name the 1-based line number.
Dataset load_csv(const std::filesystem::path& path, std::size_t num_classes);
void save_csv(const Dataset& d, const std::filesystem::path& path);

}  // namespace tunnelscope::data
