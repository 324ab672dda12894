#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "tunnelscope/linalg.hpp"

namespace tunnelscope::metrics {

/// Symmetric n x n kernel matrix.
class GramMatrix {
public:
    /// Throws PreconditionError unless `values` is square and symmetric within 1e-9.
    explicit GramMatrix(Matrix values);

    /// Linear kernel X X^T.
    static GramMatrix linear(const Matrix& x);

    std::size_t size() const { return static_cast<std::size_t>(values_.rows()); }
    const Matrix& values() const { return values_; }

private:
    Matrix values_;
};

/// Unbiased HSIC estimator. Needs n >= 4.
double hsic_unbiased(const GramMatrix& k, const GramMatrix& l);

struct CkaConfig {
    std::size_t batch_size = 256;
    std::size_t min_batch = 4;
    bool drop_incomplete = true;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Row index groups used by `cka`: a seeded shuffle cut into consecutive
/// batches. When there are fewer rows than `batch_size` a single batch
/// holding every row is used.
std::vector<std::vector<Eigen::Index>> cka_batches(std::size_t rows, const CkaConfig& cfg);

/// Minibatch CKA with linear kernels. Not clamped to [0, 1]; the unbiased
/// estimator can overshoot slightly. Throws DegenerateRepresentationError
/// when either self-similarity term vanishes.
double cka(const Matrix& x, const Matrix& y, const CkaConfig& cfg);

/// Layer x layer CKA values; undefined (degenerate) entries are empty.
struct CkaMatrix {
    std::size_t size = 0;
    std::vector<std::optional<double>> entries;  ///< row-major size x size

    const std::optional<double>& at(std::size_t i, std::size_t j) const { return entries[i * size + j]; }
};

CkaMatrix cka_matrix(std::span<const Matrix> layers, const CkaConfig& cfg);

struct VarianceReport {
    double intra = 0.0;
    double inter = 0.0;
};

/// Mean within-class spread and mean squared distance between class means.
/// Every class in [0, num_classes) must be present; num_classes >= 2.
VarianceReport intra_inter_variance(const Matrix& activations, std::span<const int> labels,
                                    std::size_t num_classes);

/// Mean L1 distance between consecutive layers' rows; needs equal widths.
std::vector<double> l1_drift(std::span<const Matrix> layers);

/// Numerical rank of a layer's representations.
std::size_t representation_rank(const Matrix& activations, const linalg::SpectrumPolicy& policy);

}  // namespace tunnelscope::metrics
