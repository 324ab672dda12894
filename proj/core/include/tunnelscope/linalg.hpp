#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace tunnelscope {

/// Dense row-major matrix; rows are samples, columns are features.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

namespace linalg {

/// How a covariance spectrum is turned into a numerical rank.
struct SpectrumPolicy {
    double relative_threshold = 1e-3;  ///< keep s_i > relative_threshold * s_1
    std::size_t max_features = 2048;   ///< wider inputs are column-subsampled first
    std::uint64_t seed = 0;            ///< drives the column subsample

    void validate() const;
};

/// Throws PreconditionError if any entry is NaN or infinite.
void require_finite(const Matrix& m, const char* what);

/// Unbiased sample covariance of the columns of `x` (p x p). Needs >= 2 rows.
Matrix sample_covariance(const Matrix& x);

/// Singular values in non-increasing order; length min(rows, cols).
std::vector<double> singular_values(const Matrix& m);

/// Spectrum of a symmetric positive semi-definite matrix, non-increasing.
/// Equal to its singular values; small negative round-off is clamped to 0.
std::vector<double> psd_spectrum(const Matrix& symmetric);

/// Count of covariance singular values above threshold * largest.
/// Returns 0 for a zero covariance.
std::size_t numerical_rank(const Matrix& x, const SpectrumPolicy& policy);

/// Seeded uniform sample of `count` distinct column indices out of `total`, sorted.
std::vector<std::size_t> subsample_columns(std::size_t total, std::size_t count,
                                           std::uint64_t seed);

}  // namespace linalg
}  // namespace tunnelscope
