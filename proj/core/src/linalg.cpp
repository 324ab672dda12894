#include "tunnelscope/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "tunnelscope/error.hpp"
#include "tunnelscope/random.hpp"

namespace tunnelscope::linalg {

void SpectrumPolicy::validate() const {
    require(relative_threshold > 0.0 && relative_threshold < 1.0,
            "spectrum: relative_threshold must lie in (0, 1)");
    require(max_features >= 1, "spectrum: max_features must be >= 1");
}

void require_finite(const Matrix& m, const char* what) {
    if (!m.allFinite()) throw PreconditionError(std::string(what) + ": non-finite entries");
}

Matrix sample_covariance(const Matrix& x) {
    require(x.rows() >= 2, "sample_covariance: need at least 2 rows");
    const Eigen::RowVectorXd mean = x.colwise().mean();
    const Matrix centered = x.rowwise() - mean;
    Matrix cov = (centered.transpose() * centered) / static_cast<double>(x.rows() - 1);
    // Exact symmetry; the product above can differ in the last ulp.
    return (cov + cov.transpose()) * 0.5;
}

std::vector<double> singular_values(const Matrix& m) {
    require(m.rows() > 0 && m.cols() > 0, "singular_values: empty matrix");
    const Eigen::MatrixXd dense = m;
    Eigen::BDCSVD<Eigen::MatrixXd> svd(dense);
    const Eigen::VectorXd& s = svd.singularValues();
    std::vector<double> out(s.data(), s.data() + s.size());
    std::sort(out.begin(), out.end(), std::greater<>());
    return out;
}

std::vector<double> psd_spectrum(const Matrix& symmetric) {
    require(symmetric.rows() == symmetric.cols() && symmetric.rows() > 0,
            "psd_spectrum: need a non-empty square matrix");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(symmetric, Eigen::EigenvaluesOnly);
    const Eigen::VectorXd& ev = solver.eigenvalues();
    std::vector<double> out(static_cast<std::size_t>(ev.size()));
    for (Eigen::Index i = 0; i < ev.size(); ++i) out[static_cast<std::size_t>(i)] = std::abs(ev[i]);
    std::sort(out.begin(), out.end(), std::greater<>());
    return out;
}

std::vector<std::size_t> subsample_columns(std::size_t total, std::size_t count,
                                           std::uint64_t seed) {
    require(count <= total, "subsample_columns: count exceeds total");
    std::vector<std::size_t> idx(total);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(mix_seed(seed, 0x5eed));
    // Partial Fisher-Yates: first `count` slots are a uniform sample.
    for (std::size_t i = 0; i < count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, total - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    return idx;
}

std::size_t numerical_rank(const Matrix& x, const SpectrumPolicy& policy) {
    policy.validate();
    require(x.rows() >= 2, "numerical_rank: need at least 2 rows");

    Matrix features;
    const Matrix* source = &x;
    if (static_cast<std::size_t>(x.cols()) > policy.max_features) {
        const auto cols = subsample_columns(static_cast<std::size_t>(x.cols()),
                                            policy.max_features, policy.seed);
        features.resize(x.rows(), static_cast<Eigen::Index>(cols.size()));
        for (std::size_t j = 0; j < cols.size(); ++j)
            features.col(static_cast<Eigen::Index>(j)) = x.col(static_cast<Eigen::Index>(cols[j]));
        source = &features;
    }

    const auto spectrum = psd_spectrum(sample_covariance(*source));
    if (spectrum.empty() || spectrum.front() <= 0.0) return 0;
    const double cutoff = policy.relative_threshold * spectrum.front();
    return static_cast<std::size_t>(
        std::count_if(spectrum.begin(), spectrum.end(), [&](double s) { return s > cutoff; }));
}

}  // namespace tunnelscope::linalg
