#include "tunnelscope/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "tunnelscope/error.hpp"
#include "tunnelscope/random.hpp"

namespace tunnelscope::metrics {

GramMatrix::GramMatrix(Matrix values) : values_(std::move(values)) {
    require(values_.rows() == values_.cols(), "gram: matrix must be square");
    const double scale = std::max(1.0, values_.cwiseAbs().maxCoeff());
    require((values_ - values_.transpose()).cwiseAbs().maxCoeff() <= 1e-9 * scale,
            "gram: matrix must be symmetric");
}

GramMatrix GramMatrix::linear(const Matrix& x) {
    Matrix k = x * x.transpose();
    return GramMatrix((k + k.transpose()) * 0.5);
}

namespace {

// Diagonal removed.
Matrix hollow(const Matrix& k) {
    Matrix out = k;
    out.diagonal().setZero();
    return out;
}

double hsic_hollow(const Matrix& kt, const Matrix& lt) {
    const double n = static_cast<double>(kt.rows());
    const double trace = (kt.array() * lt.transpose().array()).sum();
    const double sums = kt.sum() * lt.sum() / ((n - 1.0) * (n - 2.0));
    const Eigen::VectorXd k1 = kt.transpose() * Eigen::VectorXd::Ones(kt.rows());
    const Eigen::VectorXd l1 = lt * Eigen::VectorXd::Ones(lt.rows());
    const double cross = 2.0 / (n - 2.0) * k1.dot(l1);
    return (trace + sums - cross) / (n * (n - 3.0));
}

}  // namespace

double hsic_unbiased(const GramMatrix& k, const GramMatrix& l) {
    if (k.size() != l.size()) throw DimensionError("hsic: gram matrices differ in size");
    require(k.size() >= 4, "hsic: need n >= 4");
    return hsic_hollow(hollow(k.values()), hollow(l.values()));
}

void CkaConfig::validate() const {
    require(min_batch >= 4, "cka: min_batch must be >= 4");
    require(batch_size >= min_batch, "cka: batch_size must be >= min_batch");
}

std::vector<std::vector<Eigen::Index>> cka_batches(std::size_t rows, const CkaConfig& cfg) {
    cfg.validate();
    require(rows >= cfg.min_batch, "cka: need at least min_batch rows");
    std::vector<Eigen::Index> order(rows);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng rng(mix_seed(cfg.seed, 0xcca));
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<std::vector<Eigen::Index>> batches;
    const std::size_t batch = std::min(cfg.batch_size, rows);
    for (std::size_t start = 0; start < rows; start += batch) {
        const std::size_t size = std::min(batch, rows - start);
        if (size < batch && (cfg.drop_incomplete || size < cfg.min_batch)) break;
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(start + size));
    }
    return batches;
}

namespace {

// Hollow linear Gram matrix of every batch, plus the mean self-HSIC.
struct LayerGrams {
    std::vector<Matrix> hollow;
    double self = 0.0;
    bool degenerate = false;
};

LayerGrams layer_grams(const Matrix& x, const std::vector<std::vector<Eigen::Index>>& batches) {
    LayerGrams g;
    double scale = 0.0;
    for (const auto& rows : batches) {
        const Matrix xb = x(rows, Eigen::placeholders::all);
        Matrix k = xb * xb.transpose();
        k = (k + k.transpose()) * 0.5;
        k.diagonal().setZero();
        const double n = static_cast<double>(rows.size());
        g.self += hsic_hollow(k, k);
        scale += k.squaredNorm() / (n * (n - 3.0));
        g.hollow.push_back(std::move(k));
    }
    g.self /= static_cast<double>(batches.size());
    scale /= static_cast<double>(batches.size());
    // Constant or all-zero representations give a self-HSIC that is zero up
    // to round-off relative to the size of the individual terms.
    g.degenerate = !(g.self > 1e-10 * scale);
    return g;
}

double cka_from_grams(const LayerGrams& a, const LayerGrams& b) {
    if (a.degenerate || b.degenerate)
        throw DegenerateRepresentationError("cka: representation has zero self-similarity");
    double cross = 0.0;
    for (std::size_t i = 0; i < a.hollow.size(); ++i) cross += hsic_hollow(a.hollow[i], b.hollow[i]);
    cross /= static_cast<double>(a.hollow.size());
    return cross / (std::sqrt(a.self) * std::sqrt(b.self));
}

}  // namespace

double cka(const Matrix& x, const Matrix& y, const CkaConfig& cfg) {
    if (x.rows() != y.rows()) throw DimensionError("cka: row counts differ");
    const auto batches = cka_batches(static_cast<std::size_t>(x.rows()), cfg);
    return cka_from_grams(layer_grams(x, batches), layer_grams(y, batches));
}

CkaMatrix cka_matrix(std::span<const Matrix> layers, const CkaConfig& cfg) {
    require(!layers.empty(), "cka_matrix: need at least one layer");
    for (const auto& l : layers)
        if (l.rows() != layers.front().rows()) throw DimensionError("cka_matrix: layers differ in row count");
    const auto batches = cka_batches(static_cast<std::size_t>(layers.front().rows()), cfg);
    std::vector<LayerGrams> grams;
    grams.reserve(layers.size());
    for (const auto& l : layers) grams.push_back(layer_grams(l, batches));

    CkaMatrix out;
    out.size = layers.size();
    out.entries.resize(out.size * out.size);
    for (std::size_t i = 0; i < out.size; ++i) {
        for (std::size_t j = i; j < out.size; ++j) {
            if (grams[i].degenerate || grams[j].degenerate) continue;
            const double v = cka_from_grams(grams[i], grams[j]);
            out.entries[i * out.size + j] = v;
            out.entries[j * out.size + i] = v;
        }
    }
    return out;
}

VarianceReport intra_inter_variance(const Matrix& activations, std::span<const int> labels,
                                    std::size_t num_classes) {
    if (static_cast<std::size_t>(activations.rows()) != labels.size())
        throw DimensionError("variance: label count does not match activation rows");
    require(num_classes >= 2, "variance: inter-class variance needs at least 2 classes");

    const auto p = activations.cols();
    Matrix means = Matrix::Zero(static_cast<Eigen::Index>(num_classes), p);
    std::vector<std::size_t> counts(num_classes, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        require(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < num_classes, "variance: label out of range");
        means.row(labels[i]) += activations.row(static_cast<Eigen::Index>(i));
        ++counts[static_cast<std::size_t>(labels[i])];
    }
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (counts[c] == 0) throw PreconditionError("variance: class " + std::to_string(c) + " has no samples");
        means.row(static_cast<Eigen::Index>(c)) /= static_cast<double>(counts[c]);
    }

    std::vector<double> spread(num_classes, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i)
        spread[static_cast<std::size_t>(labels[i])] +=
            (activations.row(static_cast<Eigen::Index>(i)) - means.row(labels[i])).squaredNorm();

    VarianceReport report;
    const auto classes = static_cast<double>(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) report.intra += spread[c] / static_cast<double>(counts[c]);
    report.intra /= classes;
    for (std::size_t j = 0; j < num_classes; ++j)
        for (std::size_t k = 0; k < num_classes; ++k)
            if (j != k)
                report.inter += (means.row(static_cast<Eigen::Index>(j)) - means.row(static_cast<Eigen::Index>(k))).squaredNorm();
    report.inter /= classes * (classes - 1.0);
    return report;
}

std::vector<double> l1_drift(std::span<const Matrix> layers) {
    std::vector<double> out;
    for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
        const Matrix& a = layers[l];
        const Matrix& b = layers[l + 1];
        if (a.cols() != b.cols() || a.rows() != b.rows())
            throw DimensionError("l1_drift: layers " + std::to_string(l) + " and " + std::to_string(l + 1) +
                                 " differ in shape");
        require(a.rows() > 0, "l1_drift: empty layer");
        out.push_back((b - a).cwiseAbs().rowwise().sum().mean());
    }
    return out;
}

std::size_t representation_rank(const Matrix& activations, const linalg::SpectrumPolicy& policy) {
    return linalg::numerical_rank(activations, policy);
}

}  // namespace tunnelscope::metrics
