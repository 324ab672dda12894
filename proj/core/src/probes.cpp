#include "tunnelscope/probes.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <thread>

#include "tunnelscope/error.hpp"
#include "tunnelscope/random.hpp"

namespace tunnelscope::probes {

void ProbeConfig::validate() const {
    require(learning_rate > 0.0, "probe: learning_rate must be > 0");
    require(batch_size >= 1, "probe: batch_size must be >= 1");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "probe: Adam betas must lie in [0, 1)");
    require(epsilon > 0.0, "probe: epsilon must be > 0");
}

Probe train_probe(const Matrix& activations, std::span<const int> labels, std::size_t num_classes,
                  const ProbeConfig& cfg) {
    cfg.validate();
    require(num_classes >= 1, "train_probe: need at least one class");
    if (static_cast<std::size_t>(activations.rows()) != labels.size())
        throw DimensionError("train_probe: label count does not match activation rows");
    for (int label : labels)
        require(label >= 0 && static_cast<std::size_t>(label) < num_classes, "train_probe: label out of range");
    linalg::require_finite(activations, "train_probe activations");

    const auto features = activations.cols();
    const auto classes = static_cast<Eigen::Index>(num_classes);
    Probe probe{Matrix::Zero(features, classes), Eigen::RowVectorXd::Zero(classes)};
    const std::size_t n = labels.size();
    if (n == 0 || cfg.epochs == 0) return probe;

    Matrix m_w = Matrix::Zero(features, classes), v_w = m_w;
    Eigen::RowVectorXd m_b = Eigen::RowVectorXd::Zero(classes), v_b = m_b;
    const std::size_t batch_size = std::min(cfg.batch_size, n);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Matrix batch, delta;
    double beta1_t = 1.0, beta2_t = 1.0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(mix_seed(cfg.seed, epoch));
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < n; start += batch_size) {
            const std::size_t size = std::min(batch_size, n - start);
            batch.resize(static_cast<Eigen::Index>(size), features);
            for (std::size_t i = 0; i < size; ++i)
                batch.row(static_cast<Eigen::Index>(i)) = activations.row(static_cast<Eigen::Index>(order[start + i]));

            delta.noalias() = batch * probe.weights;
            delta.rowwise() += probe.bias;
            delta = nn::softmax<double>(delta);
            for (std::size_t i = 0; i < size; ++i) delta(static_cast<Eigen::Index>(i), labels[order[start + i]]) -= 1.0;
            delta /= static_cast<double>(size);

            const Matrix g_w = batch.transpose() * delta;
            const Eigen::RowVectorXd g_b = delta.colwise().sum();

            beta1_t *= cfg.beta1;
            beta2_t *= cfg.beta2;
            m_w = cfg.beta1 * m_w + (1.0 - cfg.beta1) * g_w;
            v_w = cfg.beta2 * v_w + (1.0 - cfg.beta2) * g_w.cwiseProduct(g_w);
            m_b = cfg.beta1 * m_b + (1.0 - cfg.beta1) * g_b;
            v_b = cfg.beta2 * v_b + (1.0 - cfg.beta2) * g_b.cwiseProduct(g_b);
            const double step = cfg.learning_rate * std::sqrt(1.0 - beta2_t) / (1.0 - beta1_t);
            const double eps = cfg.epsilon * std::sqrt(1.0 - beta2_t);
            probe.weights.array() -= step * m_w.array() / (v_w.array().sqrt() + eps);
            probe.bias.array() -= step * m_b.array() / (v_b.array().sqrt() + eps);
        }
    }
    return probe;
}

double probe_accuracy(const Probe& probe, const Matrix& activations, std::span<const int> labels) {
    require(!labels.empty(), "probe_accuracy: empty evaluation set");
    if (static_cast<std::size_t>(activations.rows()) != labels.size())
        throw DimensionError("probe_accuracy: label count does not match activation rows");
    if (activations.cols() != probe.weights.rows())
        throw DimensionError("probe_accuracy: probe expects " + std::to_string(probe.weights.rows()) +
                             " features, got " + std::to_string(activations.cols()));
    Matrix scores = activations * probe.weights;
    scores.rowwise() += probe.bias;
    const auto predicted = nn::argmax_rows(scores);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) correct += predicted[i] == labels[i];
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

ProbeCurve probe_curve(std::span<const Matrix> train_layers, std::span<const int> train_labels,
                       std::span<const Matrix> test_layers, std::span<const int> test_labels,
                       std::size_t num_classes, const ProbeConfig& cfg, std::size_t runs,
                       std::size_t threads) {
    require(runs >= 1, "probe_curve: runs must be >= 1");
    if (train_layers.size() != test_layers.size())
        throw DimensionError("probe_curve: train and test layer counts differ");

    const std::size_t layers = train_layers.size();
    ProbeCurve curve;
    curve.runs = runs;
    curve.mean.assign(layers, 0.0);
    curve.stddev.assign(layers, 0.0);

    auto probe_layer = [&](std::size_t l) {
        std::vector<double> acc(runs);
        for (std::size_t r = 0; r < runs; ++r) {
            ProbeConfig run_cfg = cfg;
            run_cfg.seed = mix_seed(cfg.seed, r);
            const Probe p = train_probe(train_layers[l], train_labels, num_classes, run_cfg);
            acc[r] = probe_accuracy(p, test_layers[l], test_labels);
        }
        const double mean = std::accumulate(acc.begin(), acc.end(), 0.0) / static_cast<double>(runs);
        double var = 0.0;
        for (double a : acc) var += (a - mean) * (a - mean);
        curve.mean[l] = mean;
        curve.stddev[l] = std::sqrt(var / static_cast<double>(runs));
    };

    const std::size_t workers = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(layers, 1));
    if (workers == 1) {
        for (std::size_t l = 0; l < layers; ++l) probe_layer(l);
        return curve;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::atomic<bool> failed{false};
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t l = next++; l < layers && !failed; l = next++) {
                    try {
                        probe_layer(l);
                    } catch (...) {
                        if (!failed.exchange(true)) failure = std::current_exception();
                    }
                }
            });
    }
    if (failure) std::rethrow_exception(failure);
    return curve;
}

ProbeCurve probe_curve(const nn::Network& net, const data::Dataset& probe_train,
                       const data::Dataset& probe_test, const ProbeConfig& cfg, std::size_t runs,
                       std::size_t threads) {
    require(probe_train.num_classes == probe_test.num_classes,
            "probe_curve: probe train/test class spaces differ");
    const auto train_acts = nn::forward_collect(net, probe_train.features);
    const auto test_acts = nn::forward_collect(net, probe_test.features);
    return probe_curve(train_acts.layers, probe_train.labels, test_acts.layers, probe_test.labels,
                       probe_train.num_classes, cfg, runs, threads);
}

}  // namespace tunnelscope::probes
