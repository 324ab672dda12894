#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tunnelscope/data.hpp"
#include "tunnelscope/linalg.hpp"
#include "tunnelscope/nn.hpp"

namespace tunnelscope::probes {

/// Adam-trained linear probe settings.
struct ProbeConfig {
    double learning_rate = 1e-3;
    std::size_t epochs = 30;
    std::size_t batch_size = 512;  ///< capped at the dataset size
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const;
};

/// Linear classifier over one layer's activations.
struct Probe {
    Matrix weights;  ///< features x classes
    Eigen::RowVectorXd bias;

    std::size_t num_classes() const { return static_cast<std::size_t>(weights.cols()); }
};

struct ProbeCurve {
    std::vector<double> mean;
    std::vector<double> stddev;  ///< population std over runs
    std::size_t runs = 0;

    std::size_t size() const { return mean.size(); }
};

/// Zero-initialized probe trained with softmax cross-entropy. The
/// activations are read only.
Probe train_probe(const Matrix& activations, std::span<const int> labels, std::size_t num_classes,
                  const ProbeConfig& cfg);

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
double probe_accuracy(const Probe& probe, const Matrix& activations, std::span<const int> labels);

/// Probe curve from pre-captured activations; one entry per layer.
/// Layers are processed on up to `threads` workers and merged by index.
ProbeCurve probe_curve(std::span<const Matrix> train_layers, std::span<const int> train_labels,
                       std::span<const Matrix> test_layers, std::span<const int> test_labels,
                       std::size_t num_classes, const ProbeConfig& cfg, std::size_t runs,
                       std::size_t threads = 1);

/// Captures activations of `net` on both splits, then probes every layer.
ProbeCurve probe_curve(const nn::Network& net, const data::Dataset& probe_train,
                       const data::Dataset& probe_test, const ProbeConfig& cfg, std::size_t runs,
                       std::size_t threads = 1);

}  // namespace tunnelscope::probes
