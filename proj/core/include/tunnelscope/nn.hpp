#pragma once

#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "tunnelscope/data.hpp"
#include "tunnelscope/linalg.hpp"

namespace tunnelscope::nn {

/// Architecture of a plain or residual rectifier MLP.
struct NetworkSpec {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_widths;
    std::size_t num_classes = 0;
    /// Identity skip into every hidden layer after the first; needs equal widths.
    bool residual = false;

    void validate() const;
    std::size_t layer_count() const { return hidden_widths.size() + 1; }
    std::size_t fan_in(std::size_t layer) const;
    std::size_t fan_out(std::size_t layer) const;
    bool operator==(const NetworkSpec&) const = default;
};

template <std::floating_point T>
using MatrixT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <std::floating_point T>
using RowVectorT = Eigen::Matrix<T, 1, Eigen::Dynamic>;

/// y = x * weight + bias, with weight stored fan_in x fan_out.
template <std::floating_point T>
struct DenseLayer {
    MatrixT<T> weight;
    RowVectorT<T> bias;

    bool operator==(const DenseLayer& other) const {
        return weight.rows() == other.weight.rows() && weight.cols() == other.weight.cols() &&
               bias.size() == other.bias.size() && weight == other.weight && bias == other.bias;
    }
};

template <std::floating_point T>
struct BasicNetwork {
    NetworkSpec spec;
    std::vector<DenseLayer<T>> layers;  ///< hidden layers then the linear head
    std::uint64_t rng_seed = 0;

    bool operator==(const BasicNetwork&) const = default;
};

/// Training/inference precision. The double instantiation exists for gradient checks.
using Network = BasicNetwork<float>;
using Parameters = std::vector<DenseLayer<float>>;

/// Uniform(-a, a) weights with a = sqrt(6 / fan_in), zero biases.
template <std::floating_point T>
BasicNetwork<T> init_network(const NetworkSpec& spec, std::uint64_t seed);

/// Per-layer outputs for a batch: post-rectifier hidden outputs, then logits.
struct ActivationSet {
    std::vector<Matrix> layers;
    std::vector<int> predictions;  ///< argmax of the logits, lowest index on ties

    std::size_t layer_count() const { return layers.size(); }
    std::size_t rows() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().rows()); }
};

ActivationSet forward_collect(const Network& net, const Matrix& batch);

/// Logits only, in the network's own precision.
template <std::floating_point T>
MatrixT<T> forward_logits(const BasicNetwork<T>& net, const MatrixT<T>& batch);

/// Row-wise argmax with ties broken toward the lowest index.
template <typename Derived>
std::vector<int> argmax_rows(const Eigen::MatrixBase<Derived>& scores) {
    std::vector<int> out(static_cast<std::size_t>(scores.rows()));
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < scores.cols(); ++c)
            if (scores(r, c) > scores(r, best)) best = c;
        out[static_cast<std::size_t>(r)] = static_cast<int>(best);
    }
    return out;
}

std::vector<int> predict(const Network& net, const Matrix& features);
double accuracy(const Network& net, const data::Dataset& d);

template <std::floating_point T>
struct LossGradient {
    double loss = 0.0;  ///< mean softmax cross-entropy
    std::vector<DenseLayer<T>> gradients;
};

/// Mean softmax cross-entropy of the batch and its exact gradient.
template <std::floating_point T>
LossGradient<T> loss_and_gradient(const BasicNetwork<T>& net, const MatrixT<T>& batch,
                                  std::span<const int> labels);

/// Row-wise softmax, max-shifted.
template <std::floating_point T>
MatrixT<T> softmax(const MatrixT<T>& logits);

struct TrainConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    double weight_decay = 0.0;
    std::size_t epochs = 30;
    std::size_t batch_size = 128;
    std::vector<std::size_t> lr_decay_milestones;
    double lr_decay_gamma = 0.1;
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 0;  ///< 0: only the first and last epoch

    void validate() const;
    double learning_rate_at(std::size_t epoch) const;
};

struct Checkpoint {
    std::size_t epoch = 0;
    std::size_t step = 0;
    Parameters parameters;
};

Checkpoint snapshot(const Network& net, std::size_t epoch, std::size_t step);

struct TrainResult {
    Network network;
    std::vector<Checkpoint> checkpoints;
    double test_accuracy = 0.0;
    std::vector<double> epoch_loss;
    std::size_t steps = 0;
};

/// Called once before the first update (step 0) and after every update
/// with the number of updates applied so far.
using StepObserver = std::function<void(std::size_t step, std::size_t epoch, const Network& net)>;

/// Mini-batch SGD with momentum on softmax cross-entropy. Single-threaded and
/// bitwise deterministic for fixed inputs.
TrainResult train(Network net, const data::Dataset& train_data, const data::Dataset& test_data,
                  const TrainConfig& cfg, const StepObserver& observer = {});

/// (1/sqrt(|W|)) * ||W_a - W_b||_2 over the weight matrix of one layer.
double weight_change_norm(const Checkpoint& a, const Checkpoint& b, std::size_t layer);

/// Half-open layer range [begin, end).
struct LayerRange {
    std::size_t begin = 0;
    std::size_t end = 0;
};

/// Copy of `net` with layers in `range` restored from `init`.
Network reset_layers(const Network& net, const Checkpoint& init, LayerRange range);

/// Layers [0, split) from `bottom`, [split, n) from `top`.
Network stitch(const Network& bottom, const Network& top, std::size_t split);

/// Same network with its head layer (and class count) taken from `head_source`.
Network with_head(const Network& body, const Network& head_source);

/// Keeps the first `depth` hidden layers.
NetworkSpec truncate(const NetworkSpec& spec, std::size_t depth);

extern template BasicNetwork<float> init_network<float>(const NetworkSpec&, std::uint64_t);
extern template BasicNetwork<double> init_network<double>(const NetworkSpec&, std::uint64_t);
extern template MatrixT<float> forward_logits<float>(const BasicNetwork<float>&, const MatrixT<float>&);
extern template MatrixT<double> forward_logits<double>(const BasicNetwork<double>&, const MatrixT<double>&);
extern template LossGradient<float> loss_and_gradient<float>(const BasicNetwork<float>&, const MatrixT<float>&, std::span<const int>);
extern template LossGradient<double> loss_and_gradient<double>(const BasicNetwork<double>&, const MatrixT<double>&, std::span<const int>);
extern template MatrixT<float> softmax<float>(const MatrixT<float>&);
extern template MatrixT<double> softmax<double>(const MatrixT<double>&);

}  // namespace tunnelscope::nn
