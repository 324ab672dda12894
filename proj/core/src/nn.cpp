#include "tunnelscope/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "tunnelscope/error.hpp"
#include "tunnelscope/random.hpp"

namespace tunnelscope::nn {

void NetworkSpec::validate() const {
    require(input_dim >= 1, "network: input_dim must be >= 1");
    require(num_classes >= 2, "network: num_classes must be >= 2");
    for (std::size_t w : hidden_widths) require(w >= 1, "network: hidden widths must be >= 1");
    if (residual && !hidden_widths.empty()) {
        const bool equal = std::all_of(hidden_widths.begin(), hidden_widths.end(),
                                       [&](std::size_t w) { return w == hidden_widths.front(); });
        require(equal, "network: residual stacks need equal hidden widths");
    }
}

std::size_t NetworkSpec::fan_in(std::size_t layer) const {
    return layer == 0 ? input_dim : hidden_widths.at(layer - 1);
}

std::size_t NetworkSpec::fan_out(std::size_t layer) const {
    return layer < hidden_widths.size() ? hidden_widths[layer] : num_classes;
}

namespace {

bool has_skip(const NetworkSpec& spec, std::size_t layer) {
    return spec.residual && layer >= 1 && layer < spec.hidden_widths.size();
}

}  // namespace

template <std::floating_point T>
BasicNetwork<T> init_network(const NetworkSpec& spec, std::uint64_t seed) {
    spec.validate();
    BasicNetwork<T> net;
    net.spec = spec;
    net.rng_seed = seed;
    Rng rng(mix_seed(seed, 0x1417));
    for (std::size_t l = 0; l < spec.layer_count(); ++l) {
        const auto in = static_cast<Eigen::Index>(spec.fan_in(l));
        const auto out = static_cast<Eigen::Index>(spec.fan_out(l));
        const double bound = std::sqrt(6.0 / static_cast<double>(in));
        std::uniform_real_distribution<double> uniform(-bound, bound);
        DenseLayer<T> layer;
        layer.weight.resize(in, out);
        for (Eigen::Index i = 0; i < in; ++i)
            for (Eigen::Index j = 0; j < out; ++j) layer.weight(i, j) = static_cast<T>(uniform(rng));
        layer.bias = RowVectorT<T>::Zero(out);
        net.layers.push_back(std::move(layer));
    }
    return net;
}

namespace {

template <std::floating_point T>
void check_input(const BasicNetwork<T>& net, Eigen::Index cols) {
    if (static_cast<std::size_t>(cols) != net.spec.input_dim)
        throw DimensionError("network expects " + std::to_string(net.spec.input_dim) +
                             " input features, got " + std::to_string(cols));
}

// outputs[l] is the output of layer l; pre-activations are not kept because
// the rectifier mask can be read back from the output (out > 0 <=> pre > 0).
template <std::floating_point T>
std::vector<MatrixT<T>> forward_all(const BasicNetwork<T>& net, const MatrixT<T>& batch) {
    check_input(net, batch.cols());
    const std::size_t hidden = net.spec.hidden_widths.size();
    std::vector<MatrixT<T>> outputs(net.layers.size());
    const MatrixT<T>* input = &batch;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const auto& layer = net.layers[l];
        MatrixT<T>& z = outputs[l];
        z.noalias() = *input * layer.weight;
        z.rowwise() += layer.bias;
        if (l < hidden) {
            if (has_skip(net.spec, l)) z += *input;
            z = z.cwiseMax(T(0));
        }
        input = &z;
    }
    return outputs;
}

}  // namespace

template <std::floating_point T>
MatrixT<T> forward_logits(const BasicNetwork<T>& net, const MatrixT<T>& batch) {
    return std::move(forward_all(net, batch).back());
}

template <std::floating_point T>
MatrixT<T> softmax(const MatrixT<T>& logits) {
    MatrixT<T> p = logits.colwise() - logits.rowwise().maxCoeff();
    p = p.array().exp().matrix();
    p.array().colwise() /= p.rowwise().sum().array();
    return p;
}

template <std::floating_point T>
LossGradient<T> loss_and_gradient(const BasicNetwork<T>& net, const MatrixT<T>& batch,
                                  std::span<const int> labels) {
    if (static_cast<std::size_t>(batch.rows()) != labels.size())
        throw DimensionError("loss_and_gradient: label count does not match batch rows");
    require(batch.rows() > 0, "loss_and_gradient: empty batch");
    const auto outputs = forward_all(net, batch);
    const MatrixT<T>& logits = outputs.back();
    const auto n = batch.rows();

    // log-sum-exp in double keeps the loss value accurate for the float path.
    double loss = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) {
        const double m = static_cast<double>(logits.row(r).maxCoeff());
        double sum = 0.0;
        for (Eigen::Index c = 0; c < logits.cols(); ++c)
            sum += std::exp(static_cast<double>(logits(r, c)) - m);
        loss += m + std::log(sum) - static_cast<double>(logits(r, labels[static_cast<std::size_t>(r)]));
    }
    loss /= static_cast<double>(n);

    MatrixT<T> delta = softmax(logits);
    for (Eigen::Index r = 0; r < n; ++r) delta(r, labels[static_cast<std::size_t>(r)]) -= T(1);
    delta /= static_cast<T>(n);

    LossGradient<T> result;
    result.loss = loss;
    result.gradients.resize(net.layers.size());
    for (std::size_t l = net.layers.size(); l-- > 0;) {
        const MatrixT<T>& input = l == 0 ? batch : outputs[l - 1];
        auto& grad = result.gradients[l];
        grad.weight.noalias() = input.transpose() * delta;
        grad.bias = delta.colwise().sum();
        if (l == 0) break;
        MatrixT<T> upstream;
        upstream.noalias() = delta * net.layers[l].weight.transpose();
        if (has_skip(net.spec, l)) upstream += delta;
        // Rectifier of layer l - 1.
        delta = (outputs[l - 1].array() > T(0)).select(upstream, T(0));
    }
    return result;
}

ActivationSet forward_collect(const Network& net, const Matrix& batch) {
    const MatrixT<float> input = batch.cast<float>();
    auto outputs = forward_all(net, input);
    ActivationSet set;
    set.predictions = argmax_rows(outputs.back());
    set.layers.reserve(outputs.size());
    for (auto& out : outputs) {
        set.layers.push_back(out.cast<double>());
        out = MatrixT<float>();
    }
    return set;
}

std::vector<int> predict(const Network& net, const Matrix& features) {
    return argmax_rows(forward_logits(net, MatrixT<float>(features.cast<float>())));
}

double accuracy(const Network& net, const data::Dataset& d) {
    require(d.size() > 0, "accuracy: empty evaluation set");
    const auto predictions = predict(net, d.features);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) correct += predictions[i] == d.labels[i];
    return static_cast<double>(correct) / static_cast<double>(d.size());
}

void TrainConfig::validate() const {
    require(learning_rate >= 0.0 && std::isfinite(learning_rate), "train: learning_rate must be >= 0");
    require(momentum >= 0.0 && momentum < 1.0, "train: momentum must lie in [0, 1)");
    require(weight_decay >= 0.0, "train: weight_decay must be >= 0");
    require(batch_size >= 1, "train: batch_size must be >= 1");
    require(lr_decay_gamma > 0.0 && lr_decay_gamma <= 1.0, "train: lr_decay_gamma must lie in (0, 1]");
    for (std::size_t i = 0; i < lr_decay_milestones.size(); ++i) {
        require(lr_decay_milestones[i] < epochs, "train: lr_decay_milestones must be < epochs");
        require(i == 0 || lr_decay_milestones[i] > lr_decay_milestones[i - 1],
                "train: lr_decay_milestones must be strictly increasing");
    }
}

double TrainConfig::learning_rate_at(std::size_t epoch) const {
    double lr = learning_rate;
    for (std::size_t m : lr_decay_milestones)
        if (epoch >= m) lr *= lr_decay_gamma;
    return lr;
}

Checkpoint snapshot(const Network& net, std::size_t epoch, std::size_t step) {
    return {epoch, step, net.layers};
}

TrainResult train(Network net, const data::Dataset& train_data, const data::Dataset& test_data,
                  const TrainConfig& cfg, const StepObserver& observer) {
    cfg.validate();
    net.spec.validate();
    train_data.validate();
    test_data.validate();
    require(train_data.size() > 0, "train: empty training set");
    require(train_data.dim() == net.spec.input_dim && test_data.dim() == net.spec.input_dim,
            "train: data dimension does not match the network input");
    require(train_data.num_classes <= net.spec.num_classes && test_data.num_classes <= net.spec.num_classes,
            "train: dataset has more classes than the network head");

    const MatrixT<float> features = train_data.features.cast<float>();
    const std::size_t n = train_data.size();

    std::vector<DenseLayer<float>> velocity;
    for (const auto& layer : net.layers)
        velocity.push_back({MatrixT<float>::Zero(layer.weight.rows(), layer.weight.cols()),
                            RowVectorT<float>::Zero(layer.bias.size())});

    TrainResult result;
    result.checkpoints.push_back(snapshot(net, 0, 0));
    if (observer) observer(0, 0, net);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    MatrixT<float> batch;
    std::vector<int> batch_labels;
    std::size_t step = 0;
    const auto momentum = static_cast<float>(cfg.momentum);
    const auto decay = static_cast<float>(cfg.weight_decay);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto lr = static_cast<float>(cfg.learning_rate_at(epoch));
        Rng rng(mix_seed(cfg.seed, epoch));
        std::shuffle(order.begin(), order.end(), rng);

        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t size = std::min(cfg.batch_size, n - start);
            batch.resize(static_cast<Eigen::Index>(size), features.cols());
            batch_labels.resize(size);
            for (std::size_t i = 0; i < size; ++i) {
                batch.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(order[start + i]));
                batch_labels[i] = train_data.labels[order[start + i]];
            }

            auto lg = loss_and_gradient(net, batch, batch_labels);
            if (!std::isfinite(lg.loss))
                throw TrainingDivergedError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                            ", step " + std::to_string(step));
            epoch_loss += lg.loss * static_cast<double>(size);

            for (std::size_t l = 0; l < net.layers.size(); ++l) {
                auto& layer = net.layers[l];
                auto& v = velocity[l];
                auto& g = lg.gradients[l];
                if (decay != 0.0f) {
                    g.weight += decay * layer.weight;
                    g.bias += decay * layer.bias;
                }
                v.weight = momentum * v.weight + g.weight;
                v.bias = momentum * v.bias + g.bias;
                layer.weight -= lr * v.weight;
                layer.bias -= lr * v.bias;
            }
            ++step;
            if (observer) observer(step, epoch, net);
        }
        result.epoch_loss.push_back(epoch_loss / static_cast<double>(n));

        const std::size_t done = epoch + 1;
        const bool last = done == cfg.epochs;
        if (last || (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0))
            result.checkpoints.push_back(snapshot(net, done, step));
    }

    result.steps = step;
    result.test_accuracy = test_data.size() > 0 ? accuracy(net, test_data) : 0.0;
    result.network = std::move(net);
    return result;
}

double weight_change_norm(const Checkpoint& a, const Checkpoint& b, std::size_t layer) {
    require(layer < a.parameters.size() && layer < b.parameters.size(),
            "weight_change_norm: layer index out of range");
    const auto& wa = a.parameters[layer].weight;
    const auto& wb = b.parameters[layer].weight;
    if (wa.rows() != wb.rows() || wa.cols() != wb.cols())
        throw DimensionError("weight_change_norm: layer " + std::to_string(layer) + " shapes differ");
    const double diff = (wa.cast<double>() - wb.cast<double>()).norm();
    return diff / std::sqrt(static_cast<double>(wa.size()));
}

namespace {

void require_same_shapes(const Parameters& a, const Parameters& b, const char* what) {
    if (a.size() != b.size()) throw DimensionError(std::string(what) + ": layer counts differ");
    for (std::size_t l = 0; l < a.size(); ++l)
        if (a[l].weight.rows() != b[l].weight.rows() || a[l].weight.cols() != b[l].weight.cols() ||
            a[l].bias.size() != b[l].bias.size())
            throw DimensionError(std::string(what) + ": layer " + std::to_string(l) + " shapes differ");
}

}  // namespace

Network reset_layers(const Network& net, const Checkpoint& init, LayerRange range) {
    require_same_shapes(net.layers, init.parameters, "reset_layers");
    require(range.begin <= range.end && range.end <= net.layers.size(),
            "reset_layers: invalid layer range");
    Network out = net;
    for (std::size_t l = range.begin; l < range.end; ++l) out.layers[l] = init.parameters[l];
    return out;
}

Network stitch(const Network& bottom, const Network& top, std::size_t split) {
    require(bottom.spec == top.spec, "stitch: network specs differ");
    require(split <= bottom.layers.size(), "stitch: split out of range");
    Network out = top;
    for (std::size_t l = 0; l < split; ++l) out.layers[l] = bottom.layers[l];
    return out;
}

Network with_head(const Network& body, const Network& head_source) {
    NetworkSpec a = body.spec;
    NetworkSpec b = head_source.spec;
    a.num_classes = b.num_classes = 0;
    require(a == b, "with_head: bodies have different architectures");
    Network out = body;
    out.spec.num_classes = head_source.spec.num_classes;
    out.layers.back() = head_source.layers.back();
    return out;
}

NetworkSpec truncate(const NetworkSpec& spec, std::size_t depth) {
    require(depth <= spec.hidden_widths.size(), "truncate: depth out of range");
    NetworkSpec out = spec;
    out.hidden_widths.resize(depth);
    return out;
}

template BasicNetwork<float> init_network<float>(const NetworkSpec&, std::uint64_t);
template BasicNetwork<double> init_network<double>(const NetworkSpec&, std::uint64_t);
template MatrixT<float> forward_logits<float>(const BasicNetwork<float>&, const MatrixT<float>&);
template MatrixT<double> forward_logits<double>(const BasicNetwork<double>&, const MatrixT<double>&);
template LossGradient<float> loss_and_gradient<float>(const BasicNetwork<float>&, const MatrixT<float>&, std::span<const int>);
template LossGradient<double> loss_and_gradient<double>(const BasicNetwork<double>&, const MatrixT<double>&, std::span<const int>);
template MatrixT<float> softmax<float>(const MatrixT<float>&);
template MatrixT<double> softmax<double>(const MatrixT<double>&);

}  // namespace tunnelscope::nn
