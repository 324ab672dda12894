#include "tunnelscope/checkpoint_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "tunnelscope/error.hpp"

namespace tunnelscope::nn {

namespace {

constexpr char kMagic[4] = {'T', 'N', 'L', 'C'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint32_t u32() {
        if (bytes_.size() - pos_ < 4)
            throw FormatError("checkpoint: truncated at byte " + std::to_string(pos_));
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }

    float f32() { return std::bit_cast<float>(u32()); }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_parameters(const Parameters& parameters) {
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(parameters.size()));
    for (const auto& layer : parameters) {
        if (layer.bias.size() != layer.weight.cols())
            throw DimensionError("checkpoint: bias length does not match weight columns");
        put_u32(out, static_cast<std::uint32_t>(layer.weight.rows()));
        put_u32(out, static_cast<std::uint32_t>(layer.weight.cols()));
        for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
            for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) put_f32(out, layer.weight(i, j));
        for (Eigen::Index j = 0; j < layer.bias.size(); ++j) put_f32(out, layer.bias[j]);
    }
    return out;
}

Parameters decode_parameters(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw FormatError("checkpoint: bad magic, expected 'TNLC'");
    Reader in(bytes.subspan(4));
    const std::uint32_t version = in.u32();
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    const std::uint32_t layers = in.u32();
    Parameters params;
    params.reserve(layers);
    for (std::uint32_t l = 0; l < layers; ++l) {
        const std::uint32_t rows = in.u32();
        const std::uint32_t cols = in.u32();
        const std::uint64_t needed = (static_cast<std::uint64_t>(rows) * cols + cols) * 4;
        if (needed > in.remaining())
            throw FormatError("checkpoint: layer " + std::to_string(l) + " exceeds file size");
        DenseLayer<float> layer;
        layer.weight.resize(rows, cols);
        layer.bias.resize(cols);
        for (std::uint32_t i = 0; i < rows; ++i)
            for (std::uint32_t j = 0; j < cols; ++j) layer.weight(i, j) = in.f32();
        for (std::uint32_t j = 0; j < cols; ++j) layer.bias[j] = in.f32();
        params.push_back(std::move(layer));
    }
    if (in.remaining() != 0) throw FormatError("checkpoint: trailing bytes after last layer");
    return params;
}

void save_parameters(const Parameters& parameters, const std::filesystem::path& path) {
    const auto bytes = encode_parameters(parameters);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("checkpoint: cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("checkpoint: write failed for " + path.string());
}

Parameters load_parameters(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("checkpoint: cannot open " + path.string());
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_parameters(bytes);
}

Network load_network(const NetworkSpec& spec, const std::filesystem::path& path) {
    spec.validate();
    Network net;
    net.spec = spec;
    net.layers = load_parameters(path);
    if (net.layers.size() != spec.layer_count())
        throw DimensionError("checkpoint: " + std::to_string(net.layers.size()) +
                             " layers, spec expects " + std::to_string(spec.layer_count()));
    for (std::size_t l = 0; l < net.layers.size(); ++l)
        if (static_cast<std::size_t>(net.layers[l].weight.rows()) != spec.fan_in(l) ||
            static_cast<std::size_t>(net.layers[l].weight.cols()) != spec.fan_out(l))
            throw DimensionError("checkpoint: layer " + std::to_string(l) + " shape does not match spec");
    return net;
}

}  // namespace tunnelscope::nn
