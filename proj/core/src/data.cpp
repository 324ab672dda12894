#include "tunnelscope/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <string_view>

#include "tunnelscope/error.hpp"
#include "tunnelscope/random.hpp"

namespace tunnelscope::data {

std::vector<std::size_t> Dataset::class_counts() const {
    std::vector<std::size_t> counts(num_classes, 0);
    for (int label : labels) ++counts[static_cast<std::size_t>(label)];
    return counts;
}

void Dataset::validate() const {
    require(static_cast<std::size_t>(features.rows()) == labels.size(),
            "dataset '" + name + "': label count does not match feature rows");
    for (int label : labels)
        require(label >= 0 && static_cast<std::size_t>(label) < num_classes,
                "dataset '" + name + "': label " + std::to_string(label) + " out of range");
    linalg::require_finite(features, "dataset features");
}

void BlobSpec::validate() const {
    require(num_classes >= 2, "blobs: num_classes must be >= 2");
    require(dim >= 2, "blobs: dim must be >= 2");
    require(center_scale > 0.0, "blobs: center_scale must be > 0");
    require(noise_std > 0.0, "blobs: noise_std must be > 0");
    require(clusters_per_class >= 1, "blobs: clusters_per_class must be >= 1");
}

namespace {

constexpr std::uint64_t kCenterStream = 1;
constexpr std::uint64_t kTrainStream = 2;
constexpr std::uint64_t kTestStream = 3;

Matrix draw_centers(const BlobSpec& spec, std::uint64_t seed) {
    Rng rng(mix_seed(seed, kCenterStream));
    std::uniform_real_distribution<double> uniform(-spec.center_scale, spec.center_scale);
    Matrix centers(static_cast<Eigen::Index>(spec.num_classes * spec.clusters_per_class),
                   static_cast<Eigen::Index>(spec.dim));
    for (Eigen::Index i = 0; i < centers.rows(); ++i)
        for (Eigen::Index j = 0; j < centers.cols(); ++j) centers(i, j) = uniform(rng);
    return centers;
}

// Class c owns center rows [c * k, (c + 1) * k); samples cycle through them.
Dataset draw_samples(const BlobSpec& spec, const Matrix& centers, std::size_t per_class,
                     std::uint64_t seed, std::string name) {
    Rng rng(seed);
    std::normal_distribution<double> noise(0.0, spec.noise_std);
    const std::size_t k = spec.clusters_per_class;
    Dataset d;
    d.name = std::move(name);
    d.num_classes = spec.num_classes;
    d.features.resize(static_cast<Eigen::Index>(spec.num_classes * per_class),
                      static_cast<Eigen::Index>(spec.dim));
    d.labels.reserve(spec.num_classes * per_class);
    Eigen::Index row = 0;
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        for (std::size_t i = 0; i < per_class; ++i, ++row) {
            const auto center = static_cast<Eigen::Index>(c * k + i % k);
            for (Eigen::Index j = 0; j < d.features.cols(); ++j)
                d.features(row, j) = centers(center, j) + noise(rng);
            d.labels.push_back(static_cast<int>(c));
        }
    }
    return d;
}

DatasetPair blobs_with_seed(const BlobSpec& spec, std::uint64_t geometry_seed,
                            const std::string& name) {
    spec.validate();
    const Matrix centers = draw_centers(spec, geometry_seed);
    return {draw_samples(spec, centers, spec.per_class_train,
                         mix_seed(geometry_seed, kTrainStream), name + "/train"),
            draw_samples(spec, centers, spec.per_class_test,
                         mix_seed(geometry_seed, kTestStream), name + "/test")};
}

}  // namespace

DatasetPair make_blobs(const BlobSpec& spec) { return blobs_with_seed(spec, spec.seed, "blobs"); }

Dataset class_subset(const Dataset& d, std::span<const int> classes) {
    std::vector<int> remap(d.num_classes, -1);
    for (std::size_t i = 0; i < classes.size(); ++i) {
        const int c = classes[i];
        if (c < 0 || static_cast<std::size_t>(c) >= d.num_classes)
            throw PreconditionError("class_subset: unknown class id " + std::to_string(c));
        if (remap[static_cast<std::size_t>(c)] != -1)
            throw PreconditionError("class_subset: duplicate class id " + std::to_string(c));
        remap[static_cast<std::size_t>(c)] = static_cast<int>(i);
    }

    std::vector<Eigen::Index> rows;
    for (std::size_t r = 0; r < d.labels.size(); ++r)
        if (remap[static_cast<std::size_t>(d.labels[r])] >= 0) rows.push_back(static_cast<Eigen::Index>(r));

    Dataset out;
    out.name = d.name;
    out.num_classes = classes.size();
    out.features.resize(static_cast<Eigen::Index>(rows.size()), d.features.cols());
    out.labels.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.features.row(static_cast<Eigen::Index>(i)) = d.features.row(rows[i]);
        out.labels.push_back(remap[static_cast<std::size_t>(d.labels[static_cast<std::size_t>(rows[i])])]);
    }
    return out;
}

std::vector<Dataset> split_tasks(const Dataset& d, const ClassPartition& partition) {
    std::set<int> seen;
    for (const auto& group : partition)
        for (int c : group)
            if (!seen.insert(c).second)
                throw PreconditionError("split_tasks: class " + std::to_string(c) +
                                        " appears in more than one group");
    std::vector<Dataset> tasks;
    tasks.reserve(partition.size());
    for (std::size_t t = 0; t < partition.size(); ++t) {
        tasks.push_back(class_subset(d, partition[t]));
        tasks.back().name = d.name + "/task" + std::to_string(t + 1);
    }
    return tasks;
}

OodPair ood_pair(const BlobSpec& source, const BlobSpec& target) {
    require(!(source == target), "ood_pair: source and target specs are identical");
    // Target geometry comes from its own salted seed, so it is independent of
    // the source even when both seeds coincide.
    constexpr std::uint64_t kTargetSalt = 0x00D0'00D0ULL;
    return {blobs_with_seed(source, source.seed, "source"),
            blobs_with_seed(target, mix_seed(target.seed, kTargetSalt), "target")};
}

Standardizer Standardizer::fit(const Dataset& train) {
    require(train.size() >= 1, "standardize: empty training split");
    Standardizer s;
    s.mean = train.features.colwise().mean();
    const Matrix centered = train.features.rowwise() - s.mean;
    const double denom = train.size() > 1 ? static_cast<double>(train.size() - 1) : 1.0;
    s.scale = (centered.array().square().colwise().sum() / denom).sqrt().matrix();
    for (Eigen::Index j = 0; j < s.scale.size(); ++j)
        if (!(s.scale[j] > 0.0)) s.scale[j] = 1.0;
    return s;
}

Dataset Standardizer::apply(const Dataset& d) const {
    if (d.features.cols() != mean.size())
        throw DimensionError("standardize: feature count differs from fitted statistics");
    Dataset out = d;
    out.features = ((d.features.rowwise() - mean).array().rowwise() / scale.array()).matrix();
    return out;
}

DatasetPair standardize(const DatasetPair& pair) {
    const auto s = Standardizer::fit(pair.train);
    return {s.apply(pair.train), s.apply(pair.test)};
}

namespace {

[[noreturn]] void csv_error(const std::filesystem::path& path, std::size_t line, const std::string& what) {
    throw FormatError(path.string() + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, std::size_t num_classes) {
    std::ifstream in(path);
    if (!in) throw FormatError("load_csv: cannot open " + path.string());

    std::vector<double> values;
    std::vector<int> labels;
    std::size_t cols = 0;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;

        std::size_t field_count = 0;
        std::string_view rest(line);
        while (true) {
            const auto comma = rest.find(',');
            const std::string_view field = rest.substr(0, comma);
            double value = 0.0;
            const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
            if (ec != std::errc() || ptr != field.data() + field.size() || field.empty())
                csv_error(path, line_no, "malformed number '" + std::string(field) + "'");
            if (!std::isfinite(value)) csv_error(path, line_no, "non-finite value");
            if (field_count == 0) {
                if (value != std::floor(value) || value < 0.0 ||
                    value >= static_cast<double>(num_classes))
                    csv_error(path, line_no, "label '" + std::string(field) + "' outside [0, " +
                                                 std::to_string(num_classes) + ")");
                labels.push_back(static_cast<int>(value));
            } else {
                values.push_back(value);
            }
            ++field_count;
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        if (field_count < 2) csv_error(path, line_no, "expected a label and at least one feature");
        if (cols == 0) cols = field_count - 1;
        if (field_count - 1 != cols)
            csv_error(path, line_no, "expected " + std::to_string(cols) + " features, got " +
                                         std::to_string(field_count - 1));
    }

    Dataset d;
    d.name = path.filename().string();
    d.num_classes = num_classes;
    d.labels = std::move(labels);
    d.features = Eigen::Map<const Matrix>(values.data(), static_cast<Eigen::Index>(d.labels.size()),
                                          static_cast<Eigen::Index>(cols));
    return d;
}

void save_csv(const Dataset& d, const std::filesystem::path& path) {
    d.validate();
    std::ofstream out(path);
    if (!out) throw FormatError("save_csv: cannot open " + path.string());
    char buf[64];
    for (std::size_t r = 0; r < d.size(); ++r) {
        out << d.labels[r];
        for (Eigen::Index j = 0; j < d.features.cols(); ++j) {
            const auto res = std::to_chars(buf, buf + sizeof buf, d.features(static_cast<Eigen::Index>(r), j));
            out << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
        }
        out << '\n';
    }
    if (!out) throw FormatError("save_csv: write failed for " + path.string());
}

}  // namespace tunnelscope::data
