#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

#include "tunnelscope/data.hpp"
#include "tunnelscope/error.hpp"
#include "tunnelscope/probes.hpp"

namespace ts = tunnelscope;
namespace dt = tunnelscope::data;
namespace fs = std::filesystem;

namespace {

dt::BlobSpec small_spec(std::uint64_t seed = 0) {
    dt::BlobSpec s;
    s.num_classes = 10;
    s.dim = 32;
    s.per_class_train = 30;
    s.per_class_test = 10;
    s.seed = seed;
    return s;
}

fs::path temp_file(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "tunnelscope_data_test";
    fs::create_directories(dir);
    return dir / name;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream(p) << text;
}

bool same(const dt::Dataset& a, const dt::Dataset& b) {
    return a.labels == b.labels && a.num_classes == b.num_classes && a.features.rows() == b.features.rows() &&
           a.features.cols() == b.features.cols() && a.features == b.features;
}

}  // namespace

TEST(Blobs, ShapesAndCounts) {
    const auto pair = dt::make_blobs(small_spec());
    EXPECT_EQ(pair.train.size(), 300u);
    EXPECT_EQ(pair.test.size(), 100u);
    EXPECT_EQ(pair.train.dim(), 32u);
    for (auto c : pair.train.class_counts()) EXPECT_EQ(c, 30u);
    EXPECT_NO_THROW(pair.train.validate());
}

TEST(Blobs, Deterministic) {
    const auto a = dt::make_blobs(small_spec(4));
    const auto b = dt::make_blobs(small_spec(4));
    EXPECT_TRUE(same(a.train, b.train));
    EXPECT_TRUE(same(a.test, b.test));
    EXPECT_FALSE(same(a.train, dt::make_blobs(small_spec(5)).train));
}

TEST(Blobs, TrainAndTestAreDistinctDraws) {
    const auto pair = dt::make_blobs(small_spec());
    EXPECT_NE(pair.train.features.row(0), pair.test.features.row(0));
}

TEST(Blobs, NoiselessLimitIsSeparable) {
    auto spec = small_spec();
    spec.noise_std = 1e-12;
    const auto pair = dt::make_blobs(spec);
    // Every sample sits on its class center.
    for (std::size_t i = 0; i < pair.train.size(); ++i) {
        const auto first = static_cast<Eigen::Index>(static_cast<std::size_t>(pair.train.labels[i]) * 30);
        EXPECT_LT((pair.train.features.row(static_cast<Eigen::Index>(i)) - pair.train.features.row(first)).norm(),
                  1e-9);
    }
    ts::probes::ProbeConfig cfg;
    cfg.epochs = 200;
    cfg.learning_rate = 0.05;
    const auto probe = ts::probes::train_probe(pair.train.features, pair.train.labels, 10, cfg);
    EXPECT_EQ(ts::probes::probe_accuracy(probe, pair.test.features, pair.test.labels), 1.0);
}

TEST(Blobs, CentersPairwiseDistinct) {
    auto spec = small_spec();
    spec.noise_std = 1e-12;
    const auto pair = dt::make_blobs(spec);
    for (int a = 0; a < 10; ++a)
        for (int b = a + 1; b < 10; ++b)
            EXPECT_GT((pair.train.features.row(30 * a) - pair.train.features.row(30 * b)).norm(), 0.0);
}

TEST(Blobs, ClustersCycleWithinClass) {
    auto spec = small_spec();
    spec.clusters_per_class = 3;
    spec.noise_std = 1e-12;
    const auto pair = dt::make_blobs(spec);
    const auto& f = pair.train.features;
    EXPECT_LT((f.row(0) - f.row(3)).norm(), 1e-9);
    EXPECT_GT((f.row(0) - f.row(1)).norm(), 1e-3);
}

TEST(Blobs, SpecValidation) {
    auto spec = small_spec();
    spec.num_classes = 1;
    EXPECT_THROW(spec.validate(), ts::PreconditionError);
    spec = small_spec();
    spec.dim = 1;
    EXPECT_THROW(spec.validate(), ts::PreconditionError);
    spec = small_spec();
    spec.noise_std = 0;
    EXPECT_THROW(spec.validate(), ts::PreconditionError);
    spec = small_spec();
    spec.center_scale = -1;
    EXPECT_THROW(spec.validate(), ts::PreconditionError);
}

TEST(ClassSubset, AllClassesIsIdentity) {
    const auto d = dt::make_blobs(small_spec()).train;
    std::vector<int> all(10);
    std::iota(all.begin(), all.end(), 0);
    EXPECT_TRUE(same(dt::class_subset(d, all), d));
}

TEST(ClassSubset, SingleClassAndPair) {
    const auto d = dt::make_blobs(small_spec()).train;
    const std::vector<int> one = {6};
    const auto s = dt::class_subset(d, one);
    EXPECT_EQ(s.num_classes, 1u);
    for (int l : s.labels) EXPECT_EQ(l, 0);
    const std::vector<int> pair = {3, 7};
    const auto counts = d.class_counts();
    EXPECT_EQ(dt::class_subset(d, pair).size(), counts[3] + counts[7]);
    // Relabelled by position.
    const std::vector<int> reversed = {7, 3};
    const auto r = dt::class_subset(d, reversed);
    EXPECT_EQ(r.labels.front(), 1);
}

TEST(ClassSubset, Errors) {
    const auto d = dt::make_blobs(small_spec()).train;
    const std::vector<int> unknown = {1, 10};
    EXPECT_THROW(dt::class_subset(d, unknown), ts::PreconditionError);
    const std::vector<int> duplicate = {2, 2};
    EXPECT_THROW(dt::class_subset(d, duplicate), ts::PreconditionError);
}

TEST(SplitTasks, FiveAndFive) {
    const auto d = dt::make_blobs(small_spec()).train;
    const auto tasks = dt::split_tasks(d, {{0, 1, 2, 3, 4}, {5, 6, 7, 8, 9}});
    ASSERT_EQ(tasks.size(), 2u);
    EXPECT_EQ(tasks[0].num_classes, 5u);
    EXPECT_EQ(tasks[1].num_classes, 5u);
    EXPECT_EQ(tasks[0].size() + tasks[1].size(), d.size());
}

TEST(SplitTasks, ThreeAndSeven) {
    const auto d = dt::make_blobs(small_spec()).train;
    const auto tasks = dt::split_tasks(d, {{0, 1, 2}, {3, 4, 5, 6, 7, 8, 9}});
    EXPECT_EQ(tasks[0].num_classes, 3u);
    EXPECT_EQ(tasks[1].num_classes, 7u);
}

TEST(SplitTasks, SingletonPartitionReemitsInput) {
    const auto d = dt::make_blobs(small_spec()).train;
    const auto tasks = dt::split_tasks(d, {{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}});
    ASSERT_EQ(tasks.size(), 1u);
    EXPECT_TRUE(same(tasks[0], d));
}

TEST(SplitTasks, OverlapRejected) {
    const auto d = dt::make_blobs(small_spec()).train;
    EXPECT_THROW(dt::split_tasks(d, {{0, 1}, {1, 2}}), ts::PreconditionError);
}

TEST(SplitTasks, CommutesWithSubset) {
    const auto d = dt::make_blobs(small_spec()).train;
    const std::vector<int> outer = {1, 3, 5, 7, 9};
    const auto nested = dt::split_tasks(dt::class_subset(d, outer), {{0, 2}, {4}});
    const std::vector<int> direct_a = {1, 5};
    const std::vector<int> direct_b = {9};
    EXPECT_TRUE(same(nested[0], dt::class_subset(d, direct_a)));
    EXPECT_TRUE(same(nested[1], dt::class_subset(d, direct_b)));
}

TEST(Ood, IdenticalSpecsRefused) {
    EXPECT_THROW(dt::ood_pair(small_spec(), small_spec()), ts::PreconditionError);
}

TEST(Ood, TargetIsLearnableAndMayDifferInClassCount) {
    auto target = small_spec(1);
    target.num_classes = 5;
    const auto pair = dt::ood_pair(small_spec(), target);
    EXPECT_EQ(pair.target.train.num_classes, 5u);
    EXPECT_FALSE(same(pair.source.train, pair.target.train));
    const auto probe = ts::probes::train_probe(pair.target.train.features, pair.target.train.labels, 5, {});
    EXPECT_GT(ts::probes::probe_accuracy(probe, pair.target.test.features, pair.target.test.labels), 0.3);  // chance 0.2
}

TEST(Ood, SameSeedDifferentGeometry) {
    auto target = small_spec();
    target.num_classes = 4;
    const auto pair = dt::ood_pair(small_spec(), target);
    EXPECT_NE(pair.source.train.features.row(0), pair.target.train.features.row(0));
}

TEST(Standardize, TrainStatisticsOnly) {
    const auto pair = dt::standardize(dt::make_blobs(small_spec()));
    const Eigen::RowVectorXd mean = pair.train.features.colwise().mean();
    EXPECT_LT(mean.cwiseAbs().maxCoeff(), 1e-6);
    const Eigen::RowVectorXd sd =
        ((pair.train.features.rowwise() - mean).array().square().colwise().sum() / (pair.train.size() - 1.0)).sqrt();
    EXPECT_LT((sd.array() - 1.0).abs().maxCoeff(), 1e-2);
    // Test split uses the train statistics, so its mean is not forced to zero.
    EXPECT_GT(pair.test.features.colwise().mean().cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Standardize, ConstantColumnKeepsScaleOne) {
    auto d = dt::make_blobs(small_spec()).train;
    d.features.col(3).setConstant(4.0);
    const auto st = dt::Standardizer::fit(d);
    EXPECT_EQ(st.scale(3), 1.0);
    const auto out = st.apply(d);
    EXPECT_EQ(out.features.col(3).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Csv, RoundTrip) {
    const auto d = dt::make_blobs(small_spec()).train;
    const auto path = temp_file("round.csv");
    dt::save_csv(d, path);
    const auto back = dt::load_csv(path, 10);
    EXPECT_EQ(back.labels, d.labels);
    EXPECT_LT((back.features - d.features).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Csv, LabelOutOfRange) {
    const auto path = temp_file("range.csv");
    write_text(path, "0,1.0,2.0\n3,1.0,2.0\n");
    EXPECT_THROW(dt::load_csv(path, 3), ts::FormatError);
}

TEST(Csv, MalformedRowNamesLine) {
    const auto path = temp_file("bad.csv");
    write_text(path, "0,1.0,2.0\n1,1.0,abc\n");
    try {
        dt::load_csv(path, 2);
        FAIL();
    } catch (const ts::FormatError& e) {
        EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
    }
}

TEST(Csv, RaggedRowRejected) {
    const auto path = temp_file("ragged.csv");
    write_text(path, "0,1.0,2.0\n1,1.0\n");
    EXPECT_THROW(dt::load_csv(path, 2), ts::FormatError);
}

TEST(Csv, MissingFile) {
    EXPECT_THROW(dt::load_csv(temp_file("does_not_exist.csv"), 2), ts::Error);
}
