#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tunnelscope/data.hpp"
#include "tunnelscope/linalg.hpp"
#include "tunnelscope/metrics.hpp"
#include "tunnelscope/nn.hpp"
#include "tunnelscope/probes.hpp"

namespace tunnelscope::analysis {

// ---------------------------------------------------------------------------
// Configuration

/// Where a train/test pair comes from.
struct DataConfig {
    enum class Source { blobs, csv };

    Source source = Source::blobs;
    data::BlobSpec blobs = reference_blobs();
    std::string train_csv;
    std::string test_csv;
    std::size_t num_classes = 0;  ///< CSV only
    bool standardize = true;      ///< statistics from the train split

    /// 10 classes, 32 dims, 500/100 samples per class, 24 clusters per class, noise 1.
    static data::BlobSpec reference_blobs();
};

/// Hidden stack; input and output sizes come from the data.
struct Architecture {
    std::vector<std::size_t> hidden_widths = std::vector<std::size_t>(12, 256);
    bool residual = false;

    nn::NetworkSpec spec_for(std::size_t input_dim, std::size_t num_classes) const;
};

struct OodSettings {
    /// True: probe the source task itself (sanity mode, no OOD pair).
    bool same_as_source = false;
    DataConfig target = default_target();

    static DataConfig default_target();
};

struct StitchSettings {
    data::ClassPartition partition = {{0, 1, 2, 3, 4}, {5, 6, 7, 8, 9}};
};

struct DevelopSettings {
    std::size_t rank_steps = 75;       ///< per-step rank capture for the first N updates
    std::size_t rank_samples = 1000;   ///< test rows used for rank tracking
    std::size_t warmup_pairs = 1;      ///< leading checkpoint pairs left out of the mean weight change
};

struct SweepSettings {
    std::vector<std::size_t> depths = {8, 12, 16};
    std::vector<std::size_t> widths = {256};
    std::vector<std::size_t> class_counts = {10};
};

struct ShorterSettings {
    /// Hidden depths to train. Empty: extractor length of the full network and the full depth.
    std::vector<std::size_t> depths;
};

struct MetricsSettings {
    std::string checkpoint;  ///< empty: metrics of the freshly initialized network
};

enum class ExperimentKind { tunnel, ood, stitch, develop, sweep, shorter, metrics };

const char* to_string(ExperimentKind kind);
std::optional<ExperimentKind> parse_kind(const std::string& name);

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::tunnel;
    std::uint64_t seed = 0;
    std::size_t threads = 1;

    DataConfig data;
    Architecture network;
    nn::TrainConfig train = default_train();
    probes::ProbeConfig probe;
    std::size_t probe_runs = 3;
    linalg::SpectrumPolicy spectrum;
    metrics::CkaConfig cka;
    bool compute_cka = true;

    OodSettings ood;
    StitchSettings stitch;
    DevelopSettings develop;
    SweepSettings sweep;
    ShorterSettings shorter;
    MetricsSettings metrics;

    static nn::TrainConfig default_train();
    void validate() const;

    // Per-component seeds derived from `seed`.
    std::uint64_t init_seed() const;
    nn::TrainConfig seeded_train() const;
    probes::ProbeConfig seeded_probe() const;
    linalg::SpectrumPolicy seeded_spectrum() const;
    metrics::CkaConfig seeded_cka() const;
};

data::DatasetPair load_data(const DataConfig& cfg);

// ---------------------------------------------------------------------------
// Tunnel detection

struct TunnelBoundary {
    std::size_t layer = 0;
    bool found = false;  ///< false: no layer reached the threshold, `layer` is the last one
};

/// Smallest layer whose mean probe accuracy reaches theta * reference.
TunnelBoundary detect_tunnel(const probes::ProbeCurve& curve, double reference, double theta);

struct TunnelReport {
    probes::ProbeCurve probe_curve;
    std::vector<std::size_t> rank_curve;
    std::vector<metrics::VarianceReport> variance_curve;
    std::optional<metrics::CkaMatrix> cka;
    std::vector<double> l1_drift;  ///< hidden layers only; empty for uneven widths
    TunnelBoundary start_95;
    TunnelBoundary start_98;
    double reference_accuracy = 0.0;

    std::size_t layer_count() const { return probe_curve.size(); }
    /// Extractor = layers [0, start]; returns its share of all layers.
    double extractor_fraction(const TunnelBoundary& b) const;
};

/// Layers of the extractor for a boundary: the boundary layer is its last layer.
std::size_t extractor_length(const TunnelBoundary& boundary);

/// Probe/rank/variance curves of a trained network. Probes train on
/// `probe_data.train` and are scored on `probe_data.test`; geometry metrics
/// use the test split.
TunnelReport analyze_network(const nn::Network& net, const data::DatasetPair& probe_data,
                             double reference_accuracy, const ExperimentConfig& cfg, bool with_cka);

struct TunnelRun {
    TunnelReport report;
    nn::TrainResult training;
};

TunnelRun run_tunnel_experiment(const ExperimentConfig& cfg);
TunnelRun run_tunnel_experiment(const ExperimentConfig& cfg, const data::DatasetPair& data);

// ---------------------------------------------------------------------------
// Out-of-distribution probing

struct OodReport {
    TunnelReport in_distribution;
    probes::ProbeCurve ood_probe;
    std::vector<std::size_t> ood_rank;
    std::size_t ood_best_layer = 0;  ///< argmax of ood_probe.mean (lowest on ties)
};

struct OodRun {
    OodReport report;
    nn::TrainResult training;
};

OodRun run_ood_experiment(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Two-task sequential training, extractor/tunnel stitching

struct StitchCell {
    std::size_t extractor_task = 0;  ///< 1-based
    std::size_t tunnel_task = 0;
    std::size_t eval_task = 0;
    double accuracy = 0.0;
};

/// Accuracy on both tasks after substituting the first x hidden layers.
struct SubstitutionPoint {
    std::size_t layers = 0;
    double task1 = 0.0;
    double task2 = 0.0;
};

struct StitchGrid {
    std::size_t split = 0;  ///< extractor = hidden layers [0, split)
    std::vector<StitchCell> cells;
    double finetuned_tunnel = 0.0;     ///< probe on E2+T1 last hidden layer, task 1
    double finetuned_extractor = 0.0;  ///< probe on E2's last extractor layer, task 1
    std::vector<SubstitutionPoint> bottom_up;  ///< M1[0, x) + M2[x, n)
    std::vector<SubstitutionPoint> top_down;   ///< M2[0, x) + M1[x, n)
    TunnelReport task1_report;
    double task1_after_task1 = 0.0;
    double task2_after_task2 = 0.0;
    double task1_after_task2 = 0.0;

    double accuracy(std::size_t extractor_task, std::size_t tunnel_task, std::size_t eval_task) const;
};

struct SequentialRun {
    nn::TrainResult task1;
    nn::TrainResult task2;  ///< continues from task-1 parameters with a fresh head
    std::vector<data::DatasetPair> tasks;
};

/// Trains task 1 from initialization, then task 2 from the task-1 body.
SequentialRun train_sequential(const ExperimentConfig& cfg, const nn::NetworkSpec& body,
                               const data::DatasetPair& data);

struct StitchRun {
    StitchGrid grid;
    SequentialRun training;
};

StitchRun run_stitch_experiment(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Training dynamics

struct DevelopmentReport {
    std::vector<std::size_t> checkpoint_epochs;
    /// Row i: change between checkpoints i and i+1; one column per layer.
    std::vector<std::vector<double>> weight_change;
    std::vector<std::size_t> rank_steps;   ///< step index of each rank row
    std::vector<std::vector<std::size_t>> rank_evolution;  ///< per layer
    TunnelReport final_report;
    double accuracy = 0.0;
    double reset_tunnel_accuracy = 0.0;     ///< tunnel layers restored to initialization
    double reset_extractor_accuracy = 0.0;  ///< extractor layers restored to initialization
    double mean_change_extractor = 0.0;
    double mean_change_tunnel = 0.0;
};

struct DevelopmentRun {
    DevelopmentReport report;
    nn::TrainResult training;
};

DevelopmentRun run_development_experiment(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Capacity sweep

struct SweepCell {
    std::size_t depth = 0;
    std::size_t width = 0;
    std::size_t classes = 0;
    double accuracy = 0.0;
    TunnelBoundary start_95;
    TunnelBoundary start_98;
    double extractor_fraction_95 = 0.0;
    std::vector<double> probe_curve;
    std::vector<std::size_t> rank_curve;
};

/// One tunnel experiment per (depth, width, classes) cell; the class count
/// selects the first k classes of the configured data. Cells run on up to
/// cfg.threads workers.
std::vector<SweepCell> run_capacity_sweep(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Shorter networks and forgetting

struct ShorterRow {
    std::size_t depth = 0;
    double task1_after_task1 = 0.0;
    double task2_after_task2 = 0.0;
    double task1_after_task2 = 0.0;
    double forgetting = 0.0;  ///< task1_after_task1 - task1_after_task2
    double single_task_accuracy() const { return 0.5 * (task1_after_task1 + task2_after_task2); }
};

struct ShorterReport {
    std::size_t full_depth = 0;
    std::size_t extractor_length = 0;  ///< from the full-depth task-1 network
    std::vector<ShorterRow> rows;
};

ShorterReport run_shorter_network_experiment(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Metrics of a given (or fresh) network, no training

TunnelReport run_metrics(const ExperimentConfig& cfg, const nn::Network& net, const data::DatasetPair& data);

}  // namespace tunnelscope::analysis
