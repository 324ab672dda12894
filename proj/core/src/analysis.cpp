#include "tunnelscope/analysis.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include "tunnelscope/checkpoint_io.hpp"
#include "tunnelscope/error.hpp"
#include "tunnelscope/random.hpp"

namespace tunnelscope::analysis {

// ---------------------------------------------------------------------------
// Configuration

data::BlobSpec DataConfig::reference_blobs() {
    data::BlobSpec spec;
    spec.num_classes = 10;
    spec.dim = 32;
    spec.per_class_train = 500;
    spec.per_class_test = 100;
    spec.center_scale = 3.0;
    spec.noise_std = 1.0;
    spec.clusters_per_class = 24;
    spec.seed = 0;
    return spec;
}

DataConfig OodSettings::default_target() {
    DataConfig target;
    target.blobs.seed = 1;
    return target;
}

nn::NetworkSpec Architecture::spec_for(std::size_t input_dim, std::size_t num_classes) const {
    nn::NetworkSpec spec;
    spec.input_dim = input_dim;
    spec.hidden_widths = hidden_widths;
    spec.num_classes = num_classes;
    spec.residual = residual;
    spec.validate();
    return spec;
}

namespace {

constexpr const char* kKindNames[] = {"tunnel", "ood", "stitch", "develop", "sweep", "shorter", "metrics"};

}  // namespace

const char* to_string(ExperimentKind kind) { return kKindNames[static_cast<int>(kind)]; }

std::optional<ExperimentKind> parse_kind(const std::string& name) {
    for (int i = 0; i < 7; ++i)
        if (name == kKindNames[i]) return static_cast<ExperimentKind>(i);
    return std::nullopt;
}

nn::TrainConfig ExperimentConfig::default_train() {
    nn::TrainConfig t;
    t.learning_rate = 0.03;
    t.momentum = 0.9;
    t.weight_decay = 5e-4;
    t.epochs = 30;
    t.batch_size = 128;
    t.lr_decay_gamma = 0.1;
    t.checkpoint_every = 5;
    return t;
}

namespace {

void validate_data(const DataConfig& d, const char* what) {
    if (d.source == DataConfig::Source::blobs) {
        d.blobs.validate();
    } else {
        require(!d.train_csv.empty() && !d.test_csv.empty(),
                std::string(what) + ": csv source needs train_csv and test_csv");
        require(d.num_classes >= 2, std::string(what) + ": csv source needs num_classes >= 2");
    }
}

}  // namespace

void ExperimentConfig::validate() const {
    require(threads >= 1, "config: threads must be >= 1");
    validate_data(data, "data");
    for (std::size_t w : network.hidden_widths) require(w >= 1, "network: hidden widths must be >= 1");
    if (network.residual && !network.hidden_widths.empty())
        require(std::all_of(network.hidden_widths.begin(), network.hidden_widths.end(),
                            [&](std::size_t w) { return w == network.hidden_widths.front(); }),
                "network: residual stacks need equal hidden widths");
    train.validate();
    probe.validate();
    require(probe_runs >= 1, "probe: runs must be >= 1");
    spectrum.validate();
    cka.validate();
    if (!ood.same_as_source) validate_data(ood.target, "ood.target");
    require(stitch.partition.size() == 2, "stitch: partition must have exactly two groups");
    for (const auto& g : stitch.partition) require(g.size() >= 2, "stitch: every task needs at least 2 classes");
    require(develop.rank_samples >= 2, "develop: rank_samples must be >= 2");
    require(!sweep.depths.empty() && !sweep.widths.empty() && !sweep.class_counts.empty(),
            "sweep: depths, widths and class_counts must be non-empty");
    for (std::size_t w : sweep.widths) require(w >= 1, "sweep: widths must be >= 1");
    for (std::size_t c : sweep.class_counts) require(c >= 2, "sweep: class_counts must be >= 2");
}

std::uint64_t ExperimentConfig::init_seed() const { return mix_seed(seed, 11); }

nn::TrainConfig ExperimentConfig::seeded_train() const {
    nn::TrainConfig t = train;
    t.seed = mix_seed(seed, 12);
    return t;
}

probes::ProbeConfig ExperimentConfig::seeded_probe() const {
    probes::ProbeConfig p = probe;
    p.seed = mix_seed(seed, 13);
    return p;
}

linalg::SpectrumPolicy ExperimentConfig::seeded_spectrum() const {
    linalg::SpectrumPolicy s = spectrum;
    s.seed = mix_seed(seed, 14);
    return s;
}

metrics::CkaConfig ExperimentConfig::seeded_cka() const {
    metrics::CkaConfig c = cka;
    c.seed = mix_seed(seed, 15);
    return c;
}

data::DatasetPair load_data(const DataConfig& cfg) {
    data::DatasetPair pair;
    if (cfg.source == DataConfig::Source::blobs) {
        pair = data::make_blobs(cfg.blobs);
    } else {
        pair.train = data::load_csv(cfg.train_csv, cfg.num_classes);
        pair.test = data::load_csv(cfg.test_csv, cfg.num_classes);
        if (pair.train.dim() != pair.test.dim())
            throw DimensionError("data: train and test CSV files differ in feature count");
    }
    return cfg.standardize ? data::standardize(pair) : pair;
}

// ---------------------------------------------------------------------------
// Tunnel detection

TunnelBoundary detect_tunnel(const probes::ProbeCurve& curve, double reference, double theta) {
    require(!curve.mean.empty(), "detect_tunnel: empty curve");
    require(reference > 0.0, "detect_tunnel: reference accuracy must be > 0");
    require(theta > 0.0 && theta <= 1.0, "detect_tunnel: theta must lie in (0, 1]");
    const double target = theta * reference;
    for (std::size_t l = 0; l < curve.mean.size(); ++l)
        if (curve.mean[l] >= target) return {l, true};
    return {curve.mean.size() - 1, false};
}

std::size_t extractor_length(const TunnelBoundary& boundary) { return boundary.layer + 1; }

double TunnelReport::extractor_fraction(const TunnelBoundary& b) const {
    return layer_count() == 0 ? 0.0
                              : static_cast<double>(extractor_length(b)) / static_cast<double>(layer_count());
}

TunnelReport analyze_network(const nn::Network& net, const data::DatasetPair& probe_data,
                             double reference_accuracy, const ExperimentConfig& cfg, bool with_cka) {
    const auto train_acts = nn::forward_collect(net, probe_data.train.features);
    const auto test_acts = nn::forward_collect(net, probe_data.test.features);

    TunnelReport report;
    report.reference_accuracy = reference_accuracy;
    report.probe_curve = probes::probe_curve(train_acts.layers, probe_data.train.labels, test_acts.layers,
                                             probe_data.test.labels, probe_data.train.num_classes,
                                             cfg.seeded_probe(), cfg.probe_runs, cfg.threads);

    const auto spectrum = cfg.seeded_spectrum();
    for (const auto& layer : test_acts.layers) {
        report.rank_curve.push_back(metrics::representation_rank(layer, spectrum));
        report.variance_curve.push_back(
            metrics::intra_inter_variance(layer, probe_data.test.labels, probe_data.test.num_classes));
    }
    if (with_cka) report.cka = metrics::cka_matrix(test_acts.layers, cfg.seeded_cka());

    const auto& widths = net.spec.hidden_widths;
    if (widths.size() >= 2 && std::all_of(widths.begin(), widths.end(), [&](std::size_t w) { return w == widths.front(); }))
        report.l1_drift = metrics::l1_drift(std::span(test_acts.layers).first(widths.size()));

    // A network at chance level still gets a boundary; the reference must be positive.
    const double reference = std::max(reference_accuracy, 1e-12);
    report.start_95 = detect_tunnel(report.probe_curve, reference, 0.95);
    report.start_98 = detect_tunnel(report.probe_curve, reference, 0.98);
    return report;
}

TunnelRun run_tunnel_experiment(const ExperimentConfig& cfg, const data::DatasetPair& data) {
    cfg.validate();
    const auto spec = cfg.network.spec_for(data.train.dim(), data.train.num_classes);
    TunnelRun run;
    run.training = nn::train(nn::init_network<float>(spec, cfg.init_seed()), data.train, data.test,
                             cfg.seeded_train());
    run.report = analyze_network(run.training.network, data, run.training.test_accuracy, cfg, cfg.compute_cka);
    return run;
}

TunnelRun run_tunnel_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    return run_tunnel_experiment(cfg, load_data(cfg.data));
}

// ---------------------------------------------------------------------------
// OOD

OodRun run_ood_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    data::DatasetPair source, target;
    if (cfg.ood.same_as_source) {
        source = load_data(cfg.data);
        target = source;
    } else if (cfg.data.source == DataConfig::Source::blobs &&
               cfg.ood.target.source == DataConfig::Source::blobs) {
        auto pair = data::ood_pair(cfg.data.blobs, cfg.ood.target.blobs);
        source = cfg.data.standardize ? data::standardize(pair.source) : pair.source;
        target = cfg.ood.target.standardize ? data::standardize(pair.target) : pair.target;
    } else {
        source = load_data(cfg.data);
        target = load_data(cfg.ood.target);
    }
    if (source.train.dim() != target.train.dim())
        throw DimensionError("ood: source and target feature counts differ");

    auto tunnel = run_tunnel_experiment(cfg, source);
    OodRun run;
    run.training = std::move(tunnel.training);
    run.report.in_distribution = std::move(tunnel.report);

    const auto& net = run.training.network;
    const auto train_acts = nn::forward_collect(net, target.train.features);
    const auto test_acts = nn::forward_collect(net, target.test.features);
    run.report.ood_probe = probes::probe_curve(train_acts.layers, target.train.labels, test_acts.layers,
                                               target.test.labels, target.train.num_classes,
                                               cfg.seeded_probe(), cfg.probe_runs, cfg.threads);
    const auto spectrum = cfg.seeded_spectrum();
    for (const auto& layer : test_acts.layers)
        run.report.ood_rank.push_back(metrics::representation_rank(layer, spectrum));
    const auto& mean = run.report.ood_probe.mean;
    run.report.ood_best_layer =
        static_cast<std::size_t>(std::max_element(mean.begin(), mean.end()) - mean.begin());
    return run;
}

// ---------------------------------------------------------------------------
// Stitching

double StitchGrid::accuracy(std::size_t extractor_task, std::size_t tunnel_task, std::size_t eval_task) const {
    for (const auto& c : cells)
        if (c.extractor_task == extractor_task && c.tunnel_task == tunnel_task && c.eval_task == eval_task)
            return c.accuracy;
    throw PreconditionError("stitch grid: no such cell");
}

SequentialRun train_sequential(const ExperimentConfig& cfg, const nn::NetworkSpec& body,
                               const data::DatasetPair& data) {
    SequentialRun run;
    const auto train_tasks = data::split_tasks(data.train, cfg.stitch.partition);
    const auto test_tasks = data::split_tasks(data.test, cfg.stitch.partition);
    for (std::size_t t = 0; t < train_tasks.size(); ++t) run.tasks.push_back({train_tasks[t], test_tasks[t]});

    auto spec1 = body;
    spec1.num_classes = run.tasks[0].train.num_classes;
    auto spec2 = body;
    spec2.num_classes = run.tasks[1].train.num_classes;

    const auto train_cfg = cfg.seeded_train();
    run.task1 = nn::train(nn::init_network<float>(spec1, cfg.init_seed()), run.tasks[0].train,
                          run.tasks[0].test, train_cfg);

    const auto fresh = nn::init_network<float>(spec2, mix_seed(cfg.init_seed(), 2));
    auto task2_cfg = train_cfg;
    task2_cfg.seed = mix_seed(train_cfg.seed, 2);
    run.task2 = nn::train(nn::with_head(run.task1.network, fresh), run.tasks[1].train, run.tasks[1].test,
                          task2_cfg);
    return run;
}

namespace {

// Extractor of `e`, tunnel of `t`, head of `h`.
nn::Network compose(const nn::Network& e, const nn::Network& t, const nn::Network& h, std::size_t split) {
    return nn::stitch(nn::with_head(e, h), nn::with_head(t, h), split);
}

double probe_layer_accuracy(const nn::Network& net, std::size_t layer, const data::DatasetPair& task,
                            const ExperimentConfig& cfg) {
    Matrix train_x, test_x;
    if (layer == 0) {
        train_x = task.train.features;
        test_x = task.test.features;
    } else {
        train_x = std::move(nn::forward_collect(net, task.train.features).layers[layer - 1]);
        test_x = std::move(nn::forward_collect(net, task.test.features).layers[layer - 1]);
    }
    const auto probe = probes::train_probe(train_x, task.train.labels, task.train.num_classes, cfg.seeded_probe());
    return probes::probe_accuracy(probe, test_x, task.test.labels);
}

}  // namespace

StitchRun run_stitch_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto data = load_data(cfg.data);
    const auto body = cfg.network.spec_for(data.train.dim(), 2);
    StitchRun run;
    run.training = train_sequential(cfg, body, data);
    auto& grid = run.grid;
    const auto& tasks = run.training.tasks;
    const std::array<const nn::Network*, 2> nets = {&run.training.task1.network, &run.training.task2.network};
    const std::size_t hidden = body.hidden_widths.size();

    grid.task1_report = analyze_network(*nets[0], tasks[0], run.training.task1.test_accuracy, cfg, false);
    grid.split = std::min(extractor_length(grid.task1_report.start_95), hidden);
    grid.task1_after_task1 = run.training.task1.test_accuracy;
    grid.task2_after_task2 = run.training.task2.test_accuracy;
    grid.task1_after_task2 = nn::accuracy(compose(*nets[1], *nets[1], *nets[0], hidden), tasks[0].test);

    for (std::size_t e = 0; e < 2; ++e)
        for (std::size_t t = 0; t < 2; ++t)
            for (std::size_t task = 0; task < 2; ++task)
                grid.cells.push_back({e + 1, t + 1, task + 1,
                                      nn::accuracy(compose(*nets[e], *nets[t], *nets[task], grid.split),
                                                   tasks[task].test)});

    if (hidden > 0) {
        grid.finetuned_tunnel =
            probe_layer_accuracy(compose(*nets[1], *nets[0], *nets[0], grid.split), hidden, tasks[0], cfg);
    }
    grid.finetuned_extractor = probe_layer_accuracy(*nets[1], grid.split, tasks[0], cfg);

    for (std::size_t x = 0; x <= hidden; ++x) {
        grid.bottom_up.push_back({x, nn::accuracy(compose(*nets[0], *nets[1], *nets[0], x), tasks[0].test),
                                  nn::accuracy(compose(*nets[0], *nets[1], *nets[1], x), tasks[1].test)});
        grid.top_down.push_back({x, nn::accuracy(compose(*nets[1], *nets[0], *nets[0], x), tasks[0].test),
                                 nn::accuracy(compose(*nets[1], *nets[0], *nets[1], x), tasks[1].test)});
    }
    return run;
}

// ---------------------------------------------------------------------------
// Development

DevelopmentRun run_development_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto data = load_data(cfg.data);
    const auto spec = cfg.network.spec_for(data.train.dim(), data.train.num_classes);
    const auto train_cfg = cfg.seeded_train();
    const auto spectrum = cfg.seeded_spectrum();

    Matrix rank_rows = data.test.features;
    if (cfg.develop.rank_samples < data.test.size()) {
        const auto rows = linalg::subsample_columns(data.test.size(), cfg.develop.rank_samples,
                                                    mix_seed(cfg.seed, 16));
        rank_rows.resize(static_cast<Eigen::Index>(rows.size()), data.test.features.cols());
        for (std::size_t i = 0; i < rows.size(); ++i)
            rank_rows.row(static_cast<Eigen::Index>(i)) = data.test.features.row(static_cast<Eigen::Index>(rows[i]));
    }

    const std::size_t steps_per_epoch = (data.train.size() + train_cfg.batch_size - 1) / train_cfg.batch_size;
    DevelopmentReport report;
    auto observer = [&](std::size_t step, std::size_t, const nn::Network& net) {
        if (step > cfg.develop.rank_steps && step % steps_per_epoch != 0) return;
        const auto acts = nn::forward_collect(net, rank_rows);
        std::vector<std::size_t> ranks;
        for (const auto& layer : acts.layers) ranks.push_back(metrics::representation_rank(layer, spectrum));
        report.rank_steps.push_back(step);
        report.rank_evolution.push_back(std::move(ranks));
    };

    DevelopmentRun run;
    run.training = nn::train(nn::init_network<float>(spec, cfg.init_seed()), data.train, data.test, train_cfg, observer);
    const auto& ckpts = run.training.checkpoints;
    const std::size_t layers = spec.layer_count();
    for (const auto& c : ckpts) report.checkpoint_epochs.push_back(c.epoch);
    for (std::size_t i = 0; i + 1 < ckpts.size(); ++i) {
        std::vector<double> row;
        for (std::size_t l = 0; l < layers; ++l) row.push_back(nn::weight_change_norm(ckpts[i], ckpts[i + 1], l));
        report.weight_change.push_back(std::move(row));
    }

    const auto& net = run.training.network;
    report.accuracy = run.training.test_accuracy;
    report.final_report = analyze_network(net, data, report.accuracy, cfg, false);
    const std::size_t hidden = spec.hidden_widths.size();
    const std::size_t split = std::min(extractor_length(report.final_report.start_95), hidden);
    report.reset_tunnel_accuracy = nn::accuracy(nn::reset_layers(net, ckpts.front(), {split, hidden}), data.test);
    report.reset_extractor_accuracy = nn::accuracy(nn::reset_layers(net, ckpts.front(), {0, split}), data.test);

    // Falls back to every pair when the warmup would leave none.
    const std::size_t skip = report.weight_change.size() > cfg.develop.warmup_pairs ? cfg.develop.warmup_pairs : 0;
    auto mean_over = [&](std::size_t begin, std::size_t end) {
        double sum = 0.0;
        std::size_t count = 0;
        for (std::size_t i = skip; i < report.weight_change.size(); ++i)
            for (std::size_t l = begin; l < end; ++l, ++count) sum += report.weight_change[i][l];
        return count == 0 ? 0.0 : sum / static_cast<double>(count);
    };
    report.mean_change_extractor = mean_over(0, split);
    report.mean_change_tunnel = mean_over(split, hidden);
    run.report = std::move(report);
    return run;
}

// ---------------------------------------------------------------------------
// Sweep

namespace {

template <typename Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
    const std::size_t workers = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(count, 1));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr failure;
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < count && !failed; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        if (!failed.exchange(true)) failure = std::current_exception();
                    }
                }
            });
    }
    if (failure) std::rethrow_exception(failure);
}

std::vector<int> first_classes(std::size_t k) {
    std::vector<int> classes(k);
    std::iota(classes.begin(), classes.end(), 0);
    return classes;
}

}  // namespace

std::vector<SweepCell> run_capacity_sweep(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto data = load_data(cfg.data);
    const std::size_t max_classes = *std::max_element(cfg.sweep.class_counts.begin(), cfg.sweep.class_counts.end());
    require(max_classes <= data.train.num_classes, "sweep: class count exceeds the dataset's classes");

    std::vector<SweepCell> cells;
    for (std::size_t depth : cfg.sweep.depths)
        for (std::size_t width : cfg.sweep.widths)
            for (std::size_t classes : cfg.sweep.class_counts) {
                SweepCell cell;
                cell.depth = depth;
                cell.width = width;
                cell.classes = classes;
                cells.push_back(std::move(cell));
            }

    parallel_for(cells.size(), cfg.threads, [&](std::size_t i) {
        SweepCell& cell = cells[i];
        ExperimentConfig cell_cfg = cfg;
        cell_cfg.threads = 1;
        cell_cfg.compute_cka = false;
        cell_cfg.network.hidden_widths.assign(cell.depth, cell.width);
        // Equal gradient-step budget across class subsets.
        const auto scaled = static_cast<double>(cfg.train.epochs) * static_cast<double>(max_classes) /
                            static_cast<double>(cell.classes);
        cell_cfg.train.epochs = static_cast<std::size_t>(std::lround(scaled));

        const auto classes = first_classes(cell.classes);
        const data::DatasetPair subset = {data::class_subset(data.train, classes),
                                          data::class_subset(data.test, classes)};
        const auto run = run_tunnel_experiment(cell_cfg, subset);
        cell.accuracy = run.training.test_accuracy;
        cell.start_95 = run.report.start_95;
        cell.start_98 = run.report.start_98;
        cell.extractor_fraction_95 = run.report.extractor_fraction(run.report.start_95);
        cell.probe_curve = run.report.probe_curve.mean;
        cell.rank_curve = run.report.rank_curve;
    });
    return cells;
}

// ---------------------------------------------------------------------------
// Shorter networks

namespace {

ShorterRow shorter_row(std::size_t depth, const SequentialRun& run) {
    ShorterRow row;
    row.depth = depth;
    row.task1_after_task1 = run.task1.test_accuracy;
    row.task2_after_task2 = run.task2.test_accuracy;
    row.task1_after_task2 =
        nn::accuracy(nn::with_head(run.task2.network, run.task1.network), run.tasks[0].test);
    row.forgetting = row.task1_after_task1 - row.task1_after_task2;
    return row;
}

}  // namespace

ShorterReport run_shorter_network_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto data = load_data(cfg.data);
    const auto full = cfg.network.spec_for(data.train.dim(), 2);
    ShorterReport report;
    report.full_depth = full.hidden_widths.size();

    const auto full_run = train_sequential(cfg, full, data);
    const auto task1_report =
        analyze_network(full_run.task1.network, full_run.tasks[0], full_run.task1.test_accuracy, cfg, false);
    report.extractor_length = std::min(extractor_length(task1_report.start_95), report.full_depth);

    auto depths = cfg.shorter.depths;
    if (depths.empty()) depths = {report.extractor_length, report.full_depth};
    for (std::size_t d : depths) require(d <= report.full_depth, "shorter: depth exceeds the full network");

    std::vector<ShorterRow> rows(depths.size());
    parallel_for(depths.size(), cfg.threads, [&](std::size_t i) {
        if (depths[i] == report.full_depth) {
            rows[i] = shorter_row(depths[i], full_run);
            return;
        }
        rows[i] = shorter_row(depths[i], train_sequential(cfg, nn::truncate(full, depths[i]), data));
    });
    report.rows = std::move(rows);
    return report;
}

TunnelReport run_metrics(const ExperimentConfig& cfg, const nn::Network& net, const data::DatasetPair& data) {
    cfg.validate();
    return analyze_network(net, data, nn::accuracy(net, data.test), cfg, cfg.compute_cka);
}

}  // namespace tunnelscope::analysis
