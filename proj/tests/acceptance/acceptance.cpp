// Acceptance run: one PASS/FAIL line per criterion.
//
//   tunnelscope_acceptance [--scratch DIR] [--known-unattained N]... [key=value]...
//
// Exit status is 1 if any criterion fails, except criteria listed with
// --known-unattained: those still print FAIL but do not change the status.
// key=value pairs override the library defaults like `tunnelscope --set`.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <iostream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "cli/cli.hpp"
#include "support/oracles.hpp"
#include "tunnelscope/analysis.hpp"
#include "tunnelscope/checkpoint_io.hpp"
#include "tunnelscope/data.hpp"
#include "tunnelscope/metrics.hpp"
#include "tunnelscope/nn.hpp"

namespace ts = tunnelscope;
namespace an = tunnelscope::analysis;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s.precision(precision);
    s << v;
    return s.str();
}

std::vector<std::string> g_overrides;

// Library defaults plus any `key=value` overrides from the command line.
an::ExperimentConfig reference_config() {
    an::ExperimentConfig cfg;
    cfg.compute_cka = false;
    if (g_overrides.empty()) return cfg;
    auto doc = ts::config_to_json(cfg);
    for (const auto& o : g_overrides) ts::cli::apply_override(doc, o);
    return ts::config_from_json(doc);
}

Outcome linalg_oracle() {
    ts::Rng rng(101);
    std::uniform_int_distribution<int> dim(1, 64);
    double worst = 0.0;
    for (int t = 0; t < 50; ++t) {
        const auto m = ts::testing::gaussian_matrix(dim(rng), dim(rng), ts::mix_seed(7, t));
        const auto got = ts::linalg::singular_values(m);
        const auto want = ts::testing::gram_singular_values(m);
        const double s1 = want.front();
        for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]) / s1);
    }
    int exact = 0;
    for (int t = 0; t < 20; ++t) {
        const Eigen::Index features = 8 + 3 * t;
        const Eigen::Index rank = 1 + (5 * t) % features;
        const auto x = ts::testing::planted_rank(200, features, std::min<Eigen::Index>(rank, 150),
                                                 ts::mix_seed(9, t));
        ts::linalg::SpectrumPolicy policy;
        if (ts::linalg::numerical_rank(x, policy) == static_cast<std::size_t>(std::min<Eigen::Index>(rank, 150)))
            ++exact;
    }
    return {worst <= 1e-8 && exact == 20,
            "max |s - oracle|/s1 = " + fmt(worst) + ", planted ranks exact " + std::to_string(exact) + "/20"};
}

Outcome hsic_cka() {
    double worst = 0.0;
    for (int n = 4; n <= 12; ++n) {
        const auto x = ts::testing::gaussian_matrix(n, 5, ts::mix_seed(21, n));
        const ts::Matrix y = x * ts::testing::gaussian_matrix(5, 4, ts::mix_seed(22, n)) +
                             0.1 * ts::testing::gaussian_matrix(n, 4, ts::mix_seed(23, n));
        const auto k = ts::metrics::GramMatrix::linear(x);
        const auto l = ts::metrics::GramMatrix::linear(y);
        const double want = ts::testing::hsic_nested(k.values(), l.values());
        worst = std::max(worst, std::abs(ts::metrics::hsic_unbiased(k, l) - want) / std::abs(want));
    }
    const auto x = ts::testing::gaussian_matrix(300, 20, 31);
    ts::metrics::CkaConfig cfg;
    const double self = ts::metrics::cka(x, x, cfg);
    const ts::Matrix rotated = x * ts::testing::random_orthogonal(20, 32);
    const double rot = ts::metrics::cka(x, rotated, cfg);
    const double scaled = ts::metrics::cka(x, 3.7 * x, cfg);
    const double dev = std::max({std::abs(self - 1), std::abs(rot - 1), std::abs(scaled - 1)});
    return {worst <= 1e-10 && dev <= 1e-6,
            "HSIC max rel err " + fmt(worst) + ", CKA self/orthogonal/scaled max |1 - cka| " + fmt(dev)};
}

Outcome gradient_check() {
    ts::nn::NetworkSpec spec{5, {8, 8}, 3, false};
    auto net = ts::nn::init_network<double>(spec, 41);
    for (auto& layer : net.layers) layer.bias.setConstant(0.05);
    const ts::nn::MatrixT<double> batch = ts::testing::gaussian_matrix(6, 5, 42);
    const std::vector<int> labels = {0, 1, 2, 0, 1, 2};
    const auto analytic = ts::nn::loss_and_gradient(net, batch, labels);
    const double h = 1e-4;
    double worst = 0.0;
    std::size_t checked = 0;
    auto check = [&](double& param, double grad) {
        const double saved = param;
        param = saved + h;
        const double up = ts::nn::loss_and_gradient(net, batch, labels).loss;
        param = saved - h;
        const double down = ts::nn::loss_and_gradient(net, batch, labels).loss;
        param = saved;
        const double numeric = (up - down) / (2 * h);
        const double scale = std::max({std::abs(numeric), std::abs(grad), 1e-8});
        worst = std::max(worst, std::abs(numeric - grad) / scale);
        ++checked;
    };
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        auto& layer = net.layers[l];
        const auto& g = analytic.gradients[l];
        for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
            for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) check(layer.weight(i, j), g.weight(i, j));
        for (Eigen::Index j = 0; j < layer.bias.size(); ++j) check(layer.bias(j), g.bias(j));
    }
    return {worst <= 1e-4, std::to_string(checked) + " parameters, max rel err " + fmt(worst)};
}

Outcome tunnel_reproduction(const an::TunnelReport& r) {
    const std::size_t last_hidden = r.layer_count() - 2;
    const std::size_t rank = r.rank_curve[last_hidden];
    double worst_drop = 0.0;
    const auto& mean = r.probe_curve.mean;
    double running_max = mean[r.start_95.layer];
    for (std::size_t l = r.start_95.layer + 1; l < mean.size(); ++l) {
        worst_drop = std::max(worst_drop, running_max - mean[l]);
        running_max = std::max(running_max, mean[l]);
    }
    const bool pass = r.start_95.found && r.start_95.layer <= 6 && rank <= 20 && worst_drop <= 0.02;
    return {pass, "tunnel_start_95 " + std::to_string(r.start_95.layer) + ", last hidden rank " +
                      std::to_string(rank) + ", largest post-start drop " + fmt(100 * worst_drop, 3) +
                      " points, reference accuracy " + fmt(r.reference_accuracy)};
}

Outcome depth_invariance(const an::ExperimentConfig& base) {
    auto cfg = base;
    cfg.sweep.depths = {8, 12, 16};
    cfg.sweep.widths = {256};
    cfg.sweep.class_counts = {10};
    const auto cells = an::run_capacity_sweep(cfg);
    std::size_t lo = cells.front().start_95.layer, hi = lo;
    std::string detail;
    for (const auto& c : cells) {
        lo = std::min(lo, c.start_95.layer);
        hi = std::max(hi, c.start_95.layer);
        detail += "depth " + std::to_string(c.depth) + ": " + std::to_string(c.start_95.layer) + "; ";
    }
    return {hi - lo <= 1, detail + "spread " + std::to_string(hi - lo)};
}

Outcome class_count_trend(const an::ExperimentConfig& base) {
    auto cfg = base;
    cfg.sweep.depths = {12};
    cfg.sweep.widths = {256};
    cfg.sweep.class_counts = {3, 10};
    const auto cells = an::run_capacity_sweep(cfg);
    const auto& three = cells[0];
    const auto& ten = cells[1];
    return {three.start_95.layer <= ten.start_95.layer,
            "3 classes: " + std::to_string(three.start_95.layer) + " (acc " + fmt(three.accuracy) +
                "), 10 classes: " + std::to_string(ten.start_95.layer) + " (acc " + fmt(ten.accuracy) + ")"};
}

Outcome ood_degradation(const an::OodReport& r) {
    const std::size_t start = r.in_distribution.start_95.layer;
    const std::size_t last_hidden = r.ood_probe.size() - 2;
    const double at_last = r.ood_probe.mean[last_hidden];
    const double at_start = r.ood_probe.mean[start];
    return {r.ood_best_layer <= start + 1 && at_last <= at_start,
            "OOD argmax layer " + std::to_string(r.ood_best_layer) + " (tunnel start " + std::to_string(start) +
                "), OOD acc at start " + fmt(at_start) + ", at last hidden " + fmt(at_last)};
}

Outcome stitching(const an::ExperimentConfig& cfg) {
    const auto run = an::run_stitch_experiment(cfg);
    const auto& g = run.grid;
    const double swap1 = std::abs(g.accuracy(1, 1, 1) - g.accuracy(1, 2, 1));
    const double swap2 = std::abs(g.accuracy(2, 2, 2) - g.accuracy(2, 1, 2));
    const double extractor_gap = std::min(std::abs(g.accuracy(1, 1, 1) - g.accuracy(2, 1, 1)),
                                          std::abs(g.accuracy(1, 2, 1) - g.accuracy(2, 2, 1)));
    const bool pass = swap1 <= 0.03 && swap2 <= 0.03 && extractor_gap >= 0.10;
    return {pass, "split " + std::to_string(g.split) + ", tunnel swap task 1 " + fmt(100 * swap1, 3) +
                      " points, task 2 " + fmt(100 * swap2, 3) + " points, extractor swap task 1 " +
                      fmt(100 * extractor_gap, 3) + " points"};
}

Outcome development(const an::ExperimentConfig& cfg) {
    const auto run = an::run_development_experiment(cfg);
    const auto& r = run.report;
    const std::size_t last_hidden = r.rank_evolution.front().size() - 2;
    const auto at = std::find(r.rank_steps.begin(), r.rank_steps.end(), cfg.develop.rank_steps);
    if (at == r.rank_steps.end()) return {false, "no rank row at step " + std::to_string(cfg.develop.rank_steps)};
    const std::size_t rank0 = r.rank_evolution.front()[last_hidden];
    const std::size_t rank75 = r.rank_evolution[static_cast<std::size_t>(at - r.rank_steps.begin())][last_hidden];
    const bool pass = r.mean_change_tunnel < r.mean_change_extractor && rank75 < rank0;
    return {pass, "mean weight change extractor " + fmt(r.mean_change_extractor) + ", tunnel " +
                      fmt(r.mean_change_tunnel) + "; last hidden rank step 0: " + std::to_string(rank0) +
                      ", step " + std::to_string(cfg.develop.rank_steps) + ": " + std::to_string(rank75) +
                      "; reset-tunnel accuracy " + fmt(r.reset_tunnel_accuracy) + " vs " + fmt(r.accuracy)};
}

Outcome shorter(const an::ExperimentConfig& cfg) {
    const auto report = an::run_shorter_network_experiment(cfg);
    const an::ShorterRow* full = nullptr;
    const an::ShorterRow* cut = nullptr;
    for (const auto& row : report.rows) {
        if (row.depth == report.full_depth) full = &row;
        if (row.depth == report.extractor_length) cut = &row;
    }
    if (!full || !cut) return {false, "missing full or extractor-length row"};
    const double loss = full->single_task_accuracy() - cut->single_task_accuracy();
    return {loss <= 0.03 && cut->forgetting <= full->forgetting,
            "depth " + std::to_string(cut->depth) + " vs " + std::to_string(full->depth) + ": single-task " +
                fmt(cut->single_task_accuracy()) + " vs " + fmt(full->single_task_accuracy()) + ", forgetting " +
                fmt(cut->forgetting) + " vs " + fmt(full->forgetting)};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism(const fs::path& scratch) {
    // Full CLI path on a reduced config.
    auto cfg = reference_config();
    cfg.threads = 1;
    cfg.data.blobs.per_class_train = 100;
    cfg.data.blobs.per_class_test = 40;
    cfg.network.hidden_widths.assign(4, 64);
    cfg.train.epochs = 4;
    cfg.train.checkpoint_every = 2;
    cfg.compute_cka = true;
    std::ostringstream sink;
    std::string reports[2];
    for (int i = 0; i < 2; ++i) {
        const fs::path dir = scratch / ("run" + std::to_string(i));
        fs::remove_all(dir);
        if (ts::cli::run({cfg, dir}, sink, sink) != 0) return {false, "CLI run failed: " + sink.str()};
        reports[i] = slurp(dir / "report.json");
    }
    const bool same_report = !reports[0].empty() && reports[0] == reports[1];

    bool ckpt_exact = true;
    for (const auto& entry : fs::directory_iterator(scratch / "run0" / "checkpoints")) {
        const auto params = ts::nn::load_parameters(entry.path());
        const auto bytes = ts::nn::encode_parameters(params);
        const auto file = slurp(entry.path());
        ckpt_exact = ckpt_exact && std::equal(bytes.begin(), bytes.end(), file.begin(), file.end(),
                                              [](std::uint8_t a, char b) { return a == static_cast<std::uint8_t>(b); });
        const fs::path copy = scratch / "copy.tnlc";
        ts::nn::save_parameters(params, copy);
        ckpt_exact = ckpt_exact && slurp(copy) == file;
    }

    const auto blobs = ts::data::make_blobs(cfg.data.blobs);
    const fs::path csv = scratch / "train.csv";
    ts::data::save_csv(blobs.train, csv);
    const auto back = ts::data::load_csv(csv, blobs.train.num_classes);
    const double csv_err = (back.features - blobs.train.features).cwiseAbs().maxCoeff();
    const bool csv_ok = back.labels == blobs.train.labels && csv_err <= 1e-6;
    return {same_report && ckpt_exact && csv_ok,
            std::string("report.json identical: ") + (same_report ? "yes" : "no") +
                ", checkpoints bit-exact: " + (ckpt_exact ? "yes" : "no") + ", CSV max err " + fmt(csv_err)};
}

}  // namespace

int main(int argc, char** argv) {
    fs::path scratch = fs::temp_directory_path() / "tunnelscope_acceptance";
    std::set<std::size_t> known_unattained;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--scratch" && i + 1 < argc) {
            scratch = argv[++i];
        } else if (arg == "--known-unattained" && i + 1 < argc) {
            known_unattained.insert(std::stoul(argv[++i]));
        } else if (arg.find('=') != std::string::npos) {
            g_overrides.push_back(arg);
        } else {
            std::cerr << "usage: tunnelscope_acceptance [--scratch DIR] [--known-unattained N]... [key=value]...\n";
            return 2;
        }
    }
    fs::create_directories(scratch);
    const auto cfg = reference_config();

    std::optional<an::OodRun> ood;
    auto reference = [&]() -> const an::OodRun& {
        if (!ood) ood = an::run_ood_experiment(cfg);
        return *ood;
    };

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"linear algebra oracle equivalence", linalg_oracle},
        {"HSIC/CKA correctness", hsic_cka},
        {"gradient check", gradient_check},
        {"tunnel reproduction", [&] { return tunnel_reproduction(reference().report.in_distribution); }},
        {"depth invariance", [&] { return depth_invariance(cfg); }},
        {"class-count trend", [&] { return class_count_trend(cfg); }},
        {"OOD degradation", [&] { return ood_degradation(reference().report); }},
        {"stitching task-agnosticism", [&] { return stitching(cfg); }},
        {"development dynamics", [&] { return development(cfg); }},
        {"shorter networks", [&] { return shorter(cfg); }},
        {"determinism and round-trips", [&] { return determinism(scratch); }},
    };

    int failures = 0;
    int blocking = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool known = known_unattained.count(i + 1) > 0;
        failures += o.pass ? 0 : 1;
        blocking += o.pass || known ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << " [" << i + 1 << "] " << criteria[i].first << ": " << o.detail
                  << " (" << fmt(secs, 3) << " s)" << (known && !o.pass ? " [known unattained]" : "")
                  << (known && o.pass ? " [listed as unattained but passed]" : "") << std::endl;
    }
    std::cout << (criteria.size() - failures) << "/" << criteria.size() << " criteria passed" << std::endl;
    return blocking == 0 ? 0 : 1;
}
