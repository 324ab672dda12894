#include "cli/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "tunnelscope/checkpoint_io.hpp"
#include "tunnelscope/error.hpp"

namespace tunnelscope::cli {

namespace fs = std::filesystem;
using analysis::ExperimentKind;

void apply_override(Json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw FormatError("--set expects key=value, got '" + assignment + "'");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);

    Json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw FormatError("--set: empty path segment in '" + key + "'");
        if (node->is_null()) *node = Json::object();
        if (!node->is_object()) throw FormatError("--set: '" + key + "' descends into a non-object");
        node = &(*node)[part];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    Json value = Json::parse(text, nullptr, false);
    *node = value.is_discarded() ? Json(text) : std::move(value);
}

std::optional<std::string> system_env(const char* name) {
    if (const char* v = std::getenv(name)) return std::string(v);
    return std::nullopt;
}

RunConfig parse_config(const CliOptions& options, const EnvLookup& env) {
    Json doc = Json::object();
    if (options.config_path) {
        std::ifstream in(*options.config_path);
        if (!in) throw FormatError("cannot open config file " + *options.config_path);
        try {
            doc = Json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw FormatError("config file " + *options.config_path + ": " + e.what());
        }
        if (doc.is_object() && doc.contains("schema_version") && doc.contains("config")) doc = doc["config"];
    }
    for (const auto& assignment : options.overrides) apply_override(doc, assignment);
    if (options.seed) doc["seed"] = *options.seed;
    if (options.threads) doc["threads"] = *options.threads;
    if (!analysis::parse_kind(options.kind))
        throw FormatError("unknown experiment kind '" + options.kind + "'");
    doc["kind"] = options.kind;

    RunConfig cfg;
    cfg.experiment = config_from_json(doc);
    cfg.experiment.validate();
    if (options.out) {
        cfg.output_dir = *options.out;
    } else if (auto from_env = env("TUNNELSCOPE_OUT"); from_env && !from_env->empty()) {
        cfg.output_dir = *from_env;
    } else {
        throw PreconditionError("no output directory: pass --out or set TUNNELSCOPE_OUT");
    }
    return cfg;
}

namespace {

// Collects the files an experiment writes so the report can list them.
class OutputDir {
public:
    explicit OutputDir(fs::path root) : root_(std::move(root)) {}

    fs::path file(const std::string& name) {
        manifest_.push_back(name);
        const fs::path p = root_ / name;
        if (p.has_parent_path()) fs::create_directories(p.parent_path());
        return p;
    }

    void curve(const std::string& name, std::span<const double> values, std::span<const double> stddev = {}) {
        write_curve_csv(file(name), values, stddev);
    }

    void curve(const std::string& name, std::span<const std::size_t> values) {
        std::vector<double> v(values.begin(), values.end());
        write_curve_csv(file(name), v);
    }

    void checkpoints(const std::vector<nn::Checkpoint>& ckpts, const std::string& prefix) {
        for (const auto& c : ckpts) {
            std::ostringstream name;
            name << "checkpoints/" << prefix << "epoch_" << std::setw(4) << std::setfill('0') << c.epoch << ".tnlc";
            nn::save_parameters(c.parameters, file(name.str()));
        }
    }

    void table(const std::string& name, const std::string& header, const std::vector<std::vector<double>>& rows) {
        std::ofstream out(file(name));
        out << header << '\n';
        out << std::setprecision(17);
        for (const auto& row : rows) {
            for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
            out << '\n';
        }
        if (!out) throw FormatError("write failed for " + name);
    }

    std::vector<std::string> manifest() const {
        auto m = manifest_;
        m.push_back("report.json");
        std::sort(m.begin(), m.end());
        return m;
    }

    const fs::path& root() const { return root_; }

private:
    fs::path root_;
    std::vector<std::string> manifest_;
};

void write_tunnel_curves(OutputDir& dir, const analysis::TunnelReport& r, const std::string& prefix = "") {
    dir.curve(prefix + "probe_curve.csv", r.probe_curve.mean, r.probe_curve.stddev);
    dir.curve(prefix + "rank_curve.csv", r.rank_curve);
    std::vector<std::vector<double>> variance;
    for (std::size_t l = 0; l < r.variance_curve.size(); ++l)
        variance.push_back({static_cast<double>(l), r.variance_curve[l].intra, r.variance_curve[l].inter});
    dir.table(prefix + "variance_curve.csv", "layer,intra,inter", variance);
    if (!r.l1_drift.empty()) dir.curve(prefix + "l1_drift.csv", r.l1_drift);
}

std::string boundary_text(const analysis::TunnelBoundary& b) {
    return std::to_string(b.layer) + (b.found ? "" : " (no tunnel)");
}

void print_summary(std::ostream& out, const analysis::TunnelReport& r) {
    out << "reference accuracy: " << r.reference_accuracy << '\n'
        << "tunnel start (95%): layer " << boundary_text(r.start_95) << " of " << r.layer_count()
        << ", extractor fraction " << r.extractor_fraction(r.start_95) << '\n'
        << "tunnel start (98%): layer " << boundary_text(r.start_98) << " of " << r.layer_count()
        << ", extractor fraction " << r.extractor_fraction(r.start_98) << '\n';
}

Json execute(const analysis::ExperimentConfig& cfg, OutputDir& dir, std::ostream& out) {
    switch (cfg.kind) {
        case ExperimentKind::tunnel: {
            const auto run = analysis::run_tunnel_experiment(cfg);
            write_tunnel_curves(dir, run.report);
            dir.checkpoints(run.training.checkpoints, "");
            print_summary(out, run.report);
            Json j = to_json(run.report);
            j["epoch_loss"] = run.training.epoch_loss;
            return j;
        }
        case ExperimentKind::ood: {
            const auto run = analysis::run_ood_experiment(cfg);
            write_tunnel_curves(dir, run.report.in_distribution);
            dir.curve("ood_probe_curve.csv", run.report.ood_probe.mean, run.report.ood_probe.stddev);
            dir.curve("ood_rank_curve.csv", run.report.ood_rank);
            dir.checkpoints(run.training.checkpoints, "");
            print_summary(out, run.report.in_distribution);
            out << "best OOD probe layer: " << run.report.ood_best_layer << '\n';
            return to_json(run.report);
        }
        case ExperimentKind::stitch: {
            const auto run = analysis::run_stitch_experiment(cfg);
            const auto& g = run.grid;
            write_tunnel_curves(dir, g.task1_report, "task1_");
            std::vector<std::vector<double>> rows;
            for (std::size_t i = 0; i < g.bottom_up.size(); ++i)
                rows.push_back({static_cast<double>(i), g.bottom_up[i].task1, g.bottom_up[i].task2,
                                g.top_down[i].task1, g.top_down[i].task2});
            dir.table("substitution.csv", "layers,bottom_up_task1,bottom_up_task2,top_down_task1,top_down_task2", rows);
            nn::save_parameters(run.training.task1.network.layers, dir.file("checkpoints/task1_final.tnlc"));
            nn::save_parameters(run.training.task2.network.layers, dir.file("checkpoints/task2_final.tnlc"));
            out << "split layer: " << g.split << '\n';
            for (const auto& c : g.cells)
                out << "E" << c.extractor_task << " + T" << c.tunnel_task << " on task " << c.eval_task << ": "
                    << c.accuracy << '\n';
            return to_json(g);
        }
        case ExperimentKind::develop: {
            const auto run = analysis::run_development_experiment(cfg);
            const auto& r = run.report;
            write_tunnel_curves(dir, r.final_report);
            std::vector<std::vector<double>> heat;
            for (std::size_t i = 0; i < r.weight_change.size(); ++i) {
                std::vector<double> row = {static_cast<double>(r.checkpoint_epochs[i]),
                                           static_cast<double>(r.checkpoint_epochs[i + 1])};
                row.insert(row.end(), r.weight_change[i].begin(), r.weight_change[i].end());
                heat.push_back(std::move(row));
            }
            dir.table("weight_change.csv", "from_epoch,to_epoch,layer_values...", heat);
            std::vector<std::vector<double>> ranks;
            for (std::size_t i = 0; i < r.rank_steps.size(); ++i) {
                std::vector<double> row = {static_cast<double>(r.rank_steps[i])};
                row.insert(row.end(), r.rank_evolution[i].begin(), r.rank_evolution[i].end());
                ranks.push_back(std::move(row));
            }
            dir.table("rank_evolution.csv", "step,layer_ranks...", ranks);
            dir.checkpoints(run.training.checkpoints, "");
            print_summary(out, r.final_report);
            out << "mean weight change: extractor " << r.mean_change_extractor << ", tunnel "
                << r.mean_change_tunnel << '\n'
                << "accuracy after resetting tunnel layers: " << r.reset_tunnel_accuracy << '\n';
            return to_json(r);
        }
        case ExperimentKind::sweep: {
            const auto cells = analysis::run_capacity_sweep(cfg);
            std::vector<std::vector<double>> rows;
            for (const auto& c : cells) {
                rows.push_back({static_cast<double>(c.depth), static_cast<double>(c.width),
                                static_cast<double>(c.classes), c.accuracy,
                                static_cast<double>(c.start_95.layer), static_cast<double>(c.start_98.layer),
                                c.extractor_fraction_95});
                out << "depth " << c.depth << " width " << c.width << " classes " << c.classes
                    << ": tunnel start (95%) layer " << boundary_text(c.start_95) << ", accuracy " << c.accuracy
                    << '\n';
            }
            dir.table("sweep.csv", "depth,width,classes,accuracy,tunnel_start_95,tunnel_start_98,extractor_fraction_95",
                      rows);
            return to_json(cells);
        }
        case ExperimentKind::shorter: {
            const auto report = analysis::run_shorter_network_experiment(cfg);
            std::vector<std::vector<double>> rows;
            for (const auto& r : report.rows) {
                rows.push_back({static_cast<double>(r.depth), r.task1_after_task1, r.task2_after_task2,
                                r.task1_after_task2, r.forgetting});
                out << "depth " << r.depth << ": single-task accuracy " << r.single_task_accuracy()
                    << ", forgetting " << r.forgetting << '\n';
            }
            dir.table("shorter.csv", "depth,task1_after_task1,task2_after_task2,task1_after_task2,forgetting", rows);
            return to_json(report);
        }
        case ExperimentKind::metrics: {
            const auto data = analysis::load_data(cfg.data);
            const auto spec = cfg.network.spec_for(data.train.dim(), data.train.num_classes);
            const nn::Network net = cfg.metrics.checkpoint.empty()
                                        ? nn::init_network<float>(spec, cfg.init_seed())
                                        : nn::load_network(spec, cfg.metrics.checkpoint);
            const auto report = analysis::run_metrics(cfg, net, data);
            write_tunnel_curves(dir, report);
            print_summary(out, report);
            return to_json(report);
        }
    }
    throw PreconditionError("unhandled experiment kind");
}

void write_atomically(const fs::path& target, const std::string& contents) {
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError("cannot open " + tmp.string() + " for writing");
        out << contents;
        out.flush();
        if (!out) throw FormatError("write failed for " + tmp.string());
    }
    fs::rename(tmp, target);
}

}  // namespace

int run(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    try {
        fs::create_directories(cfg.output_dir);
        OutputDir dir(cfg.output_dir);
        Json results = execute(cfg.experiment, dir, out);

        Json report{{"schema_version", kReportSchemaVersion},
                    {"kind", analysis::to_string(cfg.experiment.kind)},
                    {"config", config_to_json(cfg.experiment)},
                    {"results", std::move(results)},
                    {"manifest", dir.manifest()}};
        write_atomically(cfg.output_dir / "report.json", report.dump(2) + "\n");
        out << "report: " << (cfg.output_dir / "report.json").string() << '\n';
        return 0;
    } catch (const fs::filesystem_error& e) {
        err << "tunnelscope: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        err << "tunnelscope: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace tunnelscope::cli
