#include "tunnelscope/serialization.hpp"

#include <charconv>
#include <concepts>
#include <optional>
#include <fstream>
#include <set>
#include <string>
#include <string_view>

#include "tunnelscope/error.hpp"

namespace tunnelscope {

using analysis::DataConfig;
using analysis::ExperimentConfig;

namespace {

// ---------------------------------------------------------------------------
// Writing

Json data_to_json(const DataConfig& d) {
    const auto& b = d.blobs;
    return Json{
        {"source", d.source == DataConfig::Source::blobs ? "blobs" : "csv"},
        {"blobs",
         {{"num_classes", b.num_classes},
          {"dim", b.dim},
          {"per_class_train", b.per_class_train},
          {"per_class_test", b.per_class_test},
          {"center_scale", b.center_scale},
          {"noise_std", b.noise_std},
          {"clusters_per_class", b.clusters_per_class},
          {"seed", b.seed}}},
        {"train_csv", d.train_csv},
        {"test_csv", d.test_csv},
        {"num_classes", d.num_classes},
        {"standardize", d.standardize},
    };
}

// ---------------------------------------------------------------------------
// Strict reading

class Section {
public:
    Section(const Json& node, std::string path) : node_(node), path_(std::move(path)) {
        if (!node_.is_object()) fail(path_.empty() ? "config" : path_, "object");
    }

    ~Section() = default;

    /// Rejects keys that were never asked for.
    void finish() const {
        for (const auto& [key, value] : node_.items())
            if (!seen_.count(key))
                throw FormatError("config: unknown key '" + join(key) + "'");
    }

    const Json* find(const std::string& key) {
        seen_.insert(key);
        auto it = node_.find(key);
        return it == node_.end() ? nullptr : &*it;
    }

    template <std::unsigned_integral U>
    void read(const std::string& key, U& out) {
        if (const Json* v = find(key)) {
            if (!v->is_number_unsigned()) fail(join(key), "non-negative integer");
            out = v->get<U>();
        }
    }

    void read(const std::string& key, double& out) {
        if (const Json* v = find(key)) {
            if (!v->is_number()) fail(join(key), "number");
            out = v->get<double>();
        }
    }

    void read(const std::string& key, bool& out) {
        if (const Json* v = find(key)) {
            if (!v->is_boolean()) fail(join(key), "boolean");
            out = v->get<bool>();
        }
    }

    void read(const std::string& key, std::string& out) {
        if (const Json* v = find(key)) {
            if (!v->is_string()) fail(join(key), "string");
            out = v->get<std::string>();
        }
    }

    void read(const std::string& key, std::vector<std::size_t>& out) {
        if (const Json* v = find(key)) {
            if (!v->is_array()) fail(join(key), "array of non-negative integers");
            std::vector<std::size_t> values;
            for (const auto& e : *v) {
                if (!e.is_number_unsigned()) fail(join(key), "array of non-negative integers");
                values.push_back(e.get<std::size_t>());
            }
            out = std::move(values);
        }
    }

    void read(const std::string& key, data::ClassPartition& out) {
        if (const Json* v = find(key)) {
            const char* expected = "array of arrays of class indices";
            if (!v->is_array()) fail(join(key), expected);
            data::ClassPartition partition;
            for (const auto& group : *v) {
                if (!group.is_array()) fail(join(key), expected);
                std::vector<int> classes;
                for (const auto& c : group) {
                    if (!c.is_number_integer() || c.get<std::int64_t>() < 0) fail(join(key), expected);
                    classes.push_back(c.get<int>());
                }
                partition.push_back(std::move(classes));
            }
            out = std::move(partition);
        }
    }

    /// Nested object, or nullptr when absent.
    std::optional<Section> child(const std::string& key) {
        if (const Json* v = find(key)) return Section(*v, join(key));
        return std::nullopt;
    }

    std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    [[noreturn]] static void fail(const std::string& key, const std::string& expected) {
        throw FormatError("config: key '" + key + "' expected " + expected);
    }

private:
    const Json& node_;
    std::string path_;
    std::set<std::string> seen_;
};

void read_data(Section& s, DataConfig& d) {
    std::string source = d.source == DataConfig::Source::blobs ? "blobs" : "csv";
    s.read("source", source);
    if (source == "blobs") d.source = DataConfig::Source::blobs;
    else if (source == "csv") d.source = DataConfig::Source::csv;
    else Section::fail(s.join("source"), "\"blobs\" or \"csv\"");
    if (auto b = s.child("blobs")) {
        b->read("num_classes", d.blobs.num_classes);
        b->read("dim", d.blobs.dim);
        b->read("per_class_train", d.blobs.per_class_train);
        b->read("per_class_test", d.blobs.per_class_test);
        b->read("center_scale", d.blobs.center_scale);
        b->read("noise_std", d.blobs.noise_std);
        b->read("clusters_per_class", d.blobs.clusters_per_class);
        b->read("seed", d.blobs.seed);
        b->finish();
    }
    s.read("train_csv", d.train_csv);
    s.read("test_csv", d.test_csv);
    s.read("num_classes", d.num_classes);
    s.read("standardize", d.standardize);
}

}  // namespace

Json config_to_json(const ExperimentConfig& cfg) {
    const auto& t = cfg.train;
    const auto& p = cfg.probe;
    return Json{
        {"kind", analysis::to_string(cfg.kind)},
        {"seed", cfg.seed},
        {"data", data_to_json(cfg.data)},
        {"network", {{"hidden_widths", cfg.network.hidden_widths}, {"residual", cfg.network.residual}}},
        {"train",
         {{"learning_rate", t.learning_rate},
          {"momentum", t.momentum},
          {"weight_decay", t.weight_decay},
          {"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"lr_decay_milestones", t.lr_decay_milestones},
          {"lr_decay_gamma", t.lr_decay_gamma},
          {"checkpoint_every", t.checkpoint_every}}},
        {"probe",
         {{"learning_rate", p.learning_rate},
          {"epochs", p.epochs},
          {"batch_size", p.batch_size},
          {"runs", cfg.probe_runs},
          {"beta1", p.beta1},
          {"beta2", p.beta2},
          {"epsilon", p.epsilon}}},
        {"spectrum",
         {{"relative_threshold", cfg.spectrum.relative_threshold}, {"max_features", cfg.spectrum.max_features}}},
        {"cka",
         {{"enabled", cfg.compute_cka},
          {"batch_size", cfg.cka.batch_size},
          {"min_batch", cfg.cka.min_batch},
          {"drop_incomplete", cfg.cka.drop_incomplete}}},
        {"ood", {{"same_as_source", cfg.ood.same_as_source}, {"target", data_to_json(cfg.ood.target)}}},
        {"stitch", {{"partition", cfg.stitch.partition}}},
        {"develop", {{"rank_steps", cfg.develop.rank_steps}, {"rank_samples", cfg.develop.rank_samples},
                     {"warmup_pairs", cfg.develop.warmup_pairs}}},
        {"sweep",
         {{"depths", cfg.sweep.depths}, {"widths", cfg.sweep.widths}, {"class_counts", cfg.sweep.class_counts}}},
        {"shorter", {{"depths", cfg.shorter.depths}}},
        {"metrics", {{"checkpoint", cfg.metrics.checkpoint}}},
    };
}

ExperimentConfig config_from_json(const Json& doc) {
    ExperimentConfig cfg;
    Section root(doc, "");
    std::string kind = analysis::to_string(cfg.kind);
    root.read("kind", kind);
    const auto parsed = analysis::parse_kind(kind);
    if (!parsed) Section::fail("kind", "one of tunnel|ood|stitch|develop|sweep|shorter|metrics");
    cfg.kind = *parsed;
    root.read("seed", cfg.seed);
    root.read("threads", cfg.threads);

    if (auto s = root.child("data")) {
        read_data(*s, cfg.data);
        s->finish();
    }
    if (auto s = root.child("network")) {
        s->read("hidden_widths", cfg.network.hidden_widths);
        s->read("residual", cfg.network.residual);
        s->finish();
    }
    if (auto s = root.child("train")) {
        auto& t = cfg.train;
        s->read("learning_rate", t.learning_rate);
        s->read("momentum", t.momentum);
        s->read("weight_decay", t.weight_decay);
        s->read("epochs", t.epochs);
        s->read("batch_size", t.batch_size);
        s->read("lr_decay_milestones", t.lr_decay_milestones);
        s->read("lr_decay_gamma", t.lr_decay_gamma);
        s->read("checkpoint_every", t.checkpoint_every);
        s->finish();
    }
    if (auto s = root.child("probe")) {
        auto& p = cfg.probe;
        s->read("learning_rate", p.learning_rate);
        s->read("epochs", p.epochs);
        s->read("batch_size", p.batch_size);
        s->read("runs", cfg.probe_runs);
        s->read("beta1", p.beta1);
        s->read("beta2", p.beta2);
        s->read("epsilon", p.epsilon);
        s->finish();
    }
    if (auto s = root.child("spectrum")) {
        s->read("relative_threshold", cfg.spectrum.relative_threshold);
        s->read("max_features", cfg.spectrum.max_features);
        s->finish();
    }
    if (auto s = root.child("cka")) {
        s->read("enabled", cfg.compute_cka);
        s->read("batch_size", cfg.cka.batch_size);
        s->read("min_batch", cfg.cka.min_batch);
        s->read("drop_incomplete", cfg.cka.drop_incomplete);
        s->finish();
    }
    if (auto s = root.child("ood")) {
        s->read("same_as_source", cfg.ood.same_as_source);
        if (auto t = s->child("target")) {
            read_data(*t, cfg.ood.target);
            t->finish();
        }
        s->finish();
    }
    if (auto s = root.child("stitch")) {
        s->read("partition", cfg.stitch.partition);
        s->finish();
    }
    if (auto s = root.child("develop")) {
        s->read("rank_steps", cfg.develop.rank_steps);
        s->read("rank_samples", cfg.develop.rank_samples);
        s->read("warmup_pairs", cfg.develop.warmup_pairs);
        s->finish();
    }
    if (auto s = root.child("sweep")) {
        s->read("depths", cfg.sweep.depths);
        s->read("widths", cfg.sweep.widths);
        s->read("class_counts", cfg.sweep.class_counts);
        s->finish();
    }
    if (auto s = root.child("shorter")) {
        s->read("depths", cfg.shorter.depths);
        s->finish();
    }
    if (auto s = root.child("metrics")) {
        s->read("checkpoint", cfg.metrics.checkpoint);
        s->finish();
    }
    root.finish();
    return cfg;
}

// ---------------------------------------------------------------------------
// Reports

Json to_json(const probes::ProbeCurve& curve) {
    return Json{{"mean", curve.mean}, {"std", curve.stddev}, {"runs", curve.runs}};
}

Json to_json(const analysis::TunnelBoundary& boundary) {
    return Json{{"layer", boundary.layer}, {"found", boundary.found}};
}

Json to_json(const analysis::TunnelReport& report) {
    Json variance = Json::array();
    for (const auto& v : report.variance_curve) variance.push_back({{"intra", v.intra}, {"inter", v.inter}});
    Json out{
        {"layers", report.layer_count()},
        {"reference_accuracy", report.reference_accuracy},
        {"tunnel_start_95", to_json(report.start_95)},
        {"tunnel_start_98", to_json(report.start_98)},
        {"extractor_fraction_95", report.extractor_fraction(report.start_95)},
        {"extractor_fraction_98", report.extractor_fraction(report.start_98)},
        {"probe_curve", to_json(report.probe_curve)},
        {"rank_curve", report.rank_curve},
        {"variance_curve", variance},
        {"l1_drift", report.l1_drift},
    };
    if (report.cka) {
        Json rows = Json::array();
        for (std::size_t i = 0; i < report.cka->size; ++i) {
            Json row = Json::array();
            for (std::size_t j = 0; j < report.cka->size; ++j) {
                const auto& v = report.cka->at(i, j);
                row.push_back(v ? Json(*v) : Json(nullptr));
            }
            rows.push_back(std::move(row));
        }
        out["cka_matrix"] = std::move(rows);
    } else {
        out["cka_matrix"] = nullptr;
    }
    return out;
}

Json to_json(const analysis::OodReport& report) {
    return Json{{"in_distribution", to_json(report.in_distribution)},
                {"ood_probe_curve", to_json(report.ood_probe)},
                {"ood_rank_curve", report.ood_rank},
                {"ood_best_layer", report.ood_best_layer}};
}

Json to_json(const analysis::StitchGrid& grid) {
    Json cells = Json::array();
    for (const auto& c : grid.cells)
        cells.push_back({{"extractor", c.extractor_task}, {"tunnel", c.tunnel_task}, {"task", c.eval_task},
                         {"accuracy", c.accuracy}});
    auto sweep = [](const std::vector<analysis::SubstitutionPoint>& points) {
        Json out = Json::array();
        for (const auto& p : points) out.push_back({{"layers", p.layers}, {"task1", p.task1}, {"task2", p.task2}});
        return out;
    };
    return Json{{"split", grid.split},
                {"task1_after_task1", grid.task1_after_task1},
                {"task2_after_task2", grid.task2_after_task2},
                {"task1_after_task2", grid.task1_after_task2},
                {"cells", cells},
                {"finetuned_tunnel", grid.finetuned_tunnel},
                {"finetuned_extractor", grid.finetuned_extractor},
                {"bottom_up", sweep(grid.bottom_up)},
                {"top_down", sweep(grid.top_down)},
                {"task1_report", to_json(grid.task1_report)}};
}

Json to_json(const analysis::DevelopmentReport& report) {
    return Json{{"checkpoint_epochs", report.checkpoint_epochs},
                {"weight_change", report.weight_change},
                {"rank_steps", report.rank_steps},
                {"rank_evolution", report.rank_evolution},
                {"accuracy", report.accuracy},
                {"reset_tunnel_accuracy", report.reset_tunnel_accuracy},
                {"reset_extractor_accuracy", report.reset_extractor_accuracy},
                {"mean_change_extractor", report.mean_change_extractor},
                {"mean_change_tunnel", report.mean_change_tunnel},
                {"final_report", to_json(report.final_report)}};
}

Json to_json(const std::vector<analysis::SweepCell>& cells) {
    Json out = Json::array();
    for (const auto& c : cells)
        out.push_back({{"depth", c.depth},
                       {"width", c.width},
                       {"classes", c.classes},
                       {"accuracy", c.accuracy},
                       {"tunnel_start_95", to_json(c.start_95)},
                       {"tunnel_start_98", to_json(c.start_98)},
                       {"extractor_fraction_95", c.extractor_fraction_95},
                       {"probe_curve", c.probe_curve},
                       {"rank_curve", c.rank_curve}});
    return out;
}

Json to_json(const analysis::ShorterReport& report) {
    Json rows = Json::array();
    for (const auto& r : report.rows)
        rows.push_back({{"depth", r.depth},
                        {"task1_after_task1", r.task1_after_task1},
                        {"task2_after_task2", r.task2_after_task2},
                        {"task1_after_task2", r.task1_after_task2},
                        {"forgetting", r.forgetting},
                        {"single_task_accuracy", r.single_task_accuracy()}});
    return Json{{"full_depth", report.full_depth}, {"extractor_length", report.extractor_length}, {"rows", rows}};
}

void write_curve_csv(const std::filesystem::path& path, std::span<const double> values,
                     std::span<const double> stddev) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    out << "layer,value,std\n";
    char buf[64];
    auto num = [&](double v) {
        const auto res = std::to_chars(buf, buf + sizeof buf, v);
        return std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    };
    for (std::size_t l = 0; l < values.size(); ++l) {
        out << l << ',' << num(values[l]) << ',';
        out << num(l < stddev.size() ? stddev[l] : 0.0) << '\n';
    }
    if (!out) throw FormatError("write failed for " + path.string());
}

}  // namespace tunnelscope
