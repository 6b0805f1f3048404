#pragma once

// Experiment configuration: a flat INI file with one section per module.
// See docs/config.md for every key and its default. Unknown sections or
// keys are errors; comments go on their own line (';' or '#').

#include <cmath>
#include <cstdint>
#include <fstream>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "dcs3gd/errors.hpp"
#include "dcs3gd/models.hpp"
#include "dcs3gd/sim/cost_model.hpp"

namespace dcs3gd::harness {

class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& message)
        : Error(field.empty() ? message : field + ": " + message), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

struct RunSection {
    std::uint64_t seed = 0;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> max_iterations;
    std::string output_dir = "runs/default";
    std::size_t eval_interval = 0;
    std::string label;
    friend bool operator==(const RunSection&, const RunSection&) = default;
};

struct ClusterSection {
    std::size_t n_workers = 8;
    Algorithm algorithm = Algorithm::dc_s3gd;
    std::size_t local_batch_size = 32;
    std::optional<std::size_t> aggregate_batch_size;
    double t_compute = 1.0;
    double t_allreduce = 1.0;
    double t_ps_roundtrip = 1.0;
    double jitter = 0.0;
    bool shard_wraparound = true;
    friend bool operator==(const ClusterSection&, const ClusterSection&) = default;
};

struct ModelSection {
    ModelKind kind = ModelKind::logistic_regression;
    std::size_t hidden = 32;
    // Quadratic kind: diagonal eigenvalues spaced linearly in [min, max],
    // plus `quadratic_rank` random rank-one terms of norm sqrt(quadratic_rank_scale).
    double quadratic_min_eigenvalue = 0.1;
    double quadratic_max_eigenvalue = 1.0;
    std::size_t quadratic_rank = 0;
    double quadratic_rank_scale = 0.1;
    friend bool operator==(const ModelSection&, const ModelSection&) = default;
};

struct DatasetSection {
    std::string source = "synthetic";  // synthetic | file
    std::string path;
    std::size_t n_samples = 8192;
    std::size_t dimension = 32;
    std::size_t n_classes = 4;
    double separation = 4.0;
    double margin = 1.0;
    double noise = 1.0;
    double validation_fraction = 0.2;
    friend bool operator==(const DatasetSection&, const DatasetSection&) = default;
};

struct ScheduleSection {
    double eta_single_node = 0.01;
    double start_fraction = 0.0;
    double end_fraction = 0.0;
    double warmup_fraction = 0.5;
    bool plateau_detection = true;
    std::size_t plateau_window_epochs = 5;
    double plateau_threshold = 0.005;
    double momentum = 0.9;
    double weight_decay = 0.0001;
    double weight_decay_factor = 2.3;
    std::set<GroupId> excluded_groups{kBiasGroup};
    friend bool operator==(const ScheduleSection&, const ScheduleSection&) = default;
};

struct CompensationSection {
    bool enabled = true;
    double lambda0 = 0.2;
    bool exact_hessian = false;
    friend bool operator==(const CompensationSection&, const CompensationSection&) = default;
};

struct ExperimentConfig {
    RunSection run;
    ClusterSection cluster;
    ModelSection model;
    DatasetSection dataset;
    ScheduleSection schedule;
    CompensationSection compensation;
    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// Numeric keys accepted as a sweep axis.
inline const std::set<std::string>& sweepable_keys() {
    static const std::set<std::string> keys{
        "run.seed",
        "run.epochs",
        "run.max_iterations",
        "cluster.n_workers",
        "cluster.local_batch_size",
        "cluster.aggregate_batch_size",
        "cluster.t_compute",
        "cluster.t_allreduce",
        "cluster.t_ps_roundtrip",
        "cluster.jitter",
        "model.hidden",
        "dataset.n_samples",
        "dataset.margin",
        "dataset.separation",
        "schedule.eta_single_node",
        "schedule.warmup_fraction",
        "schedule.momentum",
        "schedule.weight_decay",
        "schedule.weight_decay_factor",
        "schedule.plateau_threshold",
        "compensation.lambda0",
    };
    return keys;
}

namespace detail {

using boost::property_tree::ptree;

inline std::string fmt_value(double v) { return fmt::format("{}", v); }
inline std::string fmt_value(std::size_t v) { return std::to_string(v); }
inline std::string fmt_value(bool v) { return v ? "true" : "false"; }

class Reader {
public:
    explicit Reader(const ptree& tree) : tree_(tree) {
        static const std::map<std::string, std::set<std::string>> known{
            {"run", {"seed", "epochs", "max_iterations", "output_dir", "eval_interval", "label"}},
            {"cluster",
             {"n_workers", "algorithm", "local_batch_size", "aggregate_batch_size", "t_compute", "t_allreduce",
              "t_ps_roundtrip", "jitter", "shard_wraparound"}},
            {"model",
             {"kind", "hidden", "quadratic_min_eigenvalue", "quadratic_max_eigenvalue", "quadratic_rank",
              "quadratic_rank_scale"}},
            {"dataset",
             {"source", "path", "n_samples", "dimension", "n_classes", "separation", "margin", "noise",
              "validation_fraction"}},
            {"schedule",
             {"eta_single_node", "start_fraction", "end_fraction", "warmup_fraction", "plateau_detection",
              "plateau_window_epochs", "plateau_threshold", "momentum", "weight_decay", "weight_decay_factor",
              "excluded_groups"}},
            {"compensation", {"enabled", "lambda0", "exact_hessian"}},
        };
        for (const auto& [section, body] : tree_) {
            const auto it = known.find(section);
            if (it == known.end()) throw ConfigError(section, "unknown section");
            if (!body.data().empty()) throw ConfigError(section, "key outside of any section");
            for (const auto& [key, value] : body)
                if (!it->second.contains(key)) throw ConfigError(section + "." + key, "unknown key");
        }
    }

    std::optional<std::string> raw(const std::string& section, const std::string& key) const {
        const auto sec = tree_.get_child_optional(section);
        if (!sec) return std::nullopt;
        const auto val = sec->get_child_optional(ptree::path_type(key, '\0'));
        if (!val) return std::nullopt;
        std::string text = val->data();
        if (text.empty()) return std::nullopt;
        return text;
    }

    void get(const std::string& s, const std::string& k, std::string& out) const {
        if (auto v = raw(s, k)) out = *v;
    }

    void get(const std::string& s, const std::string& k, double& out) const {
        if (auto v = raw(s, k)) out = parse_double(s + "." + k, *v);
    }

    void get(const std::string& s, const std::string& k, std::size_t& out) const {
        if (auto v = raw(s, k)) out = static_cast<std::size_t>(parse_count(s + "." + k, *v));
    }

    void get(const std::string& s, const std::string& k, std::optional<std::size_t>& out) const {
        if (auto v = raw(s, k)) out = static_cast<std::size_t>(parse_count(s + "." + k, *v));
    }

    void get(const std::string& s, const std::string& k, bool& out) const {
        if (auto v = raw(s, k)) {
            if (*v == "true" || *v == "1" || *v == "yes" || *v == "on")
                out = true;
            else if (*v == "false" || *v == "0" || *v == "no" || *v == "off")
                out = false;
            else
                throw ConfigError(s + "." + k, "expected a boolean, got '" + *v + "'");
        }
    }

    static double parse_double(const std::string& field, const std::string& text) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(text, &used);
        } catch (const std::exception&) {
            throw ConfigError(field, "expected a number, got '" + text + "'");
        }
        if (used != text.size() || !std::isfinite(v)) throw ConfigError(field, "expected a finite number, got '" + text + "'");
        return v;
    }

    static std::uint64_t parse_count(const std::string& field, const std::string& text) {
        if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos)
            throw ConfigError(field, "expected a non-negative integer, got '" + text + "'");
        try {
            return std::stoull(text);
        } catch (const std::exception&) {
            throw ConfigError(field, "integer out of range: '" + text + "'");
        }
    }

private:
    const ptree& tree_;
};

inline ModelKind parse_model_kind(const std::string& text) {
    if (text == "quadratic") return ModelKind::quadratic;
    if (text == "logistic_regression") return ModelKind::logistic_regression;
    if (text == "mlp") return ModelKind::mlp;
    throw ConfigError("model.kind", "expected quadratic, logistic_regression or mlp, got '" + text + "'");
}

inline std::set<GroupId> parse_groups(const std::string& text) {
    std::set<GroupId> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto first = item.find_first_not_of(' ');
        if (first == std::string::npos) continue;
        item = item.substr(first, item.find_last_not_of(' ') - first + 1);
        const auto v = Reader::parse_count("schedule.excluded_groups", item);
        if (v > 255) throw ConfigError("schedule.excluded_groups", "group ids must be < 256");
        out.insert(static_cast<GroupId>(v));
    }
    return out;
}

}  // namespace detail

/// Semantic checks; each failure names the offending field.
inline void validate(const ExperimentConfig& c) {
    auto require = [](bool ok, const char* field, const std::string& message) {
        if (!ok) throw ConfigError(field, message);
    };
    require(!(c.run.epochs && c.run.max_iterations), "run.epochs", "set exactly one of epochs / max_iterations");
    require(c.run.epochs || c.run.max_iterations, "run.epochs", "set exactly one of epochs / max_iterations");
    if (c.run.epochs) require(*c.run.epochs >= 1, "run.epochs", "must be >= 1");
    if (c.run.max_iterations) require(*c.run.max_iterations >= 1, "run.max_iterations", "must be >= 1");
    require(!c.run.output_dir.empty(), "run.output_dir", "must not be empty");

    require(c.cluster.n_workers >= 1, "cluster.n_workers", "must be >= 1");
    require(c.cluster.local_batch_size >= 1, "cluster.local_batch_size", "must be >= 1");
    if (c.cluster.aggregate_batch_size) {
        require(*c.cluster.aggregate_batch_size >= 1, "cluster.aggregate_batch_size", "must be >= 1");
        require(*c.cluster.aggregate_batch_size % c.cluster.n_workers == 0, "cluster.aggregate_batch_size",
                fmt::format("{} is not divisible by n_workers = {}", *c.cluster.aggregate_batch_size,
                            c.cluster.n_workers));
    }
    require(c.cluster.t_compute >= 0, "cluster.t_compute", "must be >= 0");
    require(c.cluster.t_allreduce >= 0, "cluster.t_allreduce", "must be >= 0");
    require(c.cluster.t_ps_roundtrip >= 0, "cluster.t_ps_roundtrip", "must be >= 0");
    require(c.cluster.jitter >= 0, "cluster.jitter", "must be >= 0");

    require(c.model.kind != ModelKind::mlp || c.model.hidden >= 1, "model.hidden", "must be >= 1");
    require(c.model.quadratic_min_eigenvalue >= 0, "model.quadratic_min_eigenvalue", "must be >= 0");
    require(c.model.quadratic_max_eigenvalue >= c.model.quadratic_min_eigenvalue, "model.quadratic_max_eigenvalue",
            "must be >= quadratic_min_eigenvalue");
    require(c.model.quadratic_rank_scale >= 0, "model.quadratic_rank_scale", "must be >= 0");

    require(c.dataset.source == "synthetic" || c.dataset.source == "file", "dataset.source",
            "expected 'synthetic' or 'file'");
    if (c.dataset.source == "file") {
        require(!c.dataset.path.empty(), "dataset.path", "required when source = file");
        require(std::filesystem::exists(c.dataset.path), "dataset.path", "file not found: " + c.dataset.path);
    } else {
        require(c.dataset.n_samples >= 1, "dataset.n_samples", "must be >= 1");
        require(c.dataset.dimension >= 1, "dataset.dimension", "must be >= 1");
        if (c.model.kind != ModelKind::quadratic) {
            require(c.dataset.n_classes >= 2, "dataset.n_classes", "must be >= 2");
            require(c.dataset.n_classes <= c.dataset.dimension, "dataset.n_classes", "must not exceed dimension");
            require(c.dataset.margin >= 0, "dataset.margin", "must be >= 0");
            require(c.dataset.separation > c.dataset.margin, "dataset.separation", "must exceed margin");
        }
        require(c.dataset.noise > 0, "dataset.noise", "must be > 0");
    }
    require(c.dataset.validation_fraction >= 0 && c.dataset.validation_fraction < 1, "dataset.validation_fraction",
            "must be in [0, 1)");

    require(c.schedule.eta_single_node > 0, "schedule.eta_single_node", "must be > 0");
    require(c.schedule.start_fraction >= 0, "schedule.start_fraction", "must be >= 0");
    require(c.schedule.end_fraction >= 0, "schedule.end_fraction", "must be >= 0");
    require(c.schedule.warmup_fraction >= 0 && c.schedule.warmup_fraction <= 1, "schedule.warmup_fraction",
            "must be in [0, 1]");
    require(c.schedule.plateau_window_epochs >= 1, "schedule.plateau_window_epochs", "must be >= 1");
    require(c.schedule.plateau_threshold >= 0, "schedule.plateau_threshold", "must be >= 0");
    require(c.schedule.momentum >= 0 && c.schedule.momentum < 1, "schedule.momentum", "must be in [0, 1)");
    require(c.schedule.weight_decay >= 0, "schedule.weight_decay", "must be >= 0");
    require(c.schedule.weight_decay_factor >= 0, "schedule.weight_decay_factor", "must be >= 0");

    require(c.compensation.lambda0 >= 0, "compensation.lambda0", "must be >= 0");
    require(!c.compensation.exact_hessian || c.model.kind != ModelKind::mlp, "compensation.exact_hessian",
            "needs a model kind with an analytic Hessian (quadratic or logistic_regression)");
}

/// Builds a config from a parsed tree. `model.kind` and `dataset.source`
/// are required; everything else has a default.
inline ExperimentConfig resolve_config(const boost::property_tree::ptree& tree) {
    detail::Reader r(tree);
    ExperimentConfig c;

    if (auto v = r.raw("run", "seed")) c.run.seed = detail::Reader::parse_count("run.seed", *v);
    r.get("run", "epochs", c.run.epochs);
    r.get("run", "max_iterations", c.run.max_iterations);
    if (!c.run.epochs && !c.run.max_iterations) c.run.epochs = 30;
    r.get("run", "output_dir", c.run.output_dir);
    r.get("run", "eval_interval", c.run.eval_interval);
    r.get("run", "label", c.run.label);

    r.get("cluster", "n_workers", c.cluster.n_workers);
    if (auto a = r.raw("cluster", "algorithm")) {
        try {
            c.cluster.algorithm = parse_algorithm(*a);
        } catch (const InvalidArgument& e) {
            throw ConfigError("cluster.algorithm", e.what());
        }
    }
    r.get("cluster", "local_batch_size", c.cluster.local_batch_size);
    r.get("cluster", "aggregate_batch_size", c.cluster.aggregate_batch_size);
    r.get("cluster", "t_compute", c.cluster.t_compute);
    r.get("cluster", "t_allreduce", c.cluster.t_allreduce);
    r.get("cluster", "t_ps_roundtrip", c.cluster.t_ps_roundtrip);
    r.get("cluster", "jitter", c.cluster.jitter);
    r.get("cluster", "shard_wraparound", c.cluster.shard_wraparound);

    const auto kind = r.raw("model", "kind");
    if (!kind) throw ConfigError("model.kind", "required");
    c.model.kind = detail::parse_model_kind(*kind);
    r.get("model", "hidden", c.model.hidden);
    r.get("model", "quadratic_min_eigenvalue", c.model.quadratic_min_eigenvalue);
    r.get("model", "quadratic_max_eigenvalue", c.model.quadratic_max_eigenvalue);
    r.get("model", "quadratic_rank", c.model.quadratic_rank);
    r.get("model", "quadratic_rank_scale", c.model.quadratic_rank_scale);

    const auto source = r.raw("dataset", "source");
    if (!source) throw ConfigError("dataset.source", "required");
    c.dataset.source = *source;
    r.get("dataset", "path", c.dataset.path);
    r.get("dataset", "n_samples", c.dataset.n_samples);
    r.get("dataset", "dimension", c.dataset.dimension);
    r.get("dataset", "n_classes", c.dataset.n_classes);
    r.get("dataset", "separation", c.dataset.separation);
    r.get("dataset", "margin", c.dataset.margin);
    r.get("dataset", "noise", c.dataset.noise);
    r.get("dataset", "validation_fraction", c.dataset.validation_fraction);

    r.get("schedule", "eta_single_node", c.schedule.eta_single_node);
    r.get("schedule", "start_fraction", c.schedule.start_fraction);
    r.get("schedule", "end_fraction", c.schedule.end_fraction);
    r.get("schedule", "warmup_fraction", c.schedule.warmup_fraction);
    r.get("schedule", "plateau_detection", c.schedule.plateau_detection);
    r.get("schedule", "plateau_window_epochs", c.schedule.plateau_window_epochs);
    r.get("schedule", "plateau_threshold", c.schedule.plateau_threshold);
    r.get("schedule", "momentum", c.schedule.momentum);
    r.get("schedule", "weight_decay", c.schedule.weight_decay);
    r.get("schedule", "weight_decay_factor", c.schedule.weight_decay_factor);
    if (auto g = r.raw("schedule", "excluded_groups")) c.schedule.excluded_groups = detail::parse_groups(*g);
    else if (tree.get_child_optional("schedule") &&
             tree.get_child("schedule").get_child_optional("excluded_groups"))
        c.schedule.excluded_groups.clear();  // present but empty: nothing excluded

    r.get("compensation", "enabled", c.compensation.enabled);
    r.get("compensation", "lambda0", c.compensation.lambda0);
    r.get("compensation", "exact_hessian", c.compensation.exact_hessian);

    if (c.cluster.aggregate_batch_size && c.cluster.n_workers >= 1 &&
        *c.cluster.aggregate_batch_size % c.cluster.n_workers == 0)
        c.cluster.local_batch_size = *c.cluster.aggregate_batch_size / c.cluster.n_workers;

    validate(c);
    return c;
}

inline boost::property_tree::ptree parse_config_text(const std::string& text) {
    boost::property_tree::ptree tree;
    std::istringstream in(text);
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError("", fmt::format("parse error at line {}: {}", e.line(), e.message()));
    }
    return tree;
}

inline ExperimentConfig load_config_text(const std::string& text) { return resolve_config(parse_config_text(text)); }

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    try {
        return load_config_text(buffer.str());
    } catch (const ConfigError& e) {
        throw ConfigError(e.field(), path.string() + ": " + std::string(e.what()));
    }
}

/// Every key with its resolved value, in the documented order.
inline boost::property_tree::ptree to_tree(const ExperimentConfig& c) {
    using detail::fmt_value;
    boost::property_tree::ptree t;
    auto put = [&t](const std::string& section, const std::string& key, const std::string& value) {
        t.put_child(boost::property_tree::ptree::path_type(section + "\x1f" + key, '\x1f'),
                    boost::property_tree::ptree(value));
    };
    put("run", "seed", std::to_string(c.run.seed));
    put("run", "epochs", c.run.epochs ? std::to_string(*c.run.epochs) : "");
    put("run", "max_iterations", c.run.max_iterations ? std::to_string(*c.run.max_iterations) : "");
    put("run", "output_dir", c.run.output_dir);
    put("run", "eval_interval", fmt_value(c.run.eval_interval));
    put("run", "label", c.run.label);

    put("cluster", "n_workers", fmt_value(c.cluster.n_workers));
    put("cluster", "algorithm", to_string(c.cluster.algorithm));
    put("cluster", "local_batch_size", fmt_value(c.cluster.local_batch_size));
    put("cluster", "aggregate_batch_size",
        c.cluster.aggregate_batch_size ? std::to_string(*c.cluster.aggregate_batch_size) : "");
    put("cluster", "t_compute", fmt_value(c.cluster.t_compute));
    put("cluster", "t_allreduce", fmt_value(c.cluster.t_allreduce));
    put("cluster", "t_ps_roundtrip", fmt_value(c.cluster.t_ps_roundtrip));
    put("cluster", "jitter", fmt_value(c.cluster.jitter));
    put("cluster", "shard_wraparound", fmt_value(c.cluster.shard_wraparound));

    put("model", "kind", to_string(c.model.kind));
    put("model", "hidden", fmt_value(c.model.hidden));
    put("model", "quadratic_min_eigenvalue", fmt_value(c.model.quadratic_min_eigenvalue));
    put("model", "quadratic_max_eigenvalue", fmt_value(c.model.quadratic_max_eigenvalue));
    put("model", "quadratic_rank", fmt_value(c.model.quadratic_rank));
    put("model", "quadratic_rank_scale", fmt_value(c.model.quadratic_rank_scale));

    put("dataset", "source", c.dataset.source);
    put("dataset", "path", c.dataset.path);
    put("dataset", "n_samples", fmt_value(c.dataset.n_samples));
    put("dataset", "dimension", fmt_value(c.dataset.dimension));
    put("dataset", "n_classes", fmt_value(c.dataset.n_classes));
    put("dataset", "separation", fmt_value(c.dataset.separation));
    put("dataset", "margin", fmt_value(c.dataset.margin));
    put("dataset", "noise", fmt_value(c.dataset.noise));
    put("dataset", "validation_fraction", fmt_value(c.dataset.validation_fraction));

    put("schedule", "eta_single_node", fmt_value(c.schedule.eta_single_node));
    put("schedule", "start_fraction", fmt_value(c.schedule.start_fraction));
    put("schedule", "end_fraction", fmt_value(c.schedule.end_fraction));
    put("schedule", "warmup_fraction", fmt_value(c.schedule.warmup_fraction));
    put("schedule", "plateau_detection", fmt_value(c.schedule.plateau_detection));
    put("schedule", "plateau_window_epochs", fmt_value(c.schedule.plateau_window_epochs));
    put("schedule", "plateau_threshold", fmt_value(c.schedule.plateau_threshold));
    put("schedule", "momentum", fmt_value(c.schedule.momentum));
    put("schedule", "weight_decay", fmt_value(c.schedule.weight_decay));
    put("schedule", "weight_decay_factor", fmt_value(c.schedule.weight_decay_factor));
    std::string groups;
    for (GroupId g : c.schedule.excluded_groups) groups += (groups.empty() ? "" : ",") + std::to_string(g);
    put("schedule", "excluded_groups", groups);

    put("compensation", "enabled", fmt_value(c.compensation.enabled));
    put("compensation", "lambda0", fmt_value(c.compensation.lambda0));
    put("compensation", "exact_hessian", fmt_value(c.compensation.exact_hessian));
    return t;
}

inline std::string serialize_config(const ExperimentConfig& c) {
    std::ostringstream out;
    boost::property_tree::ini_parser::write_ini(out, to_tree(c));
    return out.str();
}

/// Applies `section.key = value` on top of a resolved config and re-resolves.
inline ExperimentConfig with_override(const ExperimentConfig& base, const std::string& dotted_key,
                                      const std::string& value) {
    const auto dot = dotted_key.find('.');
    if (dot == std::string::npos) throw ConfigError(dotted_key, "expected section.key");
    auto tree = to_tree(base);
    const std::string section = dotted_key.substr(0, dot), key = dotted_key.substr(dot + 1);
    auto sec = tree.get_child_optional(section);
    if (!sec || !sec->get_child_optional(boost::property_tree::ptree::path_type(key, '\0')))
        throw ConfigError(dotted_key, "unknown key");
    sec->get_child(boost::property_tree::ptree::path_type(key, '\0')).put_value(value);
    // epochs and max_iterations are exclusive: setting one clears the other.
    if (dotted_key == "run.epochs") tree.get_child("run").get_child("max_iterations").put_value("");
    if (dotted_key == "run.max_iterations") tree.get_child("run").get_child("epochs").put_value("");
    return resolve_config(tree);
}

}  // namespace dcs3gd::harness
