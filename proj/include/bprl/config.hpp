#pragma once
#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "bprl/checkpoint.hpp"
#include "bprl/error.hpp"

namespace bprl {

// Experiment configuration. Parsing is strict both ways: unknown keys are
// rejected (a typo'd hyperparameter must never silently fall back to a
// default) and every error names the full field path.

struct DatasetSection {
    int h = 16, w = 16, c = 1;
    int classes = 4;
    int n_train_per_class = 500;
    int n_test_per_class = 100;
    double noise_sigma = 0.15;
};

struct TriggerSection {
    std::string kind = "patch"; // patch | blended
    double blend_ratio_train = 0.1;
    double blend_ratio_eval = 0.2;
    int anchor_row = 0;
    int anchor_col = 0;
};

struct PoisonSection {
    double rate = 0.0; // required
    int target = 0;
};

struct TrainSection {
    int epochs = 20;
    double lr = 0.05;
    double momentum = 0.9;
    int batch = 64;
};

struct PlainSection {
    int epochs = 5;
    double lr = 0.01;
};

struct EpSection {
    int epochs = 20;
    double lr = 0.01;
    double frac = 0.1;
};

struct SamSection {
    int epochs = 20;
    double lr = 0.01;
    double rho = 2.0;
};

struct PamSection {
    int iterations = 320;
    double lr = 0.01;
    double momentum = 0.9;
    bool rho_auto = true;   // pick rho from rho_grid by the accuracy-floor rule
    double rho = 0.5;       // used when rho_auto is false
    std::vector<double> rho_grid = {0.25, 0.5, 1.0, 2.0, 4.0};
    double reversed_frac = 0.1;
};

struct InversionSection {
    int steps = 400;
    double lr = 0.5;
    std::vector<double> lambda_grid = {1e-3, 1e-2, 1e-1};
};

struct PurifySection {
    std::string method = "plain"; // plain | ep | sam | pam
    int tune_n = 1000;
    PlainSection plain;
    EpSection ep;
    SamSection sam;
    PamSection pam;
    InversionSection inversion;
};

struct RaSection {
    int n_poison = 5;
    int total = 1000;
    int epochs = 5;
    double lr = 0.01;
    double momentum = 0.9;
};

struct QraSection {
    int hidden = 256;
    double epsilon = 16.0 / 255.0;
    double alpha = 0.2;
    int epochs = 50;
    double lr = 0.1;
    int n_benign = 500;
    int n_poisoned = 500;
};

struct LmcSection {
    int grid = 21;
};

struct ExperimentConfig {
    std::uint64_t seed = 0; // required
    DatasetSection dataset;
    TriggerSection trigger;
    PoisonSection poison;
    TrainSection train;
    PurifySection purify;
    RaSection ra;
    QraSection qra;
    LmcSection lmc;
};

namespace cfgdetail {

// Tracks which keys of one JSON object were consumed so leftovers can be
// reported with their full path.
class Section {
public:
    Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw InvalidInput("config: " + path_ + " must be an object");
    }

    bool has(const char* key) {
        consumed_.insert(key);
        return j_.contains(key);
    }

    const nlohmann::json& raw(const char* key) {
        consumed_.insert(key);
        return j_.at(key);
    }

    std::string child_path(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

    double num(const char* key, double fallback) {
        if (!has(key)) return fallback;
        const auto& v = j_.at(key);
        if (!v.is_number()) throw InvalidInput("config: " + child_path(key) + " must be a number");
        return v.get<double>();
    }

    double required_num(const char* key) {
        if (!has(key)) throw InvalidInput("config: missing required field " + child_path(key));
        const auto& v = j_.at(key);
        if (!v.is_number()) throw InvalidInput("config: " + child_path(key) + " must be a number");
        return v.get<double>();
    }

    int integer(const char* key, int fallback) {
        if (!has(key)) return fallback;
        const auto& v = j_.at(key);
        if (!v.is_number_integer()) throw InvalidInput("config: " + child_path(key) + " must be an integer");
        return v.get<int>();
    }

    std::uint64_t required_u64(const char* key) {
        if (!has(key)) throw InvalidInput("config: missing required field " + child_path(key));
        const auto& v = j_.at(key);
        if (!v.is_number_unsigned() && !v.is_number_integer()) {
            throw InvalidInput("config: " + child_path(key) + " must be an unsigned integer");
        }
        if (v.is_number_integer() && v.get<std::int64_t>() < 0) {
            throw InvalidInput("config: " + child_path(key) + " must be >= 0");
        }
        return v.get<std::uint64_t>();
    }

    std::string text(const char* key, const std::string& fallback) {
        if (!has(key)) return fallback;
        const auto& v = j_.at(key);
        if (!v.is_string()) throw InvalidInput("config: " + child_path(key) + " must be a string");
        return v.get<std::string>();
    }

    bool boolean(const char* key, bool fallback) {
        if (!has(key)) return fallback;
        const auto& v = j_.at(key);
        if (!v.is_boolean()) throw InvalidInput("config: " + child_path(key) + " must be a boolean");
        return v.get<bool>();
    }

    std::vector<double> num_array(const char* key, std::vector<double> fallback) {
        if (!has(key)) return fallback;
        const auto& v = j_.at(key);
        if (!v.is_array() || v.empty()) {
            throw InvalidInput("config: " + child_path(key) + " must be a non-empty array of numbers");
        }
        std::vector<double> out;
        for (const auto& e : v) {
            if (!e.is_number()) throw InvalidInput("config: " + child_path(key) + " must contain only numbers");
            out.push_back(e.get<double>());
        }
        return out;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!consumed_.count(it.key())) {
                throw InvalidInput("config: unknown field " +
                                   (path_.empty() ? it.key() : path_ + "." + it.key()));
            }
        }
    }

private:
    const nlohmann::json& j_;
    std::string path_;
    std::set<std::string> consumed_;
};

inline void check(bool ok, const std::string& msg) {
    if (!ok) throw InvalidInput("config: " + msg);
}

} // namespace cfgdetail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
    using cfgdetail::Section;
    using cfgdetail::check;
    ExperimentConfig cfg;
    Section root(j, "");
    cfg.seed = root.required_u64("seed");

    if (root.has("dataset")) {
        Section s(root.raw("dataset"), "dataset");
        cfg.dataset.h = s.integer("h", cfg.dataset.h);
        cfg.dataset.w = s.integer("w", cfg.dataset.w);
        cfg.dataset.c = s.integer("c", cfg.dataset.c);
        cfg.dataset.classes = s.integer("classes", cfg.dataset.classes);
        cfg.dataset.n_train_per_class = s.integer("n_train_per_class", cfg.dataset.n_train_per_class);
        cfg.dataset.n_test_per_class = s.integer("n_test_per_class", cfg.dataset.n_test_per_class);
        cfg.dataset.noise_sigma = s.num("noise_sigma", cfg.dataset.noise_sigma);
        s.finish();
        check(cfg.dataset.h >= 4 && cfg.dataset.w >= 4, "dataset.h and dataset.w must be >= 4");
        check(cfg.dataset.c >= 1, "dataset.c must be >= 1");
        check(cfg.dataset.classes >= 2, "dataset.classes must be >= 2");
        check(cfg.dataset.n_train_per_class >= 1, "dataset.n_train_per_class must be >= 1");
        check(cfg.dataset.n_test_per_class >= 1, "dataset.n_test_per_class must be >= 1");
        check(cfg.dataset.noise_sigma >= 0.0, "dataset.noise_sigma must be >= 0");
    }

    if (root.has("trigger")) {
        Section s(root.raw("trigger"), "trigger");
        cfg.trigger.kind = s.text("kind", cfg.trigger.kind);
        cfg.trigger.blend_ratio_train = s.num("blend_ratio_train", cfg.trigger.blend_ratio_train);
        cfg.trigger.blend_ratio_eval = s.num("blend_ratio_eval", cfg.trigger.blend_ratio_eval);
        cfg.trigger.anchor_row = s.integer("anchor_row", cfg.trigger.anchor_row);
        cfg.trigger.anchor_col = s.integer("anchor_col", cfg.trigger.anchor_col);
        s.finish();
        check(cfg.trigger.kind == "patch" || cfg.trigger.kind == "blended",
              "trigger.kind must be 'patch' or 'blended'");
        check(cfg.trigger.blend_ratio_train > 0.0 && cfg.trigger.blend_ratio_train < 1.0,
              "trigger.blend_ratio_train must be in (0,1)");
        check(cfg.trigger.blend_ratio_eval > 0.0 && cfg.trigger.blend_ratio_eval < 1.0,
              "trigger.blend_ratio_eval must be in (0,1)");
        check(cfg.trigger.anchor_row >= 0 && cfg.trigger.anchor_col >= 0,
              "trigger anchors must be >= 0");
    }

    {
        if (!root.has("poison")) throw InvalidInput("config: missing required field poison.rate");
        Section s(root.raw("poison"), "poison");
        cfg.poison.rate = s.required_num("rate");
        cfg.poison.target = s.integer("target", cfg.poison.target);
        s.finish();
        check(cfg.poison.rate > 0.0 && cfg.poison.rate < 1.0, "poison.rate must be in (0,1)");
        check(cfg.poison.target >= 0 && cfg.poison.target < cfg.dataset.classes,
              "poison.target must be a valid class index");
    }

    if (root.has("train")) {
        Section s(root.raw("train"), "train");
        cfg.train.epochs = s.integer("epochs", cfg.train.epochs);
        cfg.train.lr = s.num("lr", cfg.train.lr);
        cfg.train.momentum = s.num("momentum", cfg.train.momentum);
        cfg.train.batch = s.integer("batch", cfg.train.batch);
        s.finish();
        check(cfg.train.epochs >= 1, "train.epochs must be >= 1");
        check(cfg.train.lr > 0.0, "train.lr must be > 0");
        check(cfg.train.momentum >= 0.0 && cfg.train.momentum < 1.0, "train.momentum must be in [0,1)");
        check(cfg.train.batch >= 1, "train.batch must be >= 1");
    }

    if (root.has("purify")) {
        Section s(root.raw("purify"), "purify");
        cfg.purify.method = s.text("method", cfg.purify.method);
        cfg.purify.tune_n = s.integer("tune_n", cfg.purify.tune_n);
        check(cfg.purify.method == "plain" || cfg.purify.method == "ep" ||
                  cfg.purify.method == "sam" || cfg.purify.method == "pam",
              "purify.method must be one of plain|ep|sam|pam");
        check(cfg.purify.tune_n >= 1, "purify.tune_n must be >= 1");
        if (s.has("plain")) {
            Section p(s.raw("plain"), "purify.plain");
            cfg.purify.plain.epochs = p.integer("epochs", cfg.purify.plain.epochs);
            cfg.purify.plain.lr = p.num("lr", cfg.purify.plain.lr);
            p.finish();
            check(cfg.purify.plain.epochs >= 1, "purify.plain.epochs must be >= 1");
            check(cfg.purify.plain.lr > 0.0, "purify.plain.lr must be > 0");
        }
        if (s.has("ep")) {
            Section p(s.raw("ep"), "purify.ep");
            cfg.purify.ep.epochs = p.integer("epochs", cfg.purify.ep.epochs);
            cfg.purify.ep.lr = p.num("lr", cfg.purify.ep.lr);
            cfg.purify.ep.frac = p.num("frac", cfg.purify.ep.frac);
            p.finish();
            check(cfg.purify.ep.epochs >= 1, "purify.ep.epochs must be >= 1");
            check(cfg.purify.ep.lr > 0.0, "purify.ep.lr must be > 0");
            check(cfg.purify.ep.frac > 0.0 && cfg.purify.ep.frac < 1.0, "purify.ep.frac must be in (0,1)");
        }
        if (s.has("sam")) {
            Section p(s.raw("sam"), "purify.sam");
            cfg.purify.sam.epochs = p.integer("epochs", cfg.purify.sam.epochs);
            cfg.purify.sam.lr = p.num("lr", cfg.purify.sam.lr);
            cfg.purify.sam.rho = p.num("rho", cfg.purify.sam.rho);
            p.finish();
            check(cfg.purify.sam.epochs >= 1, "purify.sam.epochs must be >= 1");
            check(cfg.purify.sam.lr > 0.0, "purify.sam.lr must be > 0");
            check(cfg.purify.sam.rho > 0.0, "purify.sam.rho must be > 0");
        }
        if (s.has("pam")) {
            Section p(s.raw("pam"), "purify.pam");
            cfg.purify.pam.iterations = p.integer("iterations", cfg.purify.pam.iterations);
            cfg.purify.pam.lr = p.num("lr", cfg.purify.pam.lr);
            cfg.purify.pam.momentum = p.num("momentum", cfg.purify.pam.momentum);
            if (p.has("rho")) {
                const auto& v = p.raw("rho");
                if (v.is_string() && v.get<std::string>() == "auto") {
                    cfg.purify.pam.rho_auto = true;
                } else if (v.is_number()) {
                    cfg.purify.pam.rho_auto = false;
                    cfg.purify.pam.rho = v.get<double>();
                } else {
                    throw InvalidInput("config: purify.pam.rho must be a number or \"auto\"");
                }
            }
            cfg.purify.pam.rho_grid = p.num_array("rho_grid", cfg.purify.pam.rho_grid);
            cfg.purify.pam.reversed_frac = p.num("reversed_frac", cfg.purify.pam.reversed_frac);
            p.finish();
            check(cfg.purify.pam.iterations >= 1, "purify.pam.iterations must be >= 1");
            check(cfg.purify.pam.lr > 0.0, "purify.pam.lr must be > 0");
            check(cfg.purify.pam.momentum >= 0.0 && cfg.purify.pam.momentum < 1.0,
                  "purify.pam.momentum must be in [0,1)");
            check(cfg.purify.pam.rho >= 0.0, "purify.pam.rho must be >= 0");
            for (double r : cfg.purify.pam.rho_grid) check(r >= 0.0, "purify.pam.rho_grid values must be >= 0");
            check(cfg.purify.pam.reversed_frac >= 0.0 && cfg.purify.pam.reversed_frac <= 1.0,
                  "purify.pam.reversed_frac must be in [0,1]");
        }
        if (s.has("inversion")) {
            Section p(s.raw("inversion"), "purify.inversion");
            cfg.purify.inversion.steps = p.integer("steps", cfg.purify.inversion.steps);
            cfg.purify.inversion.lr = p.num("lr", cfg.purify.inversion.lr);
            cfg.purify.inversion.lambda_grid = p.num_array("lambda_grid", cfg.purify.inversion.lambda_grid);
            p.finish();
            check(cfg.purify.inversion.steps >= 1, "purify.inversion.steps must be >= 1");
            check(cfg.purify.inversion.lr > 0.0, "purify.inversion.lr must be > 0");
            for (double l : cfg.purify.inversion.lambda_grid) {
                check(l >= 0.0, "purify.inversion.lambda_grid values must be >= 0");
            }
        }
        s.finish();
    }

    if (root.has("ra")) {
        Section s(root.raw("ra"), "ra");
        cfg.ra.n_poison = s.integer("n_poison", cfg.ra.n_poison);
        cfg.ra.total = s.integer("total", cfg.ra.total);
        cfg.ra.epochs = s.integer("epochs", cfg.ra.epochs);
        cfg.ra.lr = s.num("lr", cfg.ra.lr);
        cfg.ra.momentum = s.num("momentum", cfg.ra.momentum);
        s.finish();
        check(cfg.ra.n_poison >= 1, "ra.n_poison must be >= 1");
        check(cfg.ra.n_poison < cfg.ra.total, "ra.n_poison must be < ra.total");
        check(cfg.ra.epochs >= 1, "ra.epochs must be >= 1");
        check(cfg.ra.lr > 0.0, "ra.lr must be > 0");
        check(cfg.ra.momentum >= 0.0 && cfg.ra.momentum < 1.0, "ra.momentum must be in [0,1)");
    }

    if (root.has("qra")) {
        Section s(root.raw("qra"), "qra");
        cfg.qra.hidden = s.integer("hidden", cfg.qra.hidden);
        cfg.qra.epsilon = s.num("epsilon", cfg.qra.epsilon);
        cfg.qra.alpha = s.num("alpha", cfg.qra.alpha);
        cfg.qra.epochs = s.integer("epochs", cfg.qra.epochs);
        cfg.qra.lr = s.num("lr", cfg.qra.lr);
        cfg.qra.n_benign = s.integer("n_benign", cfg.qra.n_benign);
        cfg.qra.n_poisoned = s.integer("n_poisoned", cfg.qra.n_poisoned);
        s.finish();
        check(cfg.qra.hidden >= 1, "qra.hidden must be >= 1");
        check(cfg.qra.epsilon > 0.0, "qra.epsilon must be > 0");
        check(cfg.qra.alpha >= 0.0, "qra.alpha must be >= 0");
        check(cfg.qra.epochs >= 1, "qra.epochs must be >= 1");
        check(cfg.qra.lr > 0.0, "qra.lr must be > 0");
        check(cfg.qra.n_benign >= 1 && cfg.qra.n_poisoned >= 1,
              "qra.n_benign and qra.n_poisoned must be >= 1");
    }

    if (root.has("lmc")) {
        Section s(root.raw("lmc"), "lmc");
        cfg.lmc.grid = s.integer("grid", cfg.lmc.grid);
        s.finish();
        check(cfg.lmc.grid >= 2, "lmc.grid must be >= 2");
    }

    root.finish();
    return cfg;
}

inline ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InvalidInput("config: cannot open " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput("config: " + path + " is not valid JSON: " + e.what());
    }
    return parse_config(j);
}

// Canonical resolved form: every field explicit, keys sorted by nlohmann's
// object ordering, so hashing is stable.
inline nlohmann::json config_to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["seed"] = c.seed;
    j["dataset"] = {{"h", c.dataset.h},
                    {"w", c.dataset.w},
                    {"c", c.dataset.c},
                    {"classes", c.dataset.classes},
                    {"n_train_per_class", c.dataset.n_train_per_class},
                    {"n_test_per_class", c.dataset.n_test_per_class},
                    {"noise_sigma", c.dataset.noise_sigma}};
    j["trigger"] = {{"kind", c.trigger.kind},
                    {"blend_ratio_train", c.trigger.blend_ratio_train},
                    {"blend_ratio_eval", c.trigger.blend_ratio_eval},
                    {"anchor_row", c.trigger.anchor_row},
                    {"anchor_col", c.trigger.anchor_col}};
    j["poison"] = {{"rate", c.poison.rate}, {"target", c.poison.target}};
    j["train"] = {{"epochs", c.train.epochs},
                  {"lr", c.train.lr},
                  {"momentum", c.train.momentum},
                  {"batch", c.train.batch}};
    j["purify"] = {{"method", c.purify.method},
                   {"tune_n", c.purify.tune_n},
                   {"plain", {{"epochs", c.purify.plain.epochs}, {"lr", c.purify.plain.lr}}},
                   {"ep",
                    {{"epochs", c.purify.ep.epochs},
                     {"lr", c.purify.ep.lr},
                     {"frac", c.purify.ep.frac}}},
                   {"sam",
                    {{"epochs", c.purify.sam.epochs},
                     {"lr", c.purify.sam.lr},
                     {"rho", c.purify.sam.rho}}},
                   {"pam",
                    {{"iterations", c.purify.pam.iterations},
                     {"lr", c.purify.pam.lr},
                     {"momentum", c.purify.pam.momentum},
                     {"rho_auto", c.purify.pam.rho_auto},
                     {"rho", c.purify.pam.rho},
                     {"rho_grid", c.purify.pam.rho_grid},
                     {"reversed_frac", c.purify.pam.reversed_frac}}},
                   {"inversion",
                    {{"steps", c.purify.inversion.steps},
                     {"lr", c.purify.inversion.lr},
                     {"lambda_grid", c.purify.inversion.lambda_grid}}}};
    j["ra"] = {{"n_poison", c.ra.n_poison},
               {"total", c.ra.total},
               {"epochs", c.ra.epochs},
               {"lr", c.ra.lr},
               {"momentum", c.ra.momentum}};
    j["qra"] = {{"hidden", c.qra.hidden},
                {"epsilon", c.qra.epsilon},
                {"alpha", c.qra.alpha},
                {"epochs", c.qra.epochs},
                {"lr", c.qra.lr},
                {"n_benign", c.qra.n_benign},
                {"n_poisoned", c.qra.n_poisoned}};
    j["lmc"] = {{"grid", c.lmc.grid}};
    return j;
}

// Hash of the full resolved config; embedded in reports.
inline std::string config_hash(const ExperimentConfig& c) {
    return fnv1a_hex(config_to_json(c).dump());
}

// Hash of the sections that determine model lineage (data, trigger, poison,
// training). Checkpoints record this one, so purify/attack accept any
// checkpoint grown from the same backdoor run even if tuner settings differ.
inline std::string lineage_hash(const ExperimentConfig& c) {
    nlohmann::json j = config_to_json(c);
    nlohmann::json lineage;
    lineage["seed"] = j["seed"];
    lineage["dataset"] = j["dataset"];
    lineage["trigger"] = j["trigger"];
    lineage["poison"] = j["poison"];
    lineage["train"] = j["train"];
    return fnv1a_hex(lineage.dump());
}

} // namespace bprl
