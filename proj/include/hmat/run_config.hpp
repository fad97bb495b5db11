#pragma once

// JSON run configuration:
//
//   { "model": { "preset": "full"|"toy", "style_preset": "Baseline", "window": 8,
//                "channels": [64,128,180], "blocks": 5, "heads": 8 },
//     "train": { "lr": 2e-3, "batch": 4, "steps": 0, "seed": 0,
//                "lambda_l1": 1, "lambda_adv": 0, "lambda_r1": 0, "lambda_perc": 0,
//                "checkpoint_interval": 0, "loss_region": "missing"|"full" },
//     "data":  { "paths": ["patches/"], "bands": ["moderate","severe"],
//                "synthetic": { "count": 200, "size": 32, "seed": 1 } } }
//
// Every key is optional; unknown keys are rejected.

#include "json.hpp"

#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hmat/config.hpp"
#include "hmat/errors.hpp"
#include "hmat/train.hpp"

namespace hmat {

struct SyntheticData {
    std::size_t count = 200;
    std::size_t size = 32;
    std::uint64_t seed = 1;
};

struct DataConfig {
    std::vector<std::string> paths;
    std::vector<std::string> bands{"moderate", "severe"};
    std::optional<SyntheticData> synthetic;

    double severe_fraction() const {
        bool mod = false, sev = false;
        for (const auto& b : bands) {
            if (b == "moderate") mod = true;
            else if (b == "severe") sev = true;
            else throw ConfigError("unknown band '" + b + "' (moderate|severe)");
        }
        if (!mod && !sev) throw ConfigError("data.bands must name at least one band");
        return mod && sev ? 0.5 : (sev ? 1.0 : 0.0);
    }
};

struct RunConfig {
    ModelConfig model = ModelConfig::full();
    TrainConfig train;
    DataConfig data;
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::string& where, std::set<std::string> allowed) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

template <typename V>
V get_as(const nlohmann::json& j, const std::string& key, const std::string& where) {
    try {
        return j.at(key).get<V>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
    using detail::get_as;
    detail::reject_unknown(j, "config", {"model", "train", "data"});
    RunConfig rc;

    const auto m = j.value("model", nlohmann::json::object());
    detail::reject_unknown(m, "model", {"preset", "style_preset", "window", "channels", "blocks", "heads"});
    const auto preset = m.contains("preset") ? get_as<std::string>(m, "preset", "model") : "full";
    const auto style = m.contains("style_preset") ? get_as<std::string>(m, "style_preset", "model") : "Baseline";
    if (preset == "full") rc.model = ModelConfig::full(style);
    else if (preset == "toy") rc.model = ModelConfig::toy(style);
    else throw ConfigError("model.preset must be 'full' or 'toy', got '" + preset + "'");
    if (m.contains("window")) rc.model.window = get_as<std::size_t>(m, "window", "model");
    if (m.contains("blocks")) rc.model.blocks = get_as<std::size_t>(m, "blocks", "model");
    if (m.contains("heads")) rc.model.heads = get_as<std::size_t>(m, "heads", "model");
    if (m.contains("channels")) {
        const auto ch = get_as<std::vector<std::size_t>>(m, "channels", "model");
        if (ch.size() != 3) throw ConfigError("model.channels must list exactly 3 values");
        rc.model.channels = {ch[0], ch[1], ch[2]};
    }
    rc.model.validate();

    const auto t = j.value("train", nlohmann::json::object());
    detail::reject_unknown(t, "train", {"lr", "batch", "steps", "seed", "lambda_l1", "lambda_adv", "lambda_r1",
                                        "lambda_perc", "checkpoint_interval", "loss_region"});
    auto& tc = rc.train;
    tc.batch = preset == "toy" ? 8 : 4;
    if (t.contains("lr")) tc.lr = get_as<double>(t, "lr", "train");
    if (t.contains("batch")) tc.batch = get_as<std::size_t>(t, "batch", "train");
    if (t.contains("steps")) tc.steps = get_as<std::size_t>(t, "steps", "train");
    if (t.contains("seed")) tc.seed = get_as<std::uint64_t>(t, "seed", "train");
    if (t.contains("lambda_l1")) tc.lambda_l1 = get_as<double>(t, "lambda_l1", "train");
    if (t.contains("lambda_adv")) tc.lambda_adv = get_as<double>(t, "lambda_adv", "train");
    if (t.contains("lambda_r1")) tc.lambda_r1 = get_as<double>(t, "lambda_r1", "train");
    if (t.contains("lambda_perc")) tc.lambda_perc = get_as<double>(t, "lambda_perc", "train");
    if (t.contains("checkpoint_interval"))
        tc.checkpoint_interval = get_as<std::size_t>(t, "checkpoint_interval", "train");
    if (t.contains("loss_region")) {
        const auto r = get_as<std::string>(t, "loss_region", "train");
        if (r == "missing") tc.loss_region = metrics::Region::Missing;
        else if (r == "full") tc.loss_region = metrics::Region::Full;
        else throw ConfigError("train.loss_region must be 'missing' or 'full'");
    }

    const auto d = j.value("data", nlohmann::json::object());
    detail::reject_unknown(d, "data", {"paths", "bands", "synthetic"});
    if (d.contains("paths")) rc.data.paths = get_as<std::vector<std::string>>(d, "paths", "data");
    if (d.contains("bands")) rc.data.bands = get_as<std::vector<std::string>>(d, "bands", "data");
    if (d.contains("synthetic")) {
        const auto& s = d.at("synthetic");
        detail::reject_unknown(s, "data.synthetic", {"count", "size", "seed"});
        SyntheticData sd;
        if (s.contains("count")) sd.count = get_as<std::size_t>(s, "count", "data.synthetic");
        if (s.contains("size")) sd.size = get_as<std::size_t>(s, "size", "data.synthetic");
        if (s.contains("seed")) sd.seed = get_as<std::uint64_t>(s, "seed", "data.synthetic");
        rc.data.synthetic = sd;
    }
    tc.severe_fraction = rc.data.severe_fraction();
    tc.validate();
    return rc;
}

inline RunConfig parse_run_config(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return parse_run_config(j);
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config '" + path + "'");
    return parse_run_config(std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()));
}

}  // namespace hmat
