#ifndef RSONET_CONFIG_HPP
#define RSONET_CONFIG_HPP

// Run configuration: JSON round-trip for the model/training knobs exposed by
// the command-line tools. Unknown keys are rejected so typos fail loudly.

#include <json.hpp>

#include <fstream>
#include <string>

#include "rsonet/model.hpp"

namespace rsonet {

struct TrainConfig {
    double lr = 1e-4;
    double momentum = 0.9;
    std::string optimizer = "rmsprop";
    int batch_size = 4;
    int steps = 200;
    std::uint64_t seed = 1;
    int eval_every = 50;          // 0 disables periodic eval
    double guidance_weight = 1.0;
    bool hflip = false;

    void validate() const {
        if (!(lr > 0)) throw ConfigError("lr must be positive");
        if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must be in [0,1)");
        if (optimizer != "rmsprop")
            throw ConfigError("unknown optimizer '" + optimizer + "' (supported: rmsprop)");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (steps < 0) throw ConfigError("steps must be >= 0");
        if (eval_every < 0) throw ConfigError("eval_every must be >= 0");
        if (guidance_weight < 0) throw ConfigError("guidance_weight must be >= 0");
    }
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;

    void validate() const {
        model.validate();
        train.validate();
    }
};

namespace config_detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys,
                           const std::string& where) {
    for (const auto& [key, _] : j.items()) {
        bool known = false;
        for (const char* k : keys)
            if (key == k) known = true;
        if (!known) throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

}  // namespace config_detail

inline nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json j;
    j["model"]["input_size"] = c.model.backbone.input_size;
    j["model"]["stage_channels"] = c.model.backbone.stage_channels;
    j["model"]["state_dim"] = c.model.state_dim;
    j["model"]["ablation"] = ablation_name(c.model.ablation);
    j["train"]["lr"] = c.train.lr;
    j["train"]["momentum"] = c.train.momentum;
    j["train"]["optimizer"] = c.train.optimizer;
    j["train"]["batch_size"] = c.train.batch_size;
    j["train"]["steps"] = c.train.steps;
    j["train"]["seed"] = c.train.seed;
    j["train"]["eval_every"] = c.train.eval_every;
    j["train"]["guidance_weight"] = c.train.guidance_weight;
    j["train"]["hflip"] = c.train.hflip;
    return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig c;
    config_detail::reject_unknown(j, {"model", "train"}, "config root");
    if (j.contains("model")) {
        const nlohmann::json& m = j.at("model");
        config_detail::reject_unknown(m, {"input_size", "stage_channels", "state_dim", "ablation"},
                                      "model");
        if (m.contains("input_size")) c.model.backbone.input_size = m.at("input_size").get<int>();
        if (m.contains("stage_channels")) {
            const auto v = m.at("stage_channels").get<std::vector<int>>();
            if (v.size() != 5) throw ConfigError("stage_channels must list 5 values");
            for (int i = 0; i < 5; ++i)
                c.model.backbone.stage_channels[static_cast<std::size_t>(i)] =
                    v[static_cast<std::size_t>(i)];
        }
        if (m.contains("state_dim")) c.model.state_dim = m.at("state_dim").get<int>();
        if (m.contains("ablation"))
            c.model.ablation = parse_ablation(m.at("ablation").get<std::string>());
    }
    if (j.contains("train")) {
        const nlohmann::json& t = j.at("train");
        config_detail::reject_unknown(t,
                                      {"lr", "momentum", "optimizer", "batch_size", "steps",
                                       "seed", "eval_every", "guidance_weight", "hflip"},
                                      "train");
        if (t.contains("lr")) c.train.lr = t.at("lr").get<double>();
        if (t.contains("momentum")) c.train.momentum = t.at("momentum").get<double>();
        if (t.contains("optimizer")) c.train.optimizer = t.at("optimizer").get<std::string>();
        if (t.contains("batch_size")) c.train.batch_size = t.at("batch_size").get<int>();
        if (t.contains("steps")) c.train.steps = t.at("steps").get<int>();
        if (t.contains("seed")) c.train.seed = t.at("seed").get<std::uint64_t>();
        if (t.contains("eval_every")) c.train.eval_every = t.at("eval_every").get<int>();
        if (t.contains("guidance_weight"))
            c.train.guidance_weight = t.at("guidance_weight").get<double>();
        if (t.contains("hflip")) c.train.hflip = t.at("hflip").get<bool>();
    }
    c.validate();
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config parse failure in " + path + ": " + e.what());
    }
    return run_config_from_json(j);
}

}  // namespace rsonet

#endif
