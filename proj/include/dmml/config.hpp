/* Copyright 2026 The dmml-sim Authors.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

// Experiment configuration. Files are JSON; every key is optional and
// unknown keys are rejected. See README.md for the full key reference.

#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dmml/data.hpp"
#include "dmml/losses.hpp"
#include "dmml/model.hpp"
#include "dmml/nn.hpp"
#include "dmml/resource.hpp"
#include "dmml/wireless.hpp"

namespace dmml {

struct TrainingParams {
    std::size_t batch_size = 32;
    std::size_t local_epochs = 1;
    int generator_iterations = 50;  // N-hat
    std::size_t generator_batch = 32;
    std::size_t kd_samples = 1;     // Monte-Carlo draws per (datum, modality)
};

struct OptimizerParams {
    OptimizerKind kind = OptimizerKind::adam;
    double model_lr = 5e-4;
    double generator_lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Optional replacements for the derived FLOP and payload profiles.
struct ProfileOverrides {
    std::optional<std::vector<double>> flops_modality;
    std::optional<double> flops_common;
    std::optional<double> flops_bias;
    std::optional<double> flops_gen_forward;
    std::optional<double> flops_gen_train;
    std::optional<std::vector<double>> payload_modality;
    std::optional<double> payload_common;
};

struct ExperimentConfig {
    RunMode mode = RunMode::dmml_kd_balance;
    std::size_t devices = 12;
    int rounds = 80;
    double gamma = 1.0;
    LabelSkew phi = LabelSkew::make_iid();
    std::uint64_t seed = 1;
    std::size_t threads = 1;
    std::string output_dir = "runs/default";
    int checkpoint_every = 0;
    bool plots = true;

    ModelShape model;
    LossWeights loss;
    OptimizerParams optimizer;
    TrainingParams training;
    DeviceHardware hardware;
    double auto_budget_fraction = 0.8;
    WirelessParams wireless;
    SyntheticSpec data;
    ProfileOverrides overrides;

    RadioParams radio() const { return {wireless.bandwidth_hz, wireless.noise_w_per_hz}; }
    std::string phi_label() const { return phi.iid ? "iid" : format_double(phi.dominant_fraction); }

    void validate() const {
        if (devices < 2) throw ConfigError("devices: must be >= 2");
        if (rounds < 0) throw ConfigError("rounds: must be >= 0");
        if (!(gamma == 1.0 || gamma == 0.5 || gamma == 0.0)) throw ConfigError("gamma: allowed values are 1, 0.5, 0");
        if (gamma == 0.5 && devices % 4 != 0) throw ConfigError("gamma: 0.5 requires devices divisible by 4");
        if (gamma == 0.0 && devices % 2 != 0) throw ConfigError("gamma: 0 requires an even number of devices");
        if (!phi.iid && !(phi.dominant_fraction > 0.0 && phi.dominant_fraction <= 1.0))
            throw ConfigError("phi: must be \"iid\" or a fraction in (0, 1]");
        if (threads == 0) throw ConfigError("threads: must be >= 1");
        if (checkpoint_every < 0) throw ConfigError("checkpoint_every: must be >= 0");
        if (data.input_dims.size() != 2) throw ConfigError("data.input_dims: exactly two modalities are supported");
        data.validate();
        if (model.hidden == 0 || model.common_len == 0 || model.noise_dim == 0 || model.gen_hidden == 0)
            throw ConfigError("model: layer sizes must be > 0");
        for (double a : {loss.sim, loss.cls, loss.dif, loss.kd, loss.beta})
            if (!(a >= 0.0) || !std::isfinite(a)) throw ConfigError("loss: weights must be finite and >= 0");
        if (!(optimizer.model_lr > 0.0) || !(optimizer.generator_lr > 0.0))
            throw ConfigError("optimizer: learning rates must be > 0");
        if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) || !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0))
            throw ConfigError("optimizer: beta1 and beta2 must lie in [0, 1)");
        if (!(optimizer.eps > 0.0)) throw ConfigError("optimizer.eps: must be > 0");
        if (training.batch_size == 0) throw ConfigError("training.batch_size: must be > 0");
        if (training.local_epochs == 0) throw ConfigError("training.local_epochs: must be > 0");
        if (training.generator_iterations < 0) throw ConfigError("training.generator_iterations: must be >= 0");
        if (training.generator_batch == 0) throw ConfigError("training.generator_batch: must be > 0");
        if (training.kd_samples == 0) throw ConfigError("training.kd_samples: must be > 0");
        for (double v : {hardware.cpu_hz, hardware.flops_per_cycle, hardware.capacitance, hardware.tx_power_w})
            if (!(v > 0.0)) throw ConfigError("hardware: constants must be > 0");
        if (hardware.initial_energy_j < 0.0) throw ConfigError("hardware.initial_energy_j: must be >= 0");
        if (!(auto_budget_fraction > 0.0)) throw ConfigError("hardware.auto_budget_fraction: must be > 0");
        for (double v : {wireless.diameter_m, wireless.range_m, wireless.carrier_ghz, wireless.bandwidth_hz,
                         wireless.noise_w_per_hz})
            if (!(v > 0.0)) throw ConfigError("wireless: constants must be > 0");
        if (overrides.flops_modality && overrides.flops_modality->size() != data.input_dims.size())
            throw ConfigError("overrides.flops_modality: one entry per modality required");
        if (overrides.payload_modality && overrides.payload_modality->size() != data.input_dims.size())
            throw ConfigError("overrides.payload_modality: one entry per modality required");
    }

    FlopsProfile flops() const {
        const bool gen = uses_generator(mode);
        FlopsProfile f = flops_profile(model, training.batch_size, training.generator_batch, training.kd_samples, gen);
        if (overrides.flops_modality)
            for (std::size_t i = 0; i < overrides.flops_modality->size(); ++i)
                f.modality[static_cast<int>(i) + 1] = (*overrides.flops_modality)[i];
        if (overrides.flops_common) f.common = *overrides.flops_common;
        if (overrides.flops_bias) f.bias = *overrides.flops_bias;
        if (gen && overrides.flops_gen_forward) f.gen_forward = *overrides.flops_gen_forward;
        if (gen && overrides.flops_gen_train) f.gen_train = *overrides.flops_gen_train;
        return f;
    }

    PayloadProfile payload() const {
        PayloadProfile p = payload_profile(model, uses_generator(mode));
        if (overrides.payload_modality)
            for (std::size_t i = 0; i < overrides.payload_modality->size(); ++i)
                p.modality_bits[static_cast<int>(i) + 1] = (*overrides.payload_modality)[i];
        if (overrides.payload_common) p.common_bits = *overrides.payload_common;
        return p;
    }
};

namespace detail {

using nlohmann::json;

class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where("") + ": expected an object");
    }
    ~Section() noexcept(false) {
        if (std::uncaught_exceptions() > 0) return;
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError(where(it.key()) + ": unknown key");
    }

    const json* get(const std::string& key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void number(const std::string& key, double& out) {
        if (auto* v = get(key)) {
            if (!v->is_number()) throw ConfigError(where(key) + ": expected a number");
            out = v->get<double>();
        }
    }
    template <class Int>
    void integer(const std::string& key, Int& out, long long min_value) {
        if (auto* v = get(key)) {
            if (!v->is_number_integer()) throw ConfigError(where(key) + ": expected an integer");
            const long long x = v->get<long long>();
            if (x < min_value)
                throw ConfigError(where(key) + ": must be >= " + std::to_string(min_value));
            out = static_cast<Int>(x);
        }
    }
    void boolean(const std::string& key, bool& out) {
        if (auto* v = get(key)) {
            if (!v->is_boolean()) throw ConfigError(where(key) + ": expected true or false");
            out = v->get<bool>();
        }
    }
    void text(const std::string& key, std::string& out) {
        if (auto* v = get(key)) {
            if (!v->is_string()) throw ConfigError(where(key) + ": expected a string");
            out = v->get<std::string>();
        }
    }
    template <class T>
    void number_list(const std::string& key, std::vector<T>& out) {
        if (auto* v = get(key)) {
            if (!v->is_array()) throw ConfigError(where(key) + ": expected an array");
            out.clear();
            for (const auto& e : *v) {
                if (!e.is_number()) throw ConfigError(where(key) + ": expected numbers");
                out.push_back(e.get<T>());
            }
        }
    }
    void optional_number(const std::string& key, std::optional<double>& out) {
        if (auto* v = get(key)) {
            if (!v->is_number()) throw ConfigError(where(key) + ": expected a number");
            out = v->get<double>();
        }
    }
    void optional_list(const std::string& key, std::optional<std::vector<double>>& out) {
        if (get(key)) {
            std::vector<double> vals;
            number_list(key, vals);
            out = vals;
        }
    }
    std::string where(const std::string& key) const {
        if (key.empty()) return path_.empty() ? "config" : path_;
        return path_.empty() ? key : path_ + "." + key;
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& root) {
    using detail::Section;
    ExperimentConfig c;
    {
        Section s(root, "");
        std::string mode = to_string(c.mode);
        s.text("mode", mode);
        c.mode = parse_mode(mode);
        s.integer("devices", c.devices, 2);
        s.integer("rounds", c.rounds, 0);
        s.number("gamma", c.gamma);
        if (auto* v = s.get("phi")) {
            if (v->is_string() && v->get<std::string>() == "iid") c.phi = LabelSkew::make_iid();
            else if (v->is_number()) c.phi = LabelSkew::dominant(v->get<double>());
            else throw ConfigError("phi: expected \"iid\" or a number");
        }
        s.integer("seed", c.seed, 0);
        s.integer("threads", c.threads, 1);
        s.text("output_dir", c.output_dir);
        s.integer("checkpoint_every", c.checkpoint_every, 0);
        s.boolean("plots", c.plots);

        if (auto* v = s.get("model")) {
            Section m(*v, "model");
            m.integer("hidden", c.model.hidden, 1);
            m.integer("common_len", c.model.common_len, 1);
            m.integer("noise_dim", c.model.noise_dim, 1);
            m.integer("gen_hidden", c.model.gen_hidden, 1);
        }
        if (auto* v = s.get("loss")) {
            Section l(*v, "loss");
            l.number("alpha1", c.loss.sim);
            l.number("alpha2", c.loss.cls);
            l.number("alpha3", c.loss.dif);
            l.number("alpha4", c.loss.kd);
            l.number("beta", c.loss.beta);
        }
        if (auto* v = s.get("optimizer")) {
            Section o(*v, "optimizer");
            std::string kind = c.optimizer.kind == OptimizerKind::adam ? "adam" : "sgd";
            o.text("kind", kind);
            if (kind == "adam") c.optimizer.kind = OptimizerKind::adam;
            else if (kind == "sgd") c.optimizer.kind = OptimizerKind::sgd;
            else throw ConfigError("optimizer.kind: expected adam or sgd");
            o.number("model_lr", c.optimizer.model_lr);
            o.number("generator_lr", c.optimizer.generator_lr);
            o.number("beta1", c.optimizer.beta1);
            o.number("beta2", c.optimizer.beta2);
            o.number("eps", c.optimizer.eps);
        }
        if (auto* v = s.get("training")) {
            Section t(*v, "training");
            t.integer("batch_size", c.training.batch_size, 1);
            t.integer("local_epochs", c.training.local_epochs, 1);
            t.integer("generator_iterations", c.training.generator_iterations, 0);
            t.integer("generator_batch", c.training.generator_batch, 1);
            t.integer("kd_samples", c.training.kd_samples, 1);
        }
        if (auto* v = s.get("hardware")) {
            Section h(*v, "hardware");
            h.number("cpu_hz", c.hardware.cpu_hz);
            h.number("flops_per_cycle", c.hardware.flops_per_cycle);
            h.number("capacitance", c.hardware.capacitance);
            h.number("tx_power_w", c.hardware.tx_power_w);
            h.number("initial_energy_j", c.hardware.initial_energy_j);
            h.number("auto_budget_fraction", c.auto_budget_fraction);
        }
        if (auto* v = s.get("wireless")) {
            Section w(*v, "wireless");
            w.number("diameter_m", c.wireless.diameter_m);
            w.number("range_m", c.wireless.range_m);
            w.number("carrier_ghz", c.wireless.carrier_ghz);
            w.number("bandwidth_hz", c.wireless.bandwidth_hz);
            double dbm = 10.0 * std::log10(c.wireless.noise_w_per_hz) + 30.0;
            w.number("noise_dbm_per_hz", dbm);
            c.wireless.noise_w_per_hz = std::pow(10.0, (dbm - 30.0) / 10.0);
            w.integer("max_placement_retries", c.wireless.max_placement_retries, 1);
        }
        bool data_seed_set = false;
        if (auto* v = s.get("data")) {
            Section d(*v, "data");
            d.integer("classes", c.data.classes, 2);
            d.integer("latent_dim", c.data.latent_dim, 1);
            d.number_list("input_dims", c.data.input_dims);
            d.number("shared_sigma", c.data.shared_sigma);
            d.number("noise_sigma", c.data.noise_sigma);
            d.number("prototype_scale", c.data.prototype_scale);
            d.number_list("modality_gain", c.data.modality_gain);
            d.integer("train_per_class", c.data.train_per_class, 1);
            d.integer("test_per_class", c.data.test_per_class, 1);
            if (d.get("seed")) {
                d.integer("seed", c.data.seed, 0);
                data_seed_set = true;
            }
        }
        if (!data_seed_set) c.data.seed = c.seed;
        if (auto* v = s.get("overrides")) {
            Section o(*v, "overrides");
            o.optional_list("flops_modality", c.overrides.flops_modality);
            o.optional_number("flops_common", c.overrides.flops_common);
            o.optional_number("flops_bias", c.overrides.flops_bias);
            o.optional_number("flops_gen_forward", c.overrides.flops_gen_forward);
            o.optional_number("flops_gen_train", c.overrides.flops_gen_train);
            o.optional_list("payload_modality", c.overrides.payload_modality);
            o.optional_number("payload_common", c.overrides.payload_common);
        }
    }
    c.model.classes = c.data.classes;
    c.model.input_dims = c.data.input_dims;
    c.validate();
    return c;
}

inline ExperimentConfig config_from_string(const std::string& text) {
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) return config_from_json(nlohmann::json::object());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    return config_from_json(j);
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_string(ss.str());
}

// Pins the seed everywhere it propagates (master and data).
inline void set_seed(ExperimentConfig& c, std::uint64_t seed) {
    c.seed = seed;
    c.data.seed = seed;
}

}  // namespace dmml
