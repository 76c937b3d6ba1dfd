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

// FLOP counting, per-round device energy and the remaining-energy ledger.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <vector>

#include "dmml/model.hpp"
#include "dmml/nn.hpp"
#include "dmml/wireless.hpp"

namespace dmml {

struct DeviceHardware {
    double cpu_hz = 1e9;            // f_k
    double flops_per_cycle = 4.0;   // e_k
    double capacitance = 2e-28;     // effective switched capacitance
    double tx_power_w = 0.1;        // p_k
    double initial_energy_j = 0.0;  // 0 selects the automatic budget

    double energy_per_flop() const { return capacitance * cpu_hz * cpu_hz / flops_per_cycle; }
};

// FLOPs per local iteration (FP + BP unless noted).
struct FlopsProfile {
    std::map<int, double> modality;  // extractor + specific classifier
    double common = 0.0;             // common classifier
    double bias = 0.0;
    double gen_forward = 0.0;        // generator FP used by distillation
    double gen_train = 0.0;          // generator FP + BP
};

// Bits sent per neighbor.
struct PayloadProfile {
    std::map<int, double> modality_bits;  // extractor + specific classifier
    double common_bits = 0.0;             // common classifier + bias (+ generator)
};

inline double dense_fp_flops(std::size_t in, std::size_t out) { return 2.0 * static_cast<double>(in * out); }

inline double generator_fp_flops(const ModelShape& s) {
    return dense_fp_flops(s.noise_dim + s.classes, s.gen_hidden) + dense_fp_flops(s.gen_hidden, s.common_len);
}

// FP of a dense layer costs 2*in*out per sample; FP + BP is counted as 3x FP.
inline FlopsProfile flops_profile(const ModelShape& s, std::size_t batch, std::size_t gen_batch,
                                  std::size_t kd_samples, bool with_generator) {
    const double b = static_cast<double>(batch);
    FlopsProfile f;
    for (std::size_t i = 0; i < s.modality_count(); ++i) {
        const int m = static_cast<int>(i) + 1;
        const double fp = dense_fp_flops(s.input_dim(m), s.hidden) + dense_fp_flops(s.hidden, 2 * s.common_len) +
                          dense_fp_flops(s.common_len, s.classes);
        f.modality[m] = 3.0 * b * fp;
    }
    f.common = 3.0 * b * dense_fp_flops(s.common_len, s.classes);
    f.bias = 3.0 * b * static_cast<double>(s.classes);
    if (with_generator) {
        f.gen_forward = b * static_cast<double>(kd_samples) * generator_fp_flops(s);
        f.gen_train = 3.0 * static_cast<double>(gen_batch) * generator_fp_flops(s);
    }
    return f;
}

inline double parameter_count(const std::vector<const ParamBlock*>& blocks) {
    double n = 0.0;
    for (auto* p : blocks) n += static_cast<double>(p->size());
    return n;
}

// 64 bits per parameter.
inline PayloadProfile payload_profile(const ModelShape& s, bool with_generator) {
    const DeviceModel probe = [&] {
        std::vector<int> all;
        for (std::size_t i = 0; i < s.modality_count(); ++i) all.push_back(static_cast<int>(i) + 1);
        return make_device_model(s, all, 0);
    }();
    PayloadProfile p;
    for (const auto& [m, b] : probe.branches) p.modality_bits[m] = 64.0 * parameter_count(b.blocks());
    p.common_bits = 64.0 * parameter_count(probe.head.blocks());
    if (with_generator) p.common_bits += 64.0 * parameter_count(probe.generator.blocks());
    return p;
}

// Reference-scale constants for a two-modality network with ResNet-18 class
// extractors (FLOPs per iteration and payload bits). The bias term is not
// part of the reference set and is taken from the desk-scale profile.
inline FlopsProfile reference_flops_profile(const FlopsProfile& desk, bool with_generator) {
    FlopsProfile f;
    f.modality = {{1, 5.73e10}, {2, 5.82e10}};
    f.common = 4.92e4;
    f.bias = desk.bias;
    if (with_generator) {
        f.gen_forward = 2.7e6;
        f.gen_train = 5.4e6;
    }
    return f;
}

inline PayloadProfile reference_payload_profile() {
    PayloadProfile p;
    p.modality_bits = {{1, 8.94e7}, {2, 8.95e7}};
    p.common_bits = 1.35e6;
    return p;
}

// Work a device performs in one round.
struct RoundWork {
    std::map<int, int> iterations;  // N^m per owned modality
    int max_iterations = 0;         // N_max
    int generator_iterations = 0;   // N-hat (0 when no generator)
};

// Channel gains from a device to the neighbors it transmits to.
struct LinkSet {
    std::map<int, std::vector<double>> modality;  // per owned modality, gains to modality neighbors
    std::vector<double> common;                   // gains to all neighbors
};

struct RadioParams {
    double bandwidth_hz = 5e5;
    double noise_w_per_hz = 1e-17;
};

struct EnergyBreakdown {
    double computation = 0.0;
    double communication = 0.0;
    double total() const { return computation + communication; }
};

inline double compute_energy(const RoundWork& w, const FlopsProfile& f, const DeviceHardware& hw) {
    double flops = 0.0;
    for (const auto& [m, n] : w.iterations) flops += static_cast<double>(n) * (f.modality.at(m) + f.common);
    flops += static_cast<double>(w.max_iterations) * (f.bias + f.gen_forward);
    flops += static_cast<double>(w.generator_iterations) * f.gen_train;
    return hw.energy_per_flop() * flops;
}

inline double transmit_energy(double bits, double gain, const DeviceHardware& hw, const RadioParams& radio) {
    const double rate = link_rate(gain, hw.tx_power_w, radio.bandwidth_hz, radio.noise_w_per_hz);
    if (!(rate > 0.0)) throw SimulationError("link unusable: zero transmission rate");
    return hw.tx_power_w * bits / rate;
}

inline double communication_energy(const LinkSet& links, const PayloadProfile& p, const DeviceHardware& hw,
                                   const RadioParams& radio) {
    double e = 0.0;
    for (const auto& [m, gains] : links.modality)
        for (double g : gains) e += transmit_energy(p.modality_bits.at(m), g, hw, radio);
    for (double g : links.common) e += transmit_energy(p.common_bits, g, hw, radio);
    return e;
}

inline EnergyBreakdown round_energy(const RoundWork& w, const FlopsProfile& f, const PayloadProfile& p,
                                    const DeviceHardware& hw, const RadioParams& radio, const LinkSet& links) {
    return {compute_energy(w, f, hw), communication_energy(links, p, hw, radio)};
}

struct IterationBudget {
    int max_iterations = 0;
    bool exhausted = false;
};

// Largest N in [0, nominal] with N * per_iteration + fixed <= remaining.
inline IterationBudget max_iterations(double remaining, double fixed_cost, double per_iteration, int nominal) {
    if (fixed_cost > remaining) return {0, true};
    if (static_cast<double>(nominal) * per_iteration + fixed_cost <= remaining) return {nominal, false};
    int n = per_iteration > 0.0 ? static_cast<int>(std::floor((remaining - fixed_cost) / per_iteration)) : nominal;
    n = std::clamp(n, 0, nominal);
    while (n < nominal && static_cast<double>(n + 1) * per_iteration + fixed_cost <= remaining) ++n;
    while (n > 0 && static_cast<double>(n) * per_iteration + fixed_cost > remaining) --n;
    return {n, false};
}

// N_max for a device assuming every owned modality runs N_max iterations.
inline IterationBudget max_iterations(double remaining, const std::vector<int>& owned, int nominal,
                                      int generator_iterations, const FlopsProfile& f, const PayloadProfile& p,
                                      const DeviceHardware& hw, const RadioParams& radio, const LinkSet& links) {
    double per_flops = f.bias + f.gen_forward;
    for (int m : owned) per_flops += f.modality.at(m) + f.common;
    const double per_iteration = hw.energy_per_flop() * per_flops;
    const double fixed = hw.energy_per_flop() * static_cast<double>(generator_iterations) * f.gen_train +
                         communication_energy(links, p, hw, radio);
    return max_iterations(remaining, fixed, per_iteration, nominal);
}

class EnergyLedger {
public:
    EnergyLedger() = default;
    explicit EnergyLedger(std::vector<double> initial) : initial_(initial), remaining_(std::move(initial)) {}

    std::size_t size() const { return remaining_.size(); }
    double remaining(std::size_t k) const { return remaining_.at(k); }
    double initial(std::size_t k) const { return initial_.at(k); }
    double spent(std::size_t k) const { return initial_.at(k) - remaining_.at(k); }
    const std::vector<EnergyBreakdown>& history(std::size_t k) const { return history_.at(k); }

    // Deducts one round's spend. Overdrafts beyond rounding noise are a
    // scheduling bug and are reported.
    void commit(std::size_t k, const EnergyBreakdown& e) {
        if (history_.size() < remaining_.size()) history_.resize(remaining_.size());
        const double next = remaining_.at(k) - e.total();
        if (next < -1e-9 * std::max(1.0, initial_.at(k)))
            throw SimulationError("energy ledger: device " + std::to_string(k) + " overdrawn by " +
                                  std::to_string(-next) + " J");
        remaining_[k] = std::max(next, 0.0);
        history_[k].push_back(e);
    }

private:
    std::vector<double> initial_;
    std::vector<double> remaining_;
    std::vector<std::vector<EnergyBreakdown>> history_;
};

}  // namespace dmml
