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

// Training-balance scheduling.
//
// For modality m the balance metric is
//   gamma^m = sum_{k'} N^m_{k'} * sum_k xi^m_{k,k'} / (phi^m_{k,k'} + eps)
// where phi is the relative change of a neighbor's freshly trained extractor
// against the local aggregate of the previous round. The modality with the
// smallest metric at full budget keeps N_max; every other modality is
// trimmed one iteration at a time, round-robin over its multi-modal owners,
// until its metric no longer exceeds the reference.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <vector>

#include "dmml/model.hpp"
#include "dmml/nn.hpp"
#include "dmml/rng.hpp"
#include "dmml/wireless.hpp"

namespace dmml {

inline constexpr double kVariationEps = 1e-8;

// Extractor parameters of one branch as a single vector.
inline std::vector<double> flatten_extractor(const ModalityBranch& b) {
    std::vector<double> out;
    for (const ParamBlock* p : b.extractor_blocks()) out.insert(out.end(), p->values().begin(), p->values().end());
    return out;
}

struct Variation {
    double value = 0.0;
    bool degenerate = false;  // zero-norm denominator
};

// ||local_new - prev_aggregate|| / ||new_aggregate||.
inline Variation param_variation(std::span<const double> local_new, std::span<const double> prev_aggregate,
                                 std::span<const double> new_aggregate, double eps = kVariationEps) {
    if (local_new.size() != prev_aggregate.size() || local_new.size() != new_aggregate.size())
        throw ConfigError("param_variation: parameter length mismatch");
    double num = 0.0;
    for (std::size_t i = 0; i < local_new.size(); ++i)
        num += (local_new[i] - prev_aggregate[i]) * (local_new[i] - prev_aggregate[i]);
    num = std::sqrt(num);
    const double den = std::sqrt(squared_norm(new_aggregate));
    if (den == 0.0) return {num / eps, true};
    return {num / den, false};
}

// coefficients[m][k][k'] = xi^m_{k,k'} / (phi^m_{k,k'} + eps); zero outside
// the modality-m neighborhood.
using CoefficientTable = std::map<int, WeightMatrix>;

// Column sums sum_k coef[k][k'].
inline std::vector<double> influence(const WeightMatrix& coef) {
    const std::size_t n = coef.size();
    std::vector<double> col(n, 0.0);
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t kp = 0; kp < n; ++kp) col[kp] += coef[k][kp];
    return col;
}

inline double balance_metric(const std::vector<int>& iterations, const WeightMatrix& coef) {
    if (iterations.size() != coef.size()) throw ConfigError("balance_metric: size mismatch");
    const auto col = influence(coef);
    double g = 0.0;
    for (std::size_t kp = 0; kp < iterations.size(); ++kp) g += static_cast<double>(iterations[kp]) * col[kp];
    return g;
}

inline std::vector<int> modalities_present(const std::vector<std::vector<int>>& owned) {
    std::set<int> s;
    for (const auto& ms : owned) s.insert(ms.begin(), ms.end());
    return {s.begin(), s.end()};
}

inline bool owns(const std::vector<int>& ms, int m) { return std::find(ms.begin(), ms.end(), m) != ms.end(); }

// N_max restricted to the owners of m.
inline std::vector<int> owner_budget(const std::vector<int>& n_max, const std::vector<std::vector<int>>& owned, int m) {
    std::vector<int> n(n_max.size(), 0);
    for (std::size_t k = 0; k < n.size(); ++k)
        if (owns(owned[k], m)) n[k] = n_max[k];
    return n;
}

// argmin_m of the full-budget metric; ties go to the lowest modality id.
inline int select_reference_modality(const std::vector<int>& n_max, const CoefficientTable& coef,
                                     const std::vector<std::vector<int>>& owned) {
    const auto present = modalities_present(owned);
    if (present.empty()) throw SimulationError("select_reference_modality: no modalities");
    int best = present.front();
    double best_gamma = balance_metric(owner_budget(n_max, owned, best), coef.at(best));
    for (std::size_t i = 1; i < present.size(); ++i) {
        const int m = present[i];
        const double g = balance_metric(owner_budget(n_max, owned, m), coef.at(m));
        if (g < best_gamma) {
            best = m;
            best_gamma = g;
        }
    }
    return best;
}

struct IterationSchedule {
    int reference = 0;
    std::vector<int> max_iterations;            // N_max per device
    std::vector<std::map<int, int>> iterations;  // N^m per device, owned modalities only
    std::map<int, double> gamma;                 // metric of the final schedule
    std::map<int, bool> infeasible;              // trimming ran out before the condition held

    std::vector<int> column(int m) const {
        std::vector<int> n(iterations.size(), 0);
        for (std::size_t k = 0; k < n.size(); ++k) {
            auto it = iterations[k].find(m);
            if (it != iterations[k].end()) n[k] = it->second;
        }
        return n;
    }
};

// Every owned modality runs N_max (no balancing).
inline IterationSchedule full_schedule(const std::vector<int>& n_max, const std::vector<std::vector<int>>& owned,
                                       const CoefficientTable* coef = nullptr) {
    IterationSchedule s;
    s.max_iterations = n_max;
    s.iterations.resize(n_max.size());
    for (std::size_t k = 0; k < n_max.size(); ++k)
        for (int m : owned[k]) s.iterations[k][m] = n_max[k];
    for (int m : modalities_present(owned)) {
        s.infeasible[m] = false;
        if (coef) s.gamma[m] = balance_metric(s.column(m), coef->at(m));
    }
    if (coef) s.reference = select_reference_modality(n_max, *coef, owned);
    return s;
}

inline IterationSchedule schedule_iterations(const std::vector<int>& n_max, const CoefficientTable& coef,
                                             const std::vector<std::vector<int>>& owned) {
    if (n_max.size() != owned.size()) throw ConfigError("schedule_iterations: size mismatch");
    IterationSchedule s = full_schedule(n_max, owned, &coef);
    const int ref = s.reference;
    const double target = s.gamma.at(ref);
    for (int m : modalities_present(owned)) {
        if (m == ref) continue;
        std::vector<std::size_t> trimmable;
        for (std::size_t k = 0; k < owned.size(); ++k)
            if (owns(owned[k], m) && owned[k].size() > 1) trimmable.push_back(k);
        const WeightMatrix& c = coef.at(m);
        std::vector<int> n = s.column(m);
        if (trimmable.empty()) {
            s.infeasible[m] = balance_metric(n, c) > target;
            continue;
        }
        std::size_t cursor = 0;
        while (balance_metric(n, c) > target) {
            std::size_t tried = 0;
            while (tried < trimmable.size() && n[trimmable[cursor]] == 0) {
                cursor = (cursor + 1) % trimmable.size();
                ++tried;
            }
            if (tried == trimmable.size()) {
                s.infeasible[m] = true;
                break;
            }
            --n[trimmable[cursor]];
            cursor = (cursor + 1) % trimmable.size();
        }
        for (std::size_t k : trimmable) s.iterations[k][m] = n[k];
        s.gamma[m] = balance_metric(n, c);
    }
    return s;
}

// Uniformly random subset of `active` iterations out of `nominal`.
inline std::vector<bool> build_mask(int active, int nominal, std::uint64_t seed, std::size_t device, int round,
                                    int modality) {
    if (active < 0 || active > nominal) throw ConfigError("build_mask: iteration count out of range");
    std::vector<int> slots(static_cast<std::size_t>(nominal));
    std::iota(slots.begin(), slots.end(), 0);
    Rng rng = make_rng(seed, Stream::mask,
                       {static_cast<std::uint64_t>(device), static_cast<std::uint64_t>(round),
                        static_cast<std::uint64_t>(modality)});
    std::shuffle(slots.begin(), slots.end(), rng);
    std::vector<bool> mask(static_cast<std::size_t>(nominal), false);
    for (int i = 0; i < active; ++i) mask[static_cast<std::size_t>(slots[static_cast<std::size_t>(i)])] = true;
    return mask;
}

// ---------------------------------------------------------------------------
// Cluster-head coordination
// ---------------------------------------------------------------------------

// What one device sends to the head after aggregation: its N_max and, per
// owned modality, its row xi^m_{k,.} / (phi^m_{k,.} + eps).
struct ClusterReport {
    int device = 0;
    int max_iterations = 0;
    std::vector<int> modalities;
    std::map<int, std::vector<double>> coefficients;
};

struct ClusterDecision {
    std::size_t head = 0;
    IterationSchedule schedule;
};

// The head assembles the coefficient table from the reports and runs the
// scheduler (or the full-budget schedule when balancing is off).
inline ClusterDecision cluster_head_round(const std::vector<ClusterReport>& reports, std::size_t devices,
                                          std::size_t head, bool balance) {
    std::vector<const ClusterReport*> by_device(devices, nullptr);
    for (const auto& r : reports) {
        if (r.device < 0 || static_cast<std::size_t>(r.device) >= devices)
            throw SimulationError("cluster head: report from unknown device " + std::to_string(r.device));
        by_device[static_cast<std::size_t>(r.device)] = &r;
    }
    std::vector<int> n_max(devices);
    std::vector<std::vector<int>> owned(devices);
    for (std::size_t k = 0; k < devices; ++k) {
        if (!by_device[k]) throw SimulationError("cluster head: missing report from device " + std::to_string(k));
        n_max[k] = by_device[k]->max_iterations;
        owned[k] = by_device[k]->modalities;
    }
    CoefficientTable coef;
    for (int m : modalities_present(owned)) {
        WeightMatrix c(devices, std::vector<double>(devices, 0.0));
        for (std::size_t k = 0; k < devices; ++k) {
            auto it = by_device[k]->coefficients.find(m);
            if (it == by_device[k]->coefficients.end()) continue;
            if (it->second.size() != devices) throw SimulationError("cluster head: malformed coefficient row");
            c[k] = it->second;
        }
        coef[m] = std::move(c);
    }
    ClusterDecision d;
    d.head = head;
    d.schedule = balance ? schedule_iterations(n_max, coef, owned) : full_schedule(n_max, owned, &coef);
    return d;
}

}  // namespace dmml
