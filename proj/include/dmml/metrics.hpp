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

// Run artifacts: metrics.csv, summary.json, partition manifest, SVG plots,
// and the multi-run comparison table.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dmml/config.hpp"
#include "dmml/data.hpp"
#include "dmml/format.hpp"
#include "dmml/orchestrator.hpp"

namespace dmml {

inline constexpr const char* kMetricsHeader =
    "round,device,mode,acc,acc_m1,acc_m2,loss_task,loss_sim,loss_cls,loss_dif,loss_kd,loss_gen,gamma_m1,gamma_m2,"
    "phi_m1,phi_m2,n_m1,n_m2,n_max,e_cmp,e_com,e_remaining,infeasible";

namespace detail {

template <class Map>
std::string cell(const Map& m, int key) {
    auto it = m.find(key);
    if (it == m.end()) return "";
    if constexpr (std::is_integral_v<typename Map::mapped_type>) return std::to_string(it->second);
    else return format_double(it->second);
}

}  // namespace detail

inline void write_metrics_header(std::ostream& os) { os << kMetricsHeader << "\n"; }

// One row per record. Empty cells mark quantities that do not apply
// (modality not owned, generator absent).
inline void write_metrics_row(std::ostream& os, const RoundRecord& r) {
    using detail::cell;
    os << r.round << ',' << r.device << ',' << to_string(r.mode) << ',' << format_double(r.acc) << ','
       << cell(r.acc_modality, 1) << ',' << cell(r.acc_modality, 2) << ',' << format_double(r.loss.task) << ','
       << format_double(r.loss.sim) << ',' << format_double(r.loss.cls) << ',' << format_double(r.loss.dif) << ','
       << format_double(r.loss.kd) << ',' << (r.loss_gen ? format_double(*r.loss_gen) : "") << ','
       << cell(r.gamma, 1) << ',' << cell(r.gamma, 2) << ',' << cell(r.phi, 1) << ',' << cell(r.phi, 2) << ','
       << cell(r.iterations, 1) << ',' << cell(r.iterations, 2) << ',' << r.max_iterations << ','
       << format_double(r.energy.computation) << ',' << format_double(r.energy.communication) << ','
       << format_double(r.remaining) << ',' << (r.infeasible ? 1 : 0) << "\n";
}

inline void write_metrics(std::ostream& os, const std::vector<RoundRecord>& records) {
    write_metrics_header(os);
    for (const auto& r : records) write_metrics_row(os, r);
}

inline std::string group_name(const std::vector<int>& modalities) {
    if (modalities.size() > 1) return "multi";
    return "m" + std::to_string(modalities.front()) + "_only";
}

struct RunSummary {
    std::string mode;
    std::uint64_t seed = 0;
    std::size_t devices = 0;
    int rounds = 0;
    double gamma = 1.0;
    std::string phi;
    double final_acc = 0.0;
    double best_acc = 0.0;
    int best_round = 0;
    std::map<int, double> final_acc_modality;  // mean over owners
    std::map<std::string, double> final_acc_group;
    double weak_modality_acc = 0.0;
    std::vector<double> energy_total;  // per device, over the run
    double energy_mean = 0.0;
    double energy_cmp_mean = 0.0;
    double energy_com_mean = 0.0;
    double min_remaining = 0.0;
    int exhausted_devices = 0;
    int infeasible_rows = 0;
};

inline double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double stddev_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double mu = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - mu) * (x - mu);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// Device-mean accuracy per round.
inline std::vector<double> accuracy_curve(const std::vector<RoundRecord>& records) {
    std::map<int, std::vector<double>> by_round;
    for (const auto& r : records) by_round[r.round].push_back(r.acc);
    std::vector<double> out;
    for (const auto& [t, v] : by_round) out.push_back(mean_of(v));
    return out;
}

// Mean over owners of the per-modality accuracy, per round.
inline std::map<int, std::vector<double>> modality_curves(const std::vector<RoundRecord>& records) {
    std::map<int, std::map<int, std::vector<double>>> acc;
    for (const auto& r : records)
        for (const auto& [m, a] : r.acc_modality) acc[m][r.round].push_back(a);
    std::map<int, std::vector<double>> out;
    for (const auto& [m, rounds] : acc)
        for (const auto& [t, v] : rounds) out[m].push_back(mean_of(v));
    return out;
}

inline RunSummary summarize(const ExperimentConfig& cfg, const std::vector<DeviceState>& devices,
                            const std::vector<RoundRecord>& records) {
    RunSummary s;
    s.mode = to_string(cfg.mode);
    s.seed = cfg.seed;
    s.devices = devices.size();
    s.rounds = cfg.rounds;
    s.gamma = cfg.gamma;
    s.phi = cfg.phi_label();
    s.energy_total.assign(devices.size(), 0.0);
    std::vector<double> cmp(devices.size(), 0.0), com(devices.size(), 0.0);
    s.min_remaining = std::numeric_limits<double>::infinity();
    for (const auto& r : records) {
        cmp[r.device] += r.energy.computation;
        com[r.device] += r.energy.communication;
        s.energy_total[r.device] += r.energy.total();
        s.min_remaining = std::min(s.min_remaining, r.remaining);
        if (r.infeasible) ++s.infeasible_rows;
    }
    if (records.empty()) s.min_remaining = 0.0;
    s.energy_mean = mean_of(s.energy_total);
    s.energy_cmp_mean = mean_of(cmp);
    s.energy_com_mean = mean_of(com);
    for (const auto& d : devices)
        if (d.exhausted) ++s.exhausted_devices;

    const auto curve = accuracy_curve(records);
    for (std::size_t i = 0; i < curve.size(); ++i)
        if (curve[i] > s.best_acc) {
            s.best_acc = curve[i];
            s.best_round = static_cast<int>(i) + 1;
        }
    if (records.empty()) return s;
    const int last = records.back().round;
    std::vector<double> acc;
    std::map<int, std::vector<double>> per_m;
    std::map<std::string, std::vector<double>> per_g;
    for (const auto& r : records) {
        if (r.round != last) continue;
        acc.push_back(r.acc);
        for (const auto& [m, a] : r.acc_modality) per_m[m].push_back(a);
        per_g[group_name(devices[r.device].model.modalities)].push_back(r.acc);
    }
    s.final_acc = mean_of(acc);
    for (const auto& [m, v] : per_m) s.final_acc_modality[m] = mean_of(v);
    for (const auto& [g, v] : per_g) s.final_acc_group[g] = mean_of(v);
    s.weak_modality_acc = s.final_acc_modality.empty() ? 0.0 : std::numeric_limits<double>::infinity();
    for (const auto& [m, a] : s.final_acc_modality) s.weak_modality_acc = std::min(s.weak_modality_acc, a);
    return s;
}

inline nlohmann::ordered_json summary_json(const RunSummary& s) {
    nlohmann::ordered_json j;
    j["mode"] = s.mode;
    j["seeds"] = {s.seed};
    j["devices"] = s.devices;
    j["rounds"] = s.rounds;
    j["gamma"] = s.gamma;
    j["phi"] = s.phi;
    j["final_accuracy"] = s.final_acc;
    j["best_accuracy"] = s.best_acc;
    j["best_round"] = s.best_round;
    nlohmann::ordered_json pm = nlohmann::ordered_json::object();
    for (const auto& [m, a] : s.final_acc_modality) pm["m" + std::to_string(m)] = a;
    j["final_accuracy_modality"] = pm;
    nlohmann::ordered_json pg = nlohmann::ordered_json::object();
    for (const auto& [g, a] : s.final_acc_group) pg[g] = a;
    j["final_accuracy_group"] = pg;
    j["weak_modality_accuracy"] = s.weak_modality_acc;
    j["energy_total_per_device"] = s.energy_total;
    j["energy_mean_per_device"] = s.energy_mean;
    j["energy_computation_mean"] = s.energy_cmp_mean;
    j["energy_communication_mean"] = s.energy_com_mean;
    j["min_remaining_energy"] = s.min_remaining;
    j["exhausted_devices"] = s.exhausted_devices;
    j["infeasible_rows"] = s.infeasible_rows;
    return j;
}

inline RunSummary summary_from_json(const nlohmann::json& j) {
    RunSummary s;
    try {
        s.mode = j.at("mode").get<std::string>();
        s.seed = j.at("seeds").at(0).get<std::uint64_t>();
        s.devices = j.at("devices").get<std::size_t>();
        s.rounds = j.at("rounds").get<int>();
        s.gamma = j.at("gamma").get<double>();
        s.phi = j.at("phi").get<std::string>();
        s.final_acc = j.at("final_accuracy").get<double>();
        s.best_acc = j.at("best_accuracy").get<double>();
        s.best_round = j.at("best_round").get<int>();
        for (auto it = j.at("final_accuracy_modality").begin(); it != j.at("final_accuracy_modality").end(); ++it)
            s.final_acc_modality[std::stoi(it.key().substr(1))] = it.value().get<double>();
        for (auto it = j.at("final_accuracy_group").begin(); it != j.at("final_accuracy_group").end(); ++it)
            s.final_acc_group[it.key()] = it.value().get<double>();
        s.weak_modality_acc = j.at("weak_modality_accuracy").get<double>();
        s.energy_total = j.at("energy_total_per_device").get<std::vector<double>>();
        s.energy_mean = j.at("energy_mean_per_device").get<double>();
        s.energy_cmp_mean = j.at("energy_computation_mean").get<double>();
        s.energy_com_mean = j.at("energy_communication_mean").get<double>();
        s.min_remaining = j.at("min_remaining_energy").get<double>();
        s.exhausted_devices = j.at("exhausted_devices").get<int>();
        s.infeasible_rows = j.at("infeasible_rows").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("summary: malformed file: ") + e.what());
    }
    return s;
}

inline RunSummary load_summary(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("summary: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("summary: invalid JSON in '" + path + "': " + e.what());
    }
    return summary_from_json(j);
}

inline nlohmann::ordered_json partition_manifest(const std::vector<DevicePartition>& parts) {
    nlohmann::ordered_json j;
    j["format"] = "dmml-partitions";
    j["version"] = 1;
    nlohmann::ordered_json devs = nlohmann::ordered_json::array();
    for (const auto& p : parts) {
        nlohmann::ordered_json d;
        d["device"] = p.device;
        d["modalities"] = p.modalities;
        d["dominant_label"] = p.dominant_label;
        d["samples"] = p.samples;
        devs.push_back(d);
    }
    j["devices"] = devs;
    return j;
}

// ---------------------------------------------------------------------------
// SVG line plots
// ---------------------------------------------------------------------------

struct Series {
    std::string label;
    std::vector<double> values;  // one per round, starting at round 1
};

inline void write_line_plot(std::ostream& os, const std::string& title, const std::string& y_label,
                            const std::vector<Series>& series) {
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    const double w = 640, h = 400, left = 60, right = 20, top = 40, bottom = 50;
    std::size_t n = 0;
    double lo = 1.0, hi = 0.0;
    for (const auto& s : series) {
        n = std::max(n, s.values.size());
        for (double v : s.values) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (hi <= lo) {
        lo = 0.0;
        hi = 1.0;
    }
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
    auto px = [&](std::size_t i) {
        return left + (n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.5) * (w - left - right);
    };
    auto py = [&](double v) { return top + (1.0 - (v - lo) / (hi - lo)) * (h - top - bottom); };
    auto fx = [](double v) { return format_fixed(v, 2); };

    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 "
       << w << ' ' << h << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << fx(w / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title << "</text>\n";
    os << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right << "\" y2=\"" << h - bottom
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << h - bottom
       << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double v = lo + (hi - lo) * i / 4.0;
        os << "<text x=\"" << left - 6 << "\" y=\"" << fx(py(v) + 4) << "\" text-anchor=\"end\" font-size=\"11\">"
           << format_fixed(v, 3) << "</text>\n";
    }
    os << "<text x=\"" << fx(w / 2) << "\" y=\"" << h - 12 << "\" text-anchor=\"middle\" font-size=\"12\">round</text>\n";
    os << "<text x=\"16\" y=\"" << fx(h / 2) << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
       << fx(h / 2) << ")\">" << y_label << "</text>\n";
    if (n > 0) {
        os << "<text x=\"" << left << "\" y=\"" << h - bottom + 16 << "\" text-anchor=\"middle\" font-size=\"11\">1</text>\n";
        os << "<text x=\"" << w - right << "\" y=\"" << h - bottom + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
           << n << "</text>\n";
    }
    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* c = colors[s % 6];
        os << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < series[s].values.size(); ++i)
            os << (i ? " " : "") << fx(px(i)) << ',' << fx(py(series[s].values[i]));
        os << "\"/>\n";
        const double ly = top + 14.0 * static_cast<double>(s);
        os << "<text x=\"" << w - right - 4 << "\" y=\"" << fx(ly + 4) << "\" text-anchor=\"end\" font-size=\"11\" fill=\""
           << c << "\">" << series[s].label << "</text>\n";
    }
    os << "</svg>\n";
}

// ---------------------------------------------------------------------------
// Comparison
// ---------------------------------------------------------------------------

struct ModeComparison {
    std::string mode;
    std::vector<std::uint64_t> seeds;
    std::vector<double> final_acc;
    std::map<int, std::vector<double>> acc_modality;
    std::vector<double> weak_acc;
    std::vector<double> energy_mean;
};

struct Comparison {
    std::vector<ModeComparison> modes;  // in first-seen order
    // Per shared seed: balance energy <= no-balance energy (device mean).
    int energy_pairs = 0;
    int energy_pass = 0;
};

inline Comparison compare_runs(const std::vector<RunSummary>& runs) {
    Comparison c;
    std::map<std::string, std::size_t> index;
    for (const auto& r : runs) {
        auto it = index.find(r.mode);
        if (it == index.end()) {
            it = index.emplace(r.mode, c.modes.size()).first;
            c.modes.push_back({});
            c.modes.back().mode = r.mode;
        }
        ModeComparison& m = c.modes[it->second];
        m.seeds.push_back(r.seed);
        m.final_acc.push_back(r.final_acc);
        for (const auto& [mm, a] : r.final_acc_modality) m.acc_modality[mm].push_back(a);
        m.weak_acc.push_back(r.weak_modality_acc);
        m.energy_mean.push_back(r.energy_mean);
    }
    std::map<std::uint64_t, double> kd, bal;
    for (const auto& r : runs) {
        if (r.mode == "dmml_kd") kd[r.seed] = r.energy_mean;
        if (r.mode == "dmml_kd_balance") bal[r.seed] = r.energy_mean;
    }
    for (const auto& [seed, e] : bal) {
        auto it = kd.find(seed);
        if (it == kd.end()) continue;
        ++c.energy_pairs;
        if (e <= it->second) ++c.energy_pass;
    }
    return c;
}

inline void write_comparison_csv(std::ostream& os, const Comparison& c) {
    os << "mode,runs,acc_mean,acc_std,acc_m1_mean,acc_m2_mean,weak_acc_mean,energy_mean,acc_delta_vs_first\n";
    const double base = c.modes.empty() ? 0.0 : mean_of(c.modes.front().final_acc);
    for (const auto& m : c.modes) {
        auto mod = [&](int k) {
            auto it = m.acc_modality.find(k);
            return it == m.acc_modality.end() ? std::string() : format_double(mean_of(it->second));
        };
        os << m.mode << ',' << m.final_acc.size() << ',' << format_double(mean_of(m.final_acc)) << ','
           << format_double(stddev_of(m.final_acc)) << ',' << mod(1) << ',' << mod(2) << ','
           << format_double(mean_of(m.weak_acc)) << ',' << format_double(mean_of(m.energy_mean)) << ','
           << format_double(mean_of(m.final_acc) - base) << "\n";
    }
}

inline void print_comparison(std::ostream& os, const Comparison& c) {
    os << std::left << std::setw(18) << "mode" << std::setw(6) << "runs" << std::setw(18) << "accuracy"
       << std::setw(10) << "acc m1" << std::setw(10) << "acc m2" << std::setw(10) << "weak" << "energy/device (J)\n";
    for (const auto& m : c.modes) {
        auto pct = [](double v) { return format_fixed(100.0 * v, 2); };
        auto mod = [&](int k) {
            auto it = m.acc_modality.find(k);
            return it == m.acc_modality.end() ? std::string("-") : pct(mean_of(it->second));
        };
        os << std::left << std::setw(18) << m.mode << std::setw(6) << m.final_acc.size() << std::setw(18)
           << (pct(mean_of(m.final_acc)) + " +- " + pct(stddev_of(m.final_acc))) << std::setw(10) << mod(1)
           << std::setw(10) << mod(2) << std::setw(10) << pct(mean_of(m.weak_acc))
           << format_double(mean_of(m.energy_mean)) << "\n";
    }
    if (c.energy_pairs > 0)
        os << "energy balance <= no-balance: " << c.energy_pass << "/" << c.energy_pairs << " seeds "
           << (3 * c.energy_pass >= 2 * c.energy_pairs ? "PASS" : "FAIL") << "\n";
}

}  // namespace dmml
