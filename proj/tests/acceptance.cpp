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

// Acceptance suite: one PASS/FAIL line per criterion, details indented
// below it. Exit status is the number of failed criteria.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "support.hpp"

namespace dmml {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
    bool pass = true;
    std::vector<std::string> notes;

    void note(const std::string& s) { notes.push_back(s); }
    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            note("violated: " + what);
        }
    }
};

std::string fmt(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string sci(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return buf;
}

int failures = 0;

void report(int id, const std::string& name, const Verdict& v, double secs) {
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << " " << name << " (" << fmt(secs, 1)
              << " s)\n";
    for (const auto& n : v.notes) std::cout << "    " << n << "\n";
    std::cout.flush();
    if (!v.pass) ++failures;
}

// ---------------------------------------------------------------------------
// 1. Gradients against central differences
// ---------------------------------------------------------------------------

Verdict gradient_correctness() {
    Verdict v;
    const auto t0 = Clock::now();
    for (const auto& c : test::gradient_cases()) {
        double worst = 0.0;
        std::size_t checked = 0, skipped = 0;
        std::string where;
        for (std::uint64_t seed = 1; seed <= 20; ++seed) {
            const test::GradCheck r = c.run(seed);
            checked += r.checked;
            skipped += r.skipped;
            if (r.max_rel > worst) {
                worst = r.max_rel;
                where = "seed " + std::to_string(seed) + " " + r.worst;
            }
        }
        v.note(c.name + ": max rel " + sci(worst) + " over " + std::to_string(checked) + " coordinates, " +
               std::to_string(skipped) + " skipped at ReLU kinks" + (where.empty() ? "" : " (worst " + where + ")"));
        v.require(worst < 1e-4, c.name + " max relative error < 1e-4");
        v.require(checked > 0, c.name + " checked at least one coordinate");
    }
    const double secs = seconds_since(t0);
    v.require(secs < 120.0, "runtime < 2 min");
    return v;
}

// ---------------------------------------------------------------------------
// 2. Aggregation preserves device sums
// ---------------------------------------------------------------------------

Verdict consensus_conservation() {
    Verdict v;
    Rng rng(2);
    std::uniform_int_distribution<int> kdist(2, 12), mods(0, 2);
    double worst = 0.0;
    int topologies = 0, blocks_checked = 0;
    const ModelShape shape;
    for (int t = 0; t < 100; ++t) {
        const std::size_t K = static_cast<std::size_t>(kdist(rng));
        std::vector<std::vector<int>> owned(K);
        for (auto& o : owned) {
            const int pick = mods(rng);
            o = pick == 0 ? std::vector<int>{1, 2} : std::vector<int>{pick};
        }
        const Topology topo = build_topology(K, WirelessParams{}, owned, 1000 + static_cast<std::uint64_t>(t));
        if (!is_connected(topo.adjacency)) {
            v.require(false, "topology " + std::to_string(t) + " connected");
            continue;
        }
        ++topologies;
        std::vector<DeviceState> devices(K);
        for (std::size_t k = 0; k < K; ++k) {
            devices[k].id = k;
            devices[k].model = make_device_model(shape, owned[k], 1);
            for (ParamBlock* p : devices[k].model.all_blocks())
                p->assign(test::random_matrix(p->rows(), p->cols(), rng));
        }
        std::vector<BlockValues> local;
        for (const auto& d : devices) local.push_back(snapshot(d.model));
        aggregate(devices, local, topo, std::vector<bool>(K, true), true);

        auto check = [&](const std::string& id, const Adjacency& adj, int m) {
            const auto comp = components(adj);
            std::map<int, double> before, after;
            for (std::size_t k = 0; k < K; ++k) {
                if (m > 0 && !topo.owns(k, m)) continue;
                for (double x : local[k].at(id).values()) before[comp[k]] += x;
                for (double x : devices[k].model.find(id)->values()) after[comp[k]] += x;
            }
            for (const auto& [c, s] : before) worst = std::max(worst, std::abs(after[c] - s));
            ++blocks_checked;
        };
        for (const ParamBlock* p : devices[0].model.head.blocks()) check(p->id(), topo.adjacency, 0);
        for (const ParamBlock* p : devices[0].model.generator.blocks()) check(p->id(), topo.adjacency, 0);
        for (int m : {1, 2}) {
            bool any = false;
            for (std::size_t k = 0; k < K; ++k) any = any || topo.owns(k, m);
            if (!any) continue;
            std::vector<std::string> ids = extractor_ids(m);
            ids.push_back(branch_prefix(m) + "spec.w");
            for (const auto& id : ids) check(id, topo.modality_adjacency.at(m), m);
        }
    }
    v.note(std::to_string(topologies) + " connected topologies, " + std::to_string(blocks_checked) +
           " block sums, max deviation " + sci(worst));
    v.require(topologies == 100, "100 connected topologies");
    v.require(worst <= 1e-10, "device sums preserved within 1e-10");
    return v;
}

// ---------------------------------------------------------------------------
// 3. Scheduler properties and replay oracle
// ---------------------------------------------------------------------------

Verdict scheduler_oracle() {
    Verdict v;
    const auto t0 = Clock::now();
    Rng rng(3);
    int stop_bad = 0, ref_bad = 0, replay_bad = 0, spread_bad = 0, spread_bad_literal = 0, trimmed = 0,
        infeasible = 0;
    for (int t = 0; t < 200; ++t) {
        const auto in = test::random_scheduler_instance(rng);
        const IterationSchedule s = schedule_iterations(in.n_max, in.coef, in.owned);
        const auto r = test::replay_schedule(in.n_max, in.coef, in.owned);
        const int ref = s.reference;
        if (s.column(ref) != owner_budget(in.n_max, in.owned, ref)) ++ref_bad;
        if (ref != r.reference) ++replay_bad;
        for (const auto& [m, n] : r.n) {
            if (s.infeasible.at(m)) ++infeasible;
            if (!(s.gamma.at(m) <= s.gamma.at(ref) || s.infeasible.at(m))) ++stop_bad;
            if (s.column(m) != n || s.infeasible.at(m) != r.infeasible.at(m)) ++replay_bad;
            if (m == ref) continue;
            // Spread of the trims over the devices the scheduler may trim.
            std::vector<int> delta_all, delta_open;
            for (std::size_t k = 0; k < in.owned.size(); ++k) {
                if (!owns(in.owned[k], m) || in.owned[k].size() < 2) continue;
                const int d = in.n_max[k] - s.column(m)[k];
                delta_all.push_back(d);
                if (s.column(m)[k] > 0) delta_open.push_back(d);
            }
            auto spread = [](const std::vector<int>& d) {
                if (d.empty()) return 0;
                return *std::max_element(d.begin(), d.end()) - *std::min_element(d.begin(), d.end());
            };
            if (spread(delta_all) > 0 || std::any_of(delta_all.begin(), delta_all.end(), [](int d) { return d > 0; }))
                ++trimmed;
            if (spread(delta_open) > 1) ++spread_bad;
            if (spread(delta_all) > 1) ++spread_bad_literal;
        }
    }
    const double secs = seconds_since(t0);
    v.note("200 instances, " + std::to_string(trimmed) + " trimmed modality columns, " +
           std::to_string(infeasible) + " infeasible flags");
    v.note("(a) stop-condition violations: " + std::to_string(stop_bad));
    v.note("(b) reference column changed: " + std::to_string(ref_bad));
    v.note("(c) replay mismatches: " + std::to_string(replay_bad));
    v.note("(d) trim spread > 1 among devices above zero: " + std::to_string(spread_bad) +
           "; counting devices floored at zero: " + std::to_string(spread_bad_literal));
    v.require(stop_bad == 0, "(a) gamma^m <= gamma^ref or infeasible");
    v.require(ref_bad == 0, "(b) reference modality keeps N_max");
    v.require(replay_bad == 0, "(c) element-wise match with the replay oracle");
    v.require(spread_bad == 0, "(d) |dN_k - dN_k'| <= 1 among trimmable devices above zero");
    v.require(secs < 60.0, "runtime < 1 min");
    return v;
}

// ---------------------------------------------------------------------------
// 4. Hand-traced schedule
// ---------------------------------------------------------------------------

Verdict hand_trace() {
    Verdict v;
    const std::vector<std::vector<int>> owned{{1, 2}, {1, 2}};
    const WeightMatrix xi(2, std::vector<double>(2, 0.5));
    CoefficientTable coef;
    for (auto [m, phi] : {std::pair{1, 0.2}, std::pair{2, 0.1}}) {
        WeightMatrix c = xi;
        for (auto& row : c)
            for (double& x : row) x /= phi + kVariationEps;
        coef[m] = c;
    }
    const IterationSchedule s = schedule_iterations({5, 5}, coef, owned);
    const auto n1 = s.column(1), n2 = s.column(2);
    v.note("reference m" + std::to_string(s.reference) + ", N1 = (" + std::to_string(n1[0]) + "," +
           std::to_string(n1[1]) + "), N2 = (" + std::to_string(n2[0]) + "," + std::to_string(n2[1]) +
           "), gamma1 = " + fmt(s.gamma.at(1), 7) + ", gamma2 = " + fmt(s.gamma.at(2), 7));
    v.require(s.reference == 1, "reference modality 1");
    v.require(n1 == std::vector<int>{5, 5}, "N1 = (5,5)");
    v.require(n2 == std::vector<int>{2, 3}, "N2 = (2,3)");
    return v;
}

// ---------------------------------------------------------------------------
// Full runs shared by criteria 5 and 6
// ---------------------------------------------------------------------------

struct FullRun {
    RunMode mode;
    double gamma;
    std::uint64_t seed;
    RunSummary summary;
    double min_remaining = 0.0;
    bool any_negative = false;
};

ExperimentConfig full_config(RunMode mode, double gamma, std::uint64_t seed) {
    ExperimentConfig c = config_from_string("");
    c.mode = mode;
    c.devices = 12;
    c.rounds = 80;
    c.gamma = gamma;
    c.phi = LabelSkew::dominant(0.5);
    c.plots = false;
    set_seed(c, seed);
    return c;
}

FullRun execute(const ExperimentConfig& cfg) {
    Simulator sim(cfg);
    const auto recs = sim.run();
    FullRun r{cfg.mode, cfg.gamma, cfg.seed, summarize(sim.config(), sim.devices(), recs)};
    r.min_remaining = std::numeric_limits<double>::infinity();
    for (const auto& rec : recs) {
        r.min_remaining = std::min(r.min_remaining, rec.remaining);
        r.any_negative = r.any_negative || rec.remaining < 0.0;
    }
    return r;
}

std::vector<FullRun> runs;

const FullRun& find_run(RunMode mode, double gamma, std::uint64_t seed) {
    for (const auto& r : runs)
        if (r.mode == mode && r.gamma == gamma && r.seed == seed) return r;
    throw SimulationError("acceptance: missing run");
}

void execute_full_runs() {
    const std::vector<std::tuple<RunMode, double>> plan{
        {RunMode::dmml, 0.5},    {RunMode::dmml_kd, 0.5},         {RunMode::dmml_kd, 1.0},
        {RunMode::dmml_kd_balance, 1.0}, {RunMode::dmml, 0.0}, {RunMode::dmml_kd, 0.0}};
    for (std::uint64_t seed = 1; seed <= 3; ++seed)
        for (const auto& [mode, gamma] : plan) runs.push_back(execute(full_config(mode, gamma, seed)));
}

// ---------------------------------------------------------------------------
// 5. Energy accounting
// ---------------------------------------------------------------------------

Verdict energy_accounting() {
    Verdict v;
    const double e = DeviceHardware{}.energy_per_flop();
    const double rel = std::abs(e - 5e-11) / 5e-11;
    v.note("(a) energy per FLOP " + sci(e) + " J, relative error " + sci(rel));
    v.require(rel <= 1e-15, "(a) 5e-11 J per FLOP within 1e-15 relative");

    // Two extra runs on a budget tight enough to retire devices.
    std::vector<FullRun> checked = runs;
    {
        const FullRun& base = find_run(RunMode::dmml_kd, 1.0, 1);
        std::vector<double> spent = base.summary.energy_total;
        std::sort(spent.begin(), spent.end());
        for (RunMode mode : {RunMode::dmml_kd, RunMode::dmml_kd_balance}) {
            ExperimentConfig c = full_config(mode, 1.0, 1);
            c.hardware.initial_energy_j = 0.5 * spent[spent.size() / 2];
            FullRun r = execute(c);
            v.note("(b) tight budget " + fmt(c.hardware.initial_energy_j, 3) + " J, " + to_string(mode) + ": " +
                   std::to_string(r.summary.exhausted_devices) + " devices exhausted, min remaining " +
                   sci(r.min_remaining) + " J");
            checked.push_back(std::move(r));
        }
    }
    int negative = 0;
    double min_rem = std::numeric_limits<double>::infinity();
    for (const auto& r : checked) {
        negative += r.any_negative;
        min_rem = std::min(min_rem, r.min_remaining);
    }
    v.note("(b) " + std::to_string(checked.size()) + " full runs, min remaining " + sci(min_rem) + " J");
    v.require(negative == 0, "(b) E_remaining >= 0 at every round for every device");

    int pass = 0;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const double kd = find_run(RunMode::dmml_kd, 1.0, seed).summary.energy_mean;
        const double bal = find_run(RunMode::dmml_kd_balance, 1.0, seed).summary.energy_mean;
        pass += bal <= kd;
        v.note("(c) seed " + std::to_string(seed) + ": balance " + fmt(bal, 6) + " J vs no balance " + fmt(kd, 6) +
               " J per device");
    }
    v.require(pass >= 2, "(c) balance energy <= no-balance energy on >= 2 of 3 seeds");
    return v;
}

// ---------------------------------------------------------------------------
// 6. Learning effectiveness
// ---------------------------------------------------------------------------

template <class F>
double seed_mean(RunMode mode, double gamma, F metric) {
    double s = 0.0;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) s += metric(find_run(mode, gamma, seed).summary);
    return s / 3.0;
}

Verdict learning_effectiveness(double run_secs) {
    Verdict v;
    auto acc = [](const RunSummary& s) { return s.final_acc; };
    auto weak = [](const RunSummary& s) { return s.weak_modality_acc; };
    auto group = [](const std::string& g) {
        return [g](const RunSummary& s) { return s.final_acc_group.count(g) ? s.final_acc_group.at(g) : 0.0; };
    };
    auto pct = [](double x) { return fmt(100.0 * x, 2); };

    const double a_base = seed_mean(RunMode::dmml, 0.5, acc), a_kd = seed_mean(RunMode::dmml_kd, 0.5, acc);
    v.note("(a) gamma 0.5, phi 0.5: dmml " + pct(a_base) + "%, dmml_kd " + pct(a_kd) + "%, gain " +
           pct(a_kd - a_base) + " pp");
    v.require(a_kd - a_base >= 0.02, "(a) dmml_kd beats dmml by >= 2 pp");

    const double b_kd = seed_mean(RunMode::dmml_kd, 1.0, weak), b_bal = seed_mean(RunMode::dmml_kd_balance, 1.0, weak);
    v.note("(b) gamma 1, phi 0.5: weak-modality accuracy dmml_kd " + pct(b_kd) + "%, dmml_kd_balance " + pct(b_bal) +
           "%, gain " + pct(b_bal - b_kd) + " pp");
    v.require(b_bal - b_kd >= 0.01, "(b) balance lifts weak-modality accuracy by >= 1 pp");

    for (const std::string g : {"m1_only", "m2_only"}) {
        const double base = seed_mean(RunMode::dmml, 0.0, group(g)), kd = seed_mean(RunMode::dmml_kd, 0.0, group(g));
        v.note("(c) gamma 0, phi 0.5, " + g + ": dmml " + pct(base) + "%, dmml_kd " + pct(kd) + "%");
        v.require(kd > base, "(c) " + g + " group improves with distillation");
    }
    v.note(std::to_string(runs.size()) + " runs of K=12, T=80 in " + fmt(run_secs, 1) + " s");
    return v;
}

// ---------------------------------------------------------------------------
// 7. Determinism
// ---------------------------------------------------------------------------

std::string metrics_csv(const ExperimentConfig& cfg) {
    Simulator sim(cfg);
    std::ostringstream os;
    write_metrics(os, sim.run());
    return os.str();
}

Verdict determinism() {
    Verdict v;
    ExperimentConfig c = full_config(RunMode::dmml_kd_balance, 0.5, 7);
    c.rounds = 10;
    const std::string a = metrics_csv(c), b = metrics_csv(c);
    c.threads = 3;
    const std::string p = metrics_csv(c);
    v.note("K=12, T=10, dmml_kd_balance: " + std::to_string(a.size()) + " bytes of metrics");
    v.require(a == b, "byte-identical across two runs");
    v.require(a == p, "byte-identical with 1 and 3 threads");
    return v;
}

// ---------------------------------------------------------------------------
// 8. Mask contract
// ---------------------------------------------------------------------------

Verdict mask_contract() {
    Verdict v;
    ExperimentConfig c = test::small_config(RunMode::dmml_kd_balance, 4, 6);
    c.gamma = 1.0;
    c.threads = 1;
    Simulator sim(c);

    using Key = std::tuple<std::size_t, int, int>;  // device, round, modality
    std::map<Key, int> changes;
    std::map<std::pair<std::size_t, int>, std::uint64_t> last;  // device, modality
    int changed_when_inactive = 0;
    auto branch_hash = [](const DeviceModel& m, int mod) {
        const auto blocks = m.branch(mod).blocks();
        return test::hash_blocks({blocks.begin(), blocks.end()});
    };
    sim.set_iteration_observer([&](std::size_t k, int round, int, const std::vector<int>& active,
                                   const DeviceModel& model) {
        for (int m : model.modalities) {
            const std::uint64_t h = branch_hash(model, m);
            const bool changed = h != last[{k, m}];
            last[{k, m}] = h;
            if (!changed) continue;
            ++changes[{k, round, m}];
            if (std::find(active.begin(), active.end(), m) == active.end()) ++changed_when_inactive;
        }
    });
    int cells = 0, partial = 0, mismatch = 0;
    while (!sim.done()) {
        for (const auto& d : sim.devices())
            for (int m : d.model.modalities) last[{d.id, m}] = branch_hash(d.model, m);
        for (const auto& r : sim.step()) {
            const int nominal = sim.devices()[r.device].nominal_iterations;
            for (const auto& [m, n] : r.iterations) {
                ++cells;
                if (n < nominal) ++partial;
                const auto it = changes.find({r.device, r.round, m});
                const int got = it == changes.end() ? 0 : it->second;
                if (got != n) ++mismatch;
            }
        }
    }
    v.note(std::to_string(cells) + " (device, round, modality) cells, " + std::to_string(partial) +
           " with N^m < N_k, " + std::to_string(mismatch) + " mismatches, " + std::to_string(changed_when_inactive) +
           " changes on inactive slots");
    v.require(partial > 0, "at least one cell with N^m < N_k");
    v.require(mismatch == 0, "branch changes on exactly N^m iterations");
    v.require(changed_when_inactive == 0, "no change on masked iterations");
    return v;
}

}  // namespace
}  // namespace dmml

int main() {
    using namespace dmml;
    auto timed = [](int id, const std::string& name, auto fn) {
        const auto t0 = Clock::now();
        Verdict v;
        try {
            v = fn();
        } catch (const std::exception& e) {
            v.pass = false;
            v.note(std::string("exception: ") + e.what());
        }
        report(id, name, v, seconds_since(t0));
    };
    timed(1, "gradient correctness", gradient_correctness);
    timed(2, "consensus conservation", consensus_conservation);
    timed(3, "scheduler oracle", scheduler_oracle);
    timed(4, "hand-traced schedule", hand_trace);

    const auto t0 = Clock::now();
    bool runs_ok = true;
    try {
        execute_full_runs();
    } catch (const std::exception& e) {
        runs_ok = false;
        std::cout << "full runs aborted: " << e.what() << "\n";
    }
    const double run_secs = seconds_since(t0);
    if (runs_ok) {
        timed(5, "energy accounting", energy_accounting);
        timed(6, "learning effectiveness", [&] { return learning_effectiveness(run_secs); });
    } else {
        report(5, "energy accounting", Verdict{false, {"full runs unavailable"}}, 0.0);
        report(6, "learning effectiveness", Verdict{false, {"full runs unavailable"}}, 0.0);
    }
    timed(7, "determinism", determinism);
    timed(8, "mask contract", mask_contract);
    std::cout << (failures == 0 ? "ALL CRITERIA PASS" : std::to_string(failures) + " CRITERIA FAIL") << "\n";
    return failures;
}
