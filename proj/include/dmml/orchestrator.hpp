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

// Round loop. Each round:
//   1. apply the schedule computed at the end of the previous round
//   2. local updates (masked iterations) and generator training, per device
//   3. energy of the round, committed to the ledger
//   4. exchange and aggregation over the graph of still-active devices
//   5. parameter variation and balance coefficients
//   6. N_max for the next round, with that round's channel gains
//   7. cluster head computes the next schedule
//   8. evaluation on the shared test set
// Steps 2 and 8 fan out per device; everything else runs at the barrier.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "dmml/balance.hpp"
#include "dmml/config.hpp"
#include "dmml/data.hpp"
#include "dmml/losses.hpp"
#include "dmml/model.hpp"
#include "dmml/nn.hpp"
#include "dmml/resource.hpp"
#include "dmml/rng.hpp"
#include "dmml/wireless.hpp"

namespace dmml {

// Runs fn(0..n-1) on up to `threads` workers. The first exception is
// rethrown after all workers finish.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(threads, n); ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

struct DeviceState {
    std::size_t id = 0;
    DevicePartition partition;
    DeviceModel model;
    std::map<int, Matrix> inputs;  // owned modalities only, one row per local sample
    std::vector<int> labels;
    std::vector<int> label_set;
    int nominal_iterations = 0;  // N_k
    bool exhausted = false;
    int exhausted_round = 0;
};

// Called after every nominal iteration slot of a local update, including
// skipped ones. `active` lists the modalities trained in that slot.
using IterationObserver =
    std::function<void(std::size_t device, int round, int iteration, const std::vector<int>& active,
                       const DeviceModel& model)>;

struct RoundRecord {
    int round = 0;
    std::size_t device = 0;
    RunMode mode = RunMode::dmml;
    double acc = 0.0;
    std::map<int, double> acc_modality;
    LossBreakdown loss;               // mean over executed iterations
    std::optional<double> loss_gen;   // mean over generator iterations
    std::map<int, double> gamma;      // metric of the next-round schedule, all modalities
    std::map<int, double> phi;        // mean variation over the device's neighborhood, owned modalities
    std::map<int, int> iterations;    // N^m used this round
    int max_iterations = 0;           // N_max used this round
    EnergyBreakdown energy;
    double remaining = 0.0;
    bool infeasible = false;          // next-round schedule flagged for an owned modality
    bool active = true;               // false once the device is exhausted
};

struct LocalUpdateResult {
    LossBreakdown mean_loss;
    int executed = 0;
    std::optional<double> gen_loss;
    bool generator_skipped = false;
};

// Teacher features for one minibatch: `draws` generator samples per active
// modality, noise drawn independently per (datum, modality, draw).
inline TeacherFeatures sample_teacher(const GeneratorParams& g, std::span<const int> labels,
                                      const std::vector<int>& active, std::size_t draws, std::size_t noise_dim,
                                      Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    TeacherFeatures t;
    for (int m : active) {
        auto& list = t[m];
        for (std::size_t s = 0; s < draws; ++s) {
            Matrix z(labels.size(), noise_dim);
            for (double& v : z.values()) v = normal(rng);
            list.push_back(generator_forward(z, labels, g).output);
        }
    }
    return t;
}

struct LocalUpdateOptions {
    RunMode mode = RunMode::dmml;
    LossWeights weights;
    std::size_t batch_size = 32;
    std::size_t local_epochs = 1;
    std::size_t kd_samples = 1;
    bool use_teacher = false;
    std::uint64_t seed = 0;
};

// N_k local iteration slots. A slot with no active modality is skipped;
// otherwise F_tot is evaluated on the slot's minibatch over the active
// modalities and one optimizer step updates those branches and the head.
inline LocalUpdateResult local_update(DeviceState& d, int round, const std::map<int, int>& iterations,
                                      const LocalUpdateOptions& opt, const IterationObserver& observer = {}) {
    const int nominal = d.nominal_iterations;
    std::map<int, std::vector<bool>> masks;
    for (int m : d.model.modalities) {
        auto it = iterations.find(m);
        const int n = it == iterations.end() ? 0 : it->second;
        masks[m] = build_mask(n, nominal, opt.seed, d.id, round, m);
    }
    const std::size_t samples = d.labels.size();
    const std::size_t per_epoch = (samples + opt.batch_size - 1) / opt.batch_size;
    std::vector<std::size_t> order(samples);
    std::size_t current_epoch = std::numeric_limits<std::size_t>::max();
    Rng kd_rng = make_rng(opt.seed, Stream::kd_noise,
                          {static_cast<std::uint64_t>(d.id), static_cast<std::uint64_t>(round)});

    LocalUpdateResult res;
    std::vector<ParamBlock*> blocks = d.model.network_blocks();
    for (int n = 0; n < nominal; ++n) {
        const std::size_t epoch = static_cast<std::size_t>(n) / per_epoch;
        const std::size_t slot = static_cast<std::size_t>(n) % per_epoch;
        if (epoch != current_epoch) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            Rng rng = make_rng(opt.seed, Stream::batch_order,
                               {static_cast<std::uint64_t>(d.id), static_cast<std::uint64_t>(round), epoch});
            std::shuffle(order.begin(), order.end(), rng);
            current_epoch = epoch;
        }
        std::vector<int> active;
        for (int m : d.model.modalities)
            if (masks[m][static_cast<std::size_t>(n)]) active.push_back(m);
        if (!active.empty()) {
            const std::size_t lo = slot * opt.batch_size;
            const std::size_t hi = std::min(samples, lo + opt.batch_size);
            std::vector<std::size_t> ids(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                         order.begin() + static_cast<std::ptrdiff_t>(hi));
            std::map<int, Matrix> batch;
            for (int m : active) {
                const Matrix& src = d.inputs.at(m);
                Matrix b(ids.size(), src.cols());
                for (std::size_t i = 0; i < ids.size(); ++i) {
                    const auto r = src.row(ids[i]);
                    std::copy(r.begin(), r.end(), b.row(i).begin());
                }
                batch.emplace(m, std::move(b));
            }
            std::vector<int> y(ids.size());
            for (std::size_t i = 0; i < ids.size(); ++i) y[i] = d.labels[ids[i]];

            std::optional<TeacherFeatures> teacher;
            if (opt.use_teacher)
                teacher = sample_teacher(d.model.generator, y, active, opt.kd_samples,
                                         d.model.generator.input_len() - d.model.head.common_w.rows(), kd_rng);
            GradientSet grads;
            LossBreakdown l;
            try {
                l = f_tot(d.model, batch, y, active, opt.mode, opt.weights, teacher ? &*teacher : nullptr, &grads);
            } catch (const NumericalError& e) {
                throw NumericalError("round " + std::to_string(round) + " device " + std::to_string(d.id) +
                                     " iteration " + std::to_string(n + 1) + ": " + e.what());
            }
            optimizer_step(d.model.model_opt, blocks, grads);
            res.mean_loss.task += l.task;
            res.mean_loss.sim += l.sim;
            res.mean_loss.cls += l.cls;
            res.mean_loss.dif += l.dif;
            res.mean_loss.kd += l.kd;
            res.mean_loss.total += l.total;
            ++res.executed;
        }
        if (observer) observer(d.id, round, n + 1, active, d.model);
    }
    if (res.executed > 0) {
        const double inv = 1.0 / res.executed;
        res.mean_loss.task *= inv;
        res.mean_loss.sim *= inv;
        res.mean_loss.cls *= inv;
        res.mean_loss.dif *= inv;
        res.mean_loss.kd *= inv;
        res.mean_loss.total *= inv;
    }
    return res;
}

// N-hat steps on F_gen with the post-update common classifier frozen.
// Returns the mean generator loss, or nothing when skipped.
inline std::optional<double> train_generator(DeviceState& d, int round, int steps, std::size_t batch, double beta,
                                             std::uint64_t seed) {
    if (steps <= 0 || d.label_set.empty()) return std::nullopt;
    const auto mean = mean_common_features(d.inputs, d.labels, d.model.branches);
    const Matrix common_w = d.model.head.common_w.value();
    Rng rng = make_rng(seed, Stream::generator, {static_cast<std::uint64_t>(d.id), static_cast<std::uint64_t>(round)});
    std::uniform_int_distribution<std::size_t> pick(0, d.label_set.size() - 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<ParamBlock*> blocks = d.model.generator.blocks();
    double total = 0.0;
    for (int s = 0; s < steps; ++s) {
        std::vector<int> y(batch);
        for (int& v : y) v = d.label_set[pick(rng)];
        Matrix z(batch, d.model.generator.input_len() - d.model.head.common_w.rows());
        for (double& v : z.values()) v = normal(rng);
        GradientSet grads;
        total += f_gen(d.model.generator, common_w, mean, y, z, beta, &grads);
        optimizer_step(d.model.gen_opt, blocks, grads);
    }
    return total / steps;
}

struct Evaluation {
    double acc = 0.0;
    std::map<int, double> acc_modality;
};

inline std::size_t argmax_row(std::span<const double> r) {
    return static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
}

inline Evaluation evaluate(const DeviceModel& model, const SampleSet& test) {
    FeatureMap feats;
    for (int m : model.modalities) feats.emplace(m, extract(test.modality(m), model.branch(m)).features);
    Evaluation e;
    const Matrix logits = fuse_predict(feats, model.modalities, model.head, model.branches);
    const double n = static_cast<double>(test.size());
    std::size_t hit = 0;
    for (std::size_t r = 0; r < test.size(); ++r)
        if (static_cast<int>(argmax_row(logits.row(r))) == test.labels[r]) ++hit;
    e.acc = static_cast<double>(hit) / n;
    for (int m : model.modalities) {
        const Matrix lm = per_modality_predict(m, feats.at(m), model.head, model.branch(m), model.modalities.size());
        std::size_t h = 0;
        for (std::size_t r = 0; r < test.size(); ++r)
            if (static_cast<int>(argmax_row(lm.row(r))) == test.labels[r]) ++h;
        e.acc_modality[m] = static_cast<double>(h) / n;
    }
    return e;
}

// Parameter values of a set of blocks, keyed by id.
using BlockValues = std::map<std::string, Matrix>;

inline BlockValues snapshot(const DeviceModel& d) {
    BlockValues v;
    for (const ParamBlock* p : d.all_blocks()) v.emplace(p->id(), p->value());
    return v;
}

inline std::vector<double> flatten(const BlockValues& v, const std::vector<std::string>& ids) {
    std::vector<double> out;
    for (const auto& id : ids) {
        const auto vals = v.at(id).values();
        out.insert(out.end(), vals.begin(), vals.end());
    }
    return out;
}

inline std::vector<std::string> extractor_ids(int m) {
    const std::string pre = branch_prefix(m);
    return {pre + "ext.w1", pre + "ext.b1", pre + "ext.w2", pre + "ext.b2"};
}

// Simultaneous aggregation: every active device replaces its blocks with the
// weighted sum of the snapshots of itself and its neighbors. Modality blocks
// use the modality weights, the head (and the generator when exchanged) the
// common weights. Inactive devices are left untouched.
inline void aggregate(std::vector<DeviceState>& devices, const std::vector<BlockValues>& local,
                      const Topology& topo, const std::vector<bool>& active, bool with_generator) {
    const std::size_t K = devices.size();
    auto mix = [&](std::size_t k, ParamBlock& p, const WeightMatrix& w) {
        Matrix acc(p.rows(), p.cols());
        for (std::size_t j = 0; j < K; ++j) {
            if (w[k][j] == 0.0) continue;
            acc.add_scaled(local[j].at(p.id()), w[k][j]);
        }
        p.assign(acc);
    };
    for (std::size_t k = 0; k < K; ++k) {
        if (!active[k]) continue;
        DeviceModel& d = devices[k].model;
        for (auto& [m, b] : d.branches)
            for (ParamBlock* p : b.blocks()) mix(k, *p, topo.modality_weights.at(m));
        for (ParamBlock* p : d.head.blocks()) mix(k, *p, topo.common_weights);
        if (with_generator)
            for (ParamBlock* p : d.generator.blocks()) mix(k, *p, topo.common_weights);
    }
}

struct VariationRow {
    std::vector<double> coefficients;  // xi / (phi + eps), zero outside the neighborhood
    double mean_phi = 0.0;
    bool degenerate = false;
};

// Device k's view for modality m after aggregation: phi_{k,k'} for k' in its
// modality neighborhood (itself included).
inline VariationRow variation_row(std::size_t k, int m, const std::vector<BlockValues>& previous,
                                  const std::vector<BlockValues>& local, const DeviceModel& aggregated,
                                  const Topology& topo) {
    const std::size_t K = topo.size();
    const auto ids = extractor_ids(m);
    const auto prev = flatten(previous[k], ids);
    const auto now = flatten_extractor(aggregated.branch(m));
    const WeightMatrix& xi = topo.modality_weights.at(m);
    VariationRow row;
    row.coefficients.assign(K, 0.0);
    double sum = 0.0;
    int count = 0;
    for (std::size_t j = 0; j < K; ++j) {
        if (j != k && !topo.modality_adjacency.at(m)[k][j]) continue;
        const auto fresh = flatten(local[j], ids);
        const Variation v = param_variation(fresh, prev, now);
        row.degenerate = row.degenerate || v.degenerate;
        row.coefficients[j] = xi[k][j] / (v.value + kVariationEps);
        sum += v.value;
        ++count;
    }
    row.mean_phi = count ? sum / count : 0.0;
    return row;
}

class Simulator {
public:
    explicit Simulator(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.model.classes = cfg_.data.classes;
        cfg_.model.input_dims = cfg_.data.input_dims;
        cfg_.validate();
        data_ = generate(cfg_.data);
        partitions_ = make_partitions(data_.train, cfg_.data.classes, cfg_.devices, cfg_.gamma, cfg_.phi, cfg_.seed);
        std::vector<std::vector<int>> mods;
        for (const auto& p : partitions_) mods.push_back(p.modalities);
        static_topo_ = build_topology(cfg_.devices, cfg_.wireless, mods, cfg_.seed);
        flops_ = cfg_.flops();
        payload_ = cfg_.payload();
        gen_steps_ = uses_generator(cfg_.mode) ? cfg_.training.generator_iterations : 0;

        const std::size_t K = cfg_.devices;
        devices_.resize(K);
        for (std::size_t k = 0; k < K; ++k) {
            DeviceState& d = devices_[k];
            d.id = k;
            d.partition = partitions_[k];
            if (d.partition.samples.empty()) throw ConfigError("device " + std::to_string(k) + " has no data");
            d.model = make_device_model(cfg_.model, d.partition.modalities, cfg_.seed);
            configure_optimizer(d.model.model_opt, cfg_.optimizer.model_lr);
            configure_optimizer(d.model.gen_opt, cfg_.optimizer.generator_lr);
            for (int m : d.model.modalities) d.inputs.emplace(m, data_.train.gather(m, d.partition.samples));
            for (std::size_t id : d.partition.samples) d.labels.push_back(data_.train.labels[id]);
            std::vector<int> ls = d.labels;
            std::sort(ls.begin(), ls.end());
            ls.erase(std::unique(ls.begin(), ls.end()), ls.end());
            d.label_set = ls;
            const std::size_t per_epoch = (d.labels.size() + cfg_.training.batch_size - 1) / cfg_.training.batch_size;
            d.nominal_iterations = static_cast<int>(per_epoch * cfg_.training.local_epochs);
        }

        std::vector<double> budget(K);
        for (std::size_t k = 0; k < K; ++k)
            budget[k] = cfg_.hardware.initial_energy_j > 0.0 ? cfg_.hardware.initial_energy_j : auto_budget(k);
        ledger_ = EnergyLedger(budget);

        active_.assign(K, true);
        round_topo_ = static_topo_;
        const auto gains = sample_round_channels(static_topo_, 1, cfg_.wireless.carrier_ghz, cfg_.seed);
        std::vector<int> n_max(K);
        for (std::size_t k = 0; k < K; ++k) {
            const IterationBudget b = budget_for(k, round_topo_, gains);
            n_max[k] = b.max_iterations;
            if (b.exhausted) retire(k, 1);
        }
        std::vector<std::vector<int>> owned;
        for (const auto& d : devices_) owned.push_back(d.model.modalities);
        schedule_ = full_schedule(n_max, owned);
    }

    const ExperimentConfig& config() const { return cfg_; }
    const Dataset& dataset() const { return data_; }
    const std::vector<DevicePartition>& partitions() const { return partitions_; }
    const Topology& topology() const { return static_topo_; }
    const std::vector<DeviceState>& devices() const { return devices_; }
    const EnergyLedger& ledger() const { return ledger_; }
    const FlopsProfile& flops() const { return flops_; }
    const PayloadProfile& payload() const { return payload_; }
    const IterationSchedule& next_schedule() const { return schedule_; }
    int rounds_completed() const { return round_; }
    bool done() const { return round_ >= cfg_.rounds; }
    void set_iteration_observer(IterationObserver obs) { observer_ = std::move(obs); }

    std::vector<RoundRecord> step() {
        if (done()) throw SimulationError("simulator: all rounds already completed");
        const int t = ++round_;
        const std::size_t K = devices_.size();
        const bool with_gen = uses_generator(cfg_.mode);

        round_topo_ = assemble_topology(static_topo_.positions, static_topo_.adjacency, static_topo_.modalities,
                                        active_);
        const auto gains = sample_round_channels(static_topo_, t, cfg_.wireless.carrier_ghz, cfg_.seed);
        const IterationSchedule used = schedule_;

        std::vector<BlockValues> previous(K);
        for (std::size_t k = 0; k < K; ++k) previous[k] = snapshot(devices_[k].model);

        // Local updates and generator training.
        LocalUpdateOptions opt;
        opt.mode = cfg_.mode;
        opt.weights = cfg_.loss;
        opt.batch_size = cfg_.training.batch_size;
        opt.local_epochs = cfg_.training.local_epochs;
        opt.kd_samples = cfg_.training.kd_samples;
        opt.use_teacher = with_gen && t > 1;
        opt.seed = cfg_.seed;
        std::vector<LocalUpdateResult> local(K);
        parallel_for(K, cfg_.threads, [&](std::size_t k) {
            if (!active_[k]) return;
            DeviceState& d = devices_[k];
            local[k] = local_update(d, t, used.iterations[k], opt, observer_);
            if (with_gen) {
                local[k].gen_loss = train_generator(d, t, gen_steps_, cfg_.training.generator_batch,
                                                    cfg_.loss.beta, cfg_.seed);
                local[k].generator_skipped = gen_steps_ > 0 && !local[k].gen_loss;
            }
        });

        // Energy of this round.
        std::vector<EnergyBreakdown> spent(K);
        for (std::size_t k = 0; k < K; ++k) {
            if (!active_[k]) continue;
            RoundWork w;
            w.iterations = used.iterations[k];
            w.max_iterations = used.max_iterations[k];
            w.generator_iterations = gen_steps_;
            spent[k] = round_energy(w, flops_, payload_, cfg_.hardware, cfg_.radio(), links(k, round_topo_, gains));
            ledger_.commit(k, spent[k]);
        }

        // Exchange and aggregation.
        std::vector<BlockValues> fresh(K);
        for (std::size_t k = 0; k < K; ++k) fresh[k] = snapshot(devices_[k].model);
        aggregate(devices_, fresh, round_topo_, active_, with_gen);

        // Variation and coefficient rows.
        std::vector<std::map<int, VariationRow>> rows(K);
        for (std::size_t k = 0; k < K; ++k) {
            if (!active_[k]) continue;
            for (int m : devices_[k].model.modalities)
                rows[k][m] = variation_row(k, m, previous, fresh, devices_[k].model, round_topo_);
        }

        // N_max for the next round.
        const auto next_gains = sample_round_channels(static_topo_, t + 1, cfg_.wireless.carrier_ghz, cfg_.seed);
        std::vector<int> n_max(K, 0);
        for (std::size_t k = 0; k < K; ++k) {
            if (!active_[k]) continue;
            const IterationBudget b = budget_for(k, round_topo_, next_gains);
            n_max[k] = b.max_iterations;
            if (b.exhausted) retire(k, t + 1);
        }

        // Cluster head.
        std::vector<ClusterReport> reports(K);
        for (std::size_t k = 0; k < K; ++k) {
            reports[k].device = static_cast<int>(k);
            reports[k].max_iterations = active_[k] ? n_max[k] : 0;
            reports[k].modalities = devices_[k].model.modalities;
            for (int m : devices_[k].model.modalities)
                reports[k].coefficients[m] =
                    rows[k].count(m) ? rows[k][m].coefficients : std::vector<double>(K, 0.0);
        }
        const ClusterDecision decision = cluster_head_round(reports, K, static_topo_.cluster_head(),
                                                            cfg_.mode == RunMode::dmml_kd_balance);
        schedule_ = decision.schedule;

        // Evaluation.
        std::vector<Evaluation> evals(K);
        parallel_for(K, cfg_.threads, [&](std::size_t k) { evals[k] = evaluate(devices_[k].model, data_.test); });

        std::vector<RoundRecord> out(K);
        for (std::size_t k = 0; k < K; ++k) {
            RoundRecord& r = out[k];
            r.round = t;
            r.device = k;
            r.mode = cfg_.mode;
            r.acc = evals[k].acc;
            r.acc_modality = evals[k].acc_modality;
            r.loss = local[k].mean_loss;
            r.loss_gen = local[k].gen_loss;
            r.gamma = schedule_.gamma;
            for (const auto& [m, row] : rows[k]) r.phi[m] = row.mean_phi;
            r.iterations = used.iterations[k];
            r.max_iterations = used.max_iterations[k];
            if (!round_active(k, t)) {
                for (auto& [m, n] : r.iterations) n = 0;
                r.max_iterations = 0;
            }
            r.energy = spent[k];
            r.remaining = ledger_.remaining(k);
            for (int m : devices_[k].model.modalities)
                if (schedule_.infeasible.count(m) && schedule_.infeasible.at(m) && schedule_.iterations[k].count(m) &&
                    devices_[k].model.modalities.size() > 1)
                    r.infeasible = true;
            r.active = round_active(k, t);
        }
        return out;
    }

    std::vector<RoundRecord> run() {
        std::vector<RoundRecord> all;
        while (!done()) {
            auto r = step();
            all.insert(all.end(), r.begin(), r.end());
        }
        return all;
    }

private:
    void configure_optimizer(OptimizerState& s, double lr) const {
        s.kind = cfg_.optimizer.kind;
        s.learning_rate = lr;
        s.beta1 = cfg_.optimizer.beta1;
        s.beta2 = cfg_.optimizer.beta2;
        s.eps = cfg_.optimizer.eps;
    }

    bool round_active(std::size_t k, int t) const {
        return !devices_[k].exhausted || devices_[k].exhausted_round > t;
    }

    void retire(std::size_t k, int from_round) {
        active_[k] = false;
        devices_[k].exhausted = true;
        devices_[k].exhausted_round = from_round;
    }

    LinkSet links(std::size_t k, const Topology& topo, const ChannelGains& gains) const {
        LinkSet l;
        for (int m : devices_[k].model.modalities)
            for (std::size_t j : topo.modality_neighbors(k, m)) l.modality[m].push_back(gains[k][j]);
        for (std::size_t j : topo.neighbors(k)) l.common.push_back(gains[k][j]);
        return l;
    }

    IterationBudget budget_for(std::size_t k, const Topology& topo, const ChannelGains& gains) const {
        return max_iterations(ledger_.remaining(k), devices_[k].model.modalities, devices_[k].nominal_iterations,
                              gen_steps_, flops_, payload_, cfg_.hardware, cfg_.radio(), links(k, topo, gains));
    }

    // Fraction of what the full schedule would need over all rounds at the
    // reference-scale profile, with every device active.
    double auto_budget(std::size_t k) const {
        const bool gen = uses_generator(cfg_.mode);
        const FlopsProfile f = reference_flops_profile(flops_, gen);
        const PayloadProfile p = reference_payload_profile();
        double total = 0.0;
        for (int t = 1; t <= std::max(cfg_.rounds, 1); ++t) {
            const auto g = sample_round_channels(static_topo_, t, cfg_.wireless.carrier_ghz, cfg_.seed);
            RoundWork w;
            for (int m : devices_[k].model.modalities) w.iterations[m] = devices_[k].nominal_iterations;
            w.max_iterations = devices_[k].nominal_iterations;
            w.generator_iterations = gen_steps_;
            total += round_energy(w, f, p, cfg_.hardware, cfg_.radio(), links(k, static_topo_, g)).total();
        }
        return cfg_.auto_budget_fraction * total;
    }

    ExperimentConfig cfg_;
    Dataset data_;
    std::vector<DevicePartition> partitions_;
    Topology static_topo_;
    Topology round_topo_;
    FlopsProfile flops_;
    PayloadProfile payload_;
    int gen_steps_ = 0;
    std::vector<DeviceState> devices_;
    EnergyLedger ledger_;
    std::vector<bool> active_;
    IterationSchedule schedule_;
    IterationObserver observer_;
    int round_ = 0;
};

}  // namespace dmml
