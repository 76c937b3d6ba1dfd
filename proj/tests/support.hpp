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

// Shared fixtures and reference oracles for the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "dmml/dmml.hpp"

namespace dmml::test {

inline ModelShape tiny_shape() {
    ModelShape s;
    s.input_dims = {3, 4};
    s.hidden = 5;
    s.common_len = 3;
    s.classes = 4;
    s.noise_dim = 2;
    s.gen_hidden = 5;
    return s;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Matrix m(rows, cols);
    for (double& v : m.values()) v = normal(rng);
    return m;
}

// Model with every block perturbed, biases included, so no gradient is
// structurally zero.
inline DeviceModel random_model(const ModelShape& s, std::vector<int> modalities, std::uint64_t seed) {
    DeviceModel d = make_device_model(s, std::move(modalities), seed);
    Rng rng(seed * 7919 + 17);
    std::normal_distribution<double> normal(0.0, 0.3);
    for (ParamBlock* p : d.all_blocks())
        for (double& v : p->values()) v += normal(rng);
    return d;
}

inline std::map<int, Matrix> random_inputs(const ModelShape& s, const std::vector<int>& modalities,
                                           std::size_t batch, Rng& rng) {
    std::map<int, Matrix> x;
    for (int m : modalities) x.emplace(m, random_matrix(batch, s.input_dim(m), rng));
    return x;
}

inline std::vector<int> random_labels(std::size_t n, std::size_t classes, Rng& rng) {
    std::uniform_int_distribution<int> u(0, static_cast<int>(classes) - 1);
    std::vector<int> y(n);
    for (int& v : y) v = u(rng);
    return y;
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

struct GradCheck {
    double max_rel = 0.0;
    std::string worst;
    std::size_t checked = 0;
    std::size_t skipped = 0;  // coordinates whose +-h probe crosses a ReLU kink
};

// Every ReLU pre-activation the loss passes through, for kink detection.
using KinkProbe = std::function<std::vector<double>(const DeviceModel&)>;

// Relative error below this magnitude is measured against the floor.
inline constexpr double kGradFloor = 1e-6;

// Central differences of `loss` over every entry of the named blocks,
// compared with `analytic` (a missing block counts as a zero gradient).
// A coordinate is skipped when some probed pre-activation changes sign
// between v - h and v + h, where the central difference is not a derivative.
inline GradCheck check_gradients(DeviceModel& model, const std::vector<std::string>& ids,
                                 const std::function<double(const DeviceModel&)>& loss, const GradientSet& analytic,
                                 const KinkProbe& probe = {}, double h = 1e-5) {
    GradCheck out;
    for (const auto& id : ids) {
        ParamBlock* p = model.find(id);
        if (!p) throw SimulationError("check_gradients: unknown block " + id);
        auto it = analytic.find(id);
        for (std::size_t i = 0; i < p->size(); ++i) {
            const double v = p->values()[i];
            p->values()[i] = v + h;
            const double fp = loss(model);
            const std::vector<double> pre_p = probe ? probe(model) : std::vector<double>{};
            p->values()[i] = v - h;
            const double fm = loss(model);
            const std::vector<double> pre_m = probe ? probe(model) : std::vector<double>{};
            p->values()[i] = v;
            bool kink = false;
            for (std::size_t j = 0; j < pre_p.size() && !kink; ++j)
                kink = (pre_p[j] > 0.0) != (pre_m[j] > 0.0);
            if (kink) {
                ++out.skipped;
                continue;
            }
            const double num = (fp - fm) / (2.0 * h);
            const double an = it == analytic.end() ? 0.0 : it->second.values()[i];
            const double rel = std::abs(an - num) / std::max({std::abs(an), std::abs(num), kGradFloor});
            ++out.checked;
            if (rel > out.max_rel) {
                out.max_rel = rel;
                out.worst = id + "[" + std::to_string(i) + "]";
            }
        }
    }
    return out;
}

inline KinkProbe extractor_probe(const std::map<int, Matrix>& x) {
    return [&x](const DeviceModel& m) {
        std::vector<double> out;
        for (const auto& [mod, xm] : x) {
            const ExtractorPass pass = extract(xm, m.branch(mod));
            out.insert(out.end(), pass.pre_hidden.values().begin(), pass.pre_hidden.values().end());
        }
        return out;
    };
}

inline std::vector<std::string> block_ids(const std::vector<ParamBlock*>& blocks) {
    std::vector<std::string> ids;
    for (auto* p : blocks) ids.push_back(p->id());
    return ids;
}

// A loss over extracted features and the common classifier.
using FeatureLoss = std::function<double(const FeatureMap&, const Matrix&, FeatureGrads*)>;

// Evaluates `fl` on the model's features of x and, when grads is set,
// back-propagates to the extractor and head parameters.
inline double feature_objective(const DeviceModel& model, const std::map<int, Matrix>& x, const FeatureLoss& fl,
                                GradientSet* grads) {
    std::map<int, ExtractorPass> passes;
    FeatureMap feats;
    for (const auto& [m, xm] : x) {
        passes.emplace(m, extract(xm, model.branch(m)));
        feats.emplace(m, passes.at(m).features);
    }
    FeatureGrads fg;
    const double v = fl(feats, model.head.common_w.value(), grads ? &fg : nullptr);
    if (!grads) return v;
    for (const auto& [m, pass] : passes) {
        const Features& f = feats.at(m);
        const Matrix dc = fg.d_common.count(m) ? fg.d_common.at(m) : Matrix(f.common.rows(), f.common.cols());
        const Matrix ds = fg.d_specific.count(m) ? fg.d_specific.at(m) : Matrix(f.specific.rows(), f.specific.cols());
        extractor_backward(pass, model.branch(m), dc, ds, *grads);
    }
    if (!fg.d_common_w.empty()) accumulate(*grads, model.head.common_w.id(), fg.d_common_w);
    return v;
}

// Teacher features from fixed noise, held constant during a check.
inline TeacherFeatures fixed_teacher(const GeneratorParams& g, const std::vector<int>& labels,
                                     const std::vector<int>& modalities, std::size_t draws, std::size_t noise_dim,
                                     std::uint64_t seed) {
    Rng rng(seed);
    return sample_teacher(g, labels, modalities, draws, noise_dim, rng);
}

struct GradientCase {
    std::string name;
    std::function<GradCheck(std::uint64_t)> run;
};

// One randomized small model per seed: batch of 3, both modalities, random
// loss weights. F_tot drops a modality on every third seed.
inline std::vector<GradientCase> gradient_cases() {
    struct Setup {
        ModelShape shape = tiny_shape();
        DeviceModel model;
        std::map<int, Matrix> x;
        std::vector<int> y;
        LossWeights w;
        TeacherFeatures teacher;
        std::map<int, std::vector<double>> means;
        Matrix z;
        explicit Setup(std::uint64_t seed) {
            model = random_model(shape, {1, 2}, seed);
            Rng rng(seed + 1000);
            x = random_inputs(shape, {1, 2}, 3, rng);
            y = random_labels(3, shape.classes, rng);
            std::uniform_real_distribution<double> a(0.5, 2.0);
            w = {a(rng), a(rng), a(rng), a(rng), a(rng)};
            teacher = fixed_teacher(model.generator, y, {1, 2}, 2, shape.noise_dim, seed + 5);
            for (std::size_t c = 0; c < shape.classes; ++c) {
                std::vector<double> v(shape.common_len);
                for (double& e : v) e = std::normal_distribution<double>(0.0, 1.0)(rng);
                means[static_cast<int>(c)] = v;
            }
            z = random_matrix(3, shape.noise_dim, rng);
        }
    };
    auto features = [](const std::string& name, std::function<double(const Setup&, const FeatureMap&, const Matrix&,
                                                                      FeatureGrads*)> fl) {
        return GradientCase{name, [fl](std::uint64_t seed) {
                                Setup st(seed);
                                auto bound = [&](const FeatureMap& f, const Matrix& cw, FeatureGrads* g) {
                                    return fl(st, f, cw, g);
                                };
                                GradientSet grads;
                                feature_objective(st.model, st.x, bound, &grads);
                                return check_gradients(
                                    st.model, block_ids(st.model.network_blocks()),
                                    [&](const DeviceModel& m) { return feature_objective(m, st.x, bound, nullptr); },
                                    grads, extractor_probe(st.x));
                            }};
    };
    std::vector<GradientCase> cases;
    cases.push_back({"F_k", [](std::uint64_t seed) {
                         Setup st(seed);
                         auto loss = [&](const DeviceModel& m, GradientSet* g) {
                             return f_tot(m, st.x, st.y, {1, 2}, RunMode::dmml, st.w, nullptr, g).total;
                         };
                         GradientSet grads;
                         loss(st.model, &grads);
                         return check_gradients(st.model, block_ids(st.model.network_blocks()),
                                                [&](const DeviceModel& m) { return loss(m, nullptr); }, grads,
                                                extractor_probe(st.x));
                     }});
    cases.push_back(features("F_sim", [](const Setup&, const FeatureMap& f, const Matrix& cw, FeatureGrads* g) {
        return f_sim(f, cw, g);
    }));
    cases.push_back(features("F_cls", [](const Setup& st, const FeatureMap& f, const Matrix& cw, FeatureGrads* g) {
        return f_cls(f, cw, st.y, g);
    }));
    cases.push_back(features("F_dif", [](const Setup&, const FeatureMap& f, const Matrix&, FeatureGrads* g) {
        return f_dif(f, g);
    }));
    cases.push_back(features("F_dec", [](const Setup& st, const FeatureMap& f, const Matrix& cw, FeatureGrads* g) {
        return f_dec(f, cw, st.y, st.w, g);
    }));
    cases.push_back(features("F_kd", [](const Setup& st, const FeatureMap& f, const Matrix& cw, FeatureGrads* g) {
        return f_kd(f, cw, st.teacher, g);
    }));
    cases.push_back({"F_gen", [](std::uint64_t seed) {
                         Setup st(seed);
                         const Matrix cw = st.model.head.common_w.value();
                         GradientSet grads;
                         f_gen(st.model.generator, cw, st.means, st.y, st.z, st.w.beta, &grads);
                         return check_gradients(
                             st.model, block_ids(st.model.generator.blocks()),
                             [&](const DeviceModel& m) {
                                 return f_gen(m.generator, cw, st.means, st.y, st.z, st.w.beta, nullptr);
                             },
                             grads, [&](const DeviceModel& m) {
                                 const GeneratorPass pass = generator_forward(st.z, st.y, m.generator);
                                 return std::vector<double>(pass.pre_hidden.values().begin(),
                                                            pass.pre_hidden.values().end());
                             });
                     }});
    cases.push_back({"F_tot", [](std::uint64_t seed) {
                         Setup st(seed);
                         const std::vector<int> active = seed % 3 == 0 ? std::vector<int>{1} : std::vector<int>{1, 2};
                         auto loss = [&](const DeviceModel& m, GradientSet* g) {
                             return f_tot(m, st.x, st.y, active, RunMode::dmml_kd, st.w, &st.teacher, g).total;
                         };
                         GradientSet grads;
                         loss(st.model, &grads);
                         return check_gradients(st.model, block_ids(st.model.network_blocks()),
                                                [&](const DeviceModel& m) { return loss(m, nullptr); }, grads,
                                                extractor_probe(st.x));
                     }});
    return cases;
}

// ---------------------------------------------------------------------------
// Scheduler replay oracle
//
// Restates the iteration scheduler from its definition with explicit double
// sums: full-budget metric per modality, argmin with lowest-id ties, then a
// one-at-a-time round-robin over the multi-modal owners in ascending id,
// skipping owners already at zero.
// ---------------------------------------------------------------------------

struct ReplayResult {
    int reference = 0;
    std::map<int, std::vector<int>> n;  // per modality, per device (0 for non-owners)
    std::map<int, bool> infeasible;
    std::map<int, double> gamma;
};

inline double replay_metric(const std::vector<int>& n, const WeightMatrix& coef) {
    double g = 0.0;
    for (std::size_t k = 0; k < coef.size(); ++k)
        for (std::size_t kp = 0; kp < coef.size(); ++kp) g += static_cast<double>(n[kp]) * coef[k][kp];
    return g;
}

inline ReplayResult replay_schedule(const std::vector<int>& n_max, const CoefficientTable& coef,
                                    const std::vector<std::vector<int>>& owned) {
    const std::size_t K = n_max.size();
    auto has = [&](std::size_t k, int m) { return std::count(owned[k].begin(), owned[k].end(), m) > 0; };
    std::vector<int> present;
    for (const auto& [m, c] : coef) {
        for (std::size_t k = 0; k < K; ++k)
            if (has(k, m)) {
                present.push_back(m);
                break;
            }
    }
    ReplayResult r;
    std::map<int, double> full;
    for (int m : present) {
        std::vector<int> n(K, 0);
        for (std::size_t k = 0; k < K; ++k)
            if (has(k, m)) n[k] = n_max[k];
        r.n[m] = n;
        full[m] = replay_metric(n, coef.at(m));
    }
    r.reference = present.front();
    for (int m : present)
        if (full[m] < full[r.reference]) r.reference = m;
    const double target = full[r.reference];
    for (int m : present) {
        std::vector<int>& n = r.n[m];
        r.infeasible[m] = false;
        if (m != r.reference) {
            std::vector<std::size_t> multi;
            for (std::size_t k = 0; k < K; ++k)
                if (has(k, m) && owned[k].size() > 1) multi.push_back(k);
            std::size_t pos = 0;
            while (replay_metric(n, coef.at(m)) > target) {
                bool found = false;
                for (std::size_t step = 0; step < multi.size(); ++step) {
                    const std::size_t idx = (pos + step) % multi.size();
                    if (n[multi[idx]] > 0) {
                        --n[multi[idx]];
                        pos = idx + 1;
                        found = true;
                        break;
                    }
                }
                if (!found) {
                    r.infeasible[m] = true;
                    break;
                }
            }
        }
        r.gamma[m] = replay_metric(n, coef.at(m));
    }
    return r;
}

struct SchedulerInstance {
    std::vector<int> n_max;
    std::vector<std::vector<int>> owned;
    CoefficientTable coef;
};

// K <= 4 devices, M <= 3 modalities, N_max <= 8, random graph, MH weights
// per modality subgraph and random variations.
inline SchedulerInstance random_scheduler_instance(Rng& rng) {
    std::uniform_int_distribution<int> kdist(1, 4), mdist(1, 3), ndist(0, 8);
    std::uniform_real_distribution<double> u(0.0, 1.0), phi(0.01, 1.0);
    SchedulerInstance in;
    const std::size_t K = static_cast<std::size_t>(kdist(rng));
    const int M = mdist(rng);
    in.n_max.resize(K);
    in.owned.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
        in.n_max[k] = ndist(rng);
        while (in.owned[k].empty())
            for (int m = 1; m <= M; ++m)
                if (u(rng) < 0.6) in.owned[k].push_back(m);
    }
    Adjacency adj(K, std::vector<bool>(K, false));
    for (std::size_t i = 0; i < K; ++i)
        for (std::size_t j = i + 1; j < K; ++j)
            if (u(rng) < 0.7) adj[i][j] = adj[j][i] = true;
    for (int m = 1; m <= M; ++m) {
        std::vector<bool> members(K);
        bool any = false;
        for (std::size_t k = 0; k < K; ++k) {
            members[k] = std::count(in.owned[k].begin(), in.owned[k].end(), m) > 0;
            any = any || members[k];
        }
        if (!any) continue;
        const Adjacency sub = induced_subgraph(adj, members);
        const WeightMatrix xi = mh_weights(sub);
        WeightMatrix c(K, std::vector<double>(K, 0.0));
        for (std::size_t k = 0; k < K; ++k) {
            if (!members[k]) continue;
            for (std::size_t j = 0; j < K; ++j)
                if (j == k || sub[k][j]) c[k][j] = xi[k][j] / (phi(rng) + kVariationEps);
        }
        in.coef[m] = std::move(c);
    }
    return in;
}

// ---------------------------------------------------------------------------
// Small simulation configs
// ---------------------------------------------------------------------------

inline ExperimentConfig small_config(RunMode mode, std::size_t devices = 4, int rounds = 3) {
    ExperimentConfig c = config_from_string("");
    c.mode = mode;
    c.devices = devices;
    c.rounds = rounds;
    c.data.train_per_class = 20;
    c.data.test_per_class = 5;
    c.training.batch_size = 8;
    c.training.generator_iterations = 3;
    c.training.generator_batch = 8;
    c.plots = false;
    return c;
}

inline std::uint64_t hash_blocks(const std::vector<const ParamBlock*>& blocks) {
    std::uint64_t h = 1469598103934665603ull;
    for (const ParamBlock* p : blocks)
        for (double v : p->values()) {
            std::uint64_t bits = 0;
            std::memcpy(&bits, &v, sizeof bits);
            for (int i = 0; i < 8; ++i) h = (h ^ ((bits >> (8 * i)) & 0xffu)) * 1099511628211ull;
        }
    return h;
}

}  // namespace dmml::test
