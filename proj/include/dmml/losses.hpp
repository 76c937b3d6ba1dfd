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

// Scalar training objectives and their exact gradients.
//
// Every loss takes an optional gradient sink. When the sink is non-null the
// loss adds scale * dLoss/d(argument) into it; values are always returned
// unscaled.

#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dmml/model.hpp"
#include "dmml/nn.hpp"

namespace dmml {

inline constexpr double kProbFloor = 1e-12;

enum class RunMode { dmml, dmml_kd, dmml_kd_balance };

inline std::string to_string(RunMode m) {
    switch (m) {
        case RunMode::dmml: return "dmml";
        case RunMode::dmml_kd: return "dmml_kd";
        case RunMode::dmml_kd_balance: return "dmml_kd_balance";
    }
    return "?";
}

inline RunMode parse_mode(const std::string& s) {
    if (s == "dmml") return RunMode::dmml;
    if (s == "dmml_kd") return RunMode::dmml_kd;
    if (s == "dmml_kd_balance") return RunMode::dmml_kd_balance;
    throw ConfigError("mode: expected one of dmml, dmml_kd, dmml_kd_balance; got '" + s + "'");
}

inline bool uses_generator(RunMode m) { return m != RunMode::dmml; }

struct LossWeights {
    double sim = 1.0;   // alpha_1
    double cls = 1.0;   // alpha_2
    double dif = 1.0;   // alpha_3
    double kd = 1.0;    // alpha_4
    double beta = 1.0;  // generator feature-matching weight
};

// Gradients w.r.t. features and head parameters, filled lazily.
struct FeatureGrads {
    std::map<int, Matrix> d_common;
    std::map<int, Matrix> d_specific;
    std::map<int, Matrix> d_spec_w;
    Matrix d_common_w;
    Matrix d_bias;

    static Matrix& slot(std::map<int, Matrix>& map, int m, std::size_t r, std::size_t c) {
        auto it = map.find(m);
        if (it == map.end()) it = map.emplace(m, Matrix(r, c)).first;
        return it->second;
    }
    Matrix& common(int m, const Matrix& like) { return slot(d_common, m, like.rows(), like.cols()); }
    Matrix& specific(int m, const Matrix& like) { return slot(d_specific, m, like.rows(), like.cols()); }
    Matrix& spec_w(int m, const Matrix& like) { return slot(d_spec_w, m, like.rows(), like.cols()); }
    Matrix& common_w(const Matrix& like) {
        if (d_common_w.empty()) d_common_w = Matrix(like.rows(), like.cols());
        return d_common_w;
    }
    Matrix& bias(std::size_t classes) {
        if (d_bias.empty()) d_bias = Matrix(1, classes);
        return d_bias;
    }
};

namespace detail {

inline std::vector<double> log_softmax(std::span<const double> a) {
    const double lse = log_sum_exp(a);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - lse;
    return out;
}

inline double floored_log(double log_p) { return std::max(log_p, std::log(kProbFloor)); }

// KL(softmax(a) || softmax(b)); adds scale * gradient into da / db when non-empty.
inline double kl_logits(std::span<const double> a, std::span<const double> b, std::span<double> da,
                        std::span<double> db, double scale) {
    const auto la = log_softmax(a);
    const auto lb = log_softmax(b);
    double kl = 0.0;
    std::vector<double> p(a.size()), diff(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        p[i] = std::exp(la[i]);
        diff[i] = floored_log(la[i]) - floored_log(lb[i]);
        kl += p[i] * diff[i];
    }
    if (!da.empty())
        for (std::size_t i = 0; i < a.size(); ++i) da[i] += scale * p[i] * (diff[i] - kl);
    if (!db.empty())
        for (std::size_t i = 0; i < b.size(); ++i) db[i] += scale * (std::exp(lb[i]) - p[i]);
    return kl;
}

inline double cross_entropy_logits(std::span<const double> a, int y, std::span<double> da, double scale) {
    const auto la = log_softmax(a);
    if (!da.empty()) {
        for (std::size_t i = 0; i < a.size(); ++i) da[i] += scale * std::exp(la[i]);
        da[static_cast<std::size_t>(y)] -= scale;
    }
    return -floored_log(la[static_cast<std::size_t>(y)]);
}

// Given dL/d(logits) for logits = H W^T, accumulate dL/dH and dL/dW.
inline void backprop_linear(const Matrix& h, const Matrix& w, const Matrix& d_logits, Matrix* d_h, Matrix* d_w) {
    const std::size_t n = h.rows(), in = h.cols(), out = w.rows();
    for (std::size_t r = 0; r < n; ++r) {
        const auto dl = d_logits.row(r);
        const auto hr = h.row(r);
        for (std::size_t o = 0; o < out; ++o) {
            const double d = dl[o];
            if (d == 0.0) continue;
            if (d_w) {
                auto dwr = d_w->row(o);
                for (std::size_t i = 0; i < in; ++i) dwr[i] += d * hr[i];
            }
            if (d_h) {
                auto dhr = d_h->row(r);
                const auto wr = w.row(o);
                for (std::size_t i = 0; i < in; ++i) dhr[i] += d * wr[i];
            }
        }
    }
}

inline void check_labels(std::span<const int> labels, std::size_t classes) {
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= classes) throw ConfigError("label out of range");
}

}  // namespace detail

// KL(p || q) with both arguments floored at 1e-12 inside the log.
inline double kl_div(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw ConfigError("kl_div: length mismatch");
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        kl += p[i] * (std::log(std::max(p[i], kProbFloor)) - std::log(std::max(q[i], kProbFloor)));
    }
    return kl;
}

// Mean cross-entropy of softmax(logits) against labels.
inline double f_task(const Matrix& logits, std::span<const int> labels, Matrix* d_logits = nullptr,
                     double scale = 1.0) {
    if (logits.rows() != labels.size()) throw ConfigError("f_task: logits/labels size mismatch");
    detail::check_labels(labels, logits.cols());
    const double n = static_cast<double>(logits.rows());
    double total = 0.0;
    for (std::size_t r = 0; r < logits.rows(); ++r)
        total += detail::cross_entropy_logits(logits.row(r), labels[r],
                                              d_logits ? d_logits->row(r) : std::span<double>{}, scale / n);
    return total / n;
}

// Mean over samples of sum over ordered modality pairs of
// KL(s(W h^m) || s(W h^m')) / (A (A - 1)), A = number of modalities.
inline double f_sim(const FeatureMap& feats, const Matrix& common_w, FeatureGrads* g = nullptr, double scale = 1.0) {
    const std::size_t a = feats.size();
    if (a < 2) return 0.0;
    std::map<int, Matrix> logits, d_logits;
    for (const auto& [m, f] : feats) {
        logits.emplace(m, linear_forward(f.common, common_w));
        if (g) d_logits.emplace(m, Matrix(f.common.rows(), common_w.rows()));
    }
    const std::size_t n = feats.begin()->second.common.rows();
    const double norm = static_cast<double>(n) * static_cast<double>(a * (a - 1));
    double total = 0.0;
    for (const auto& [m, lm] : logits)
        for (const auto& [mp, lmp] : logits) {
            if (m == mp) continue;
            for (std::size_t r = 0; r < n; ++r)
                total += detail::kl_logits(lm.row(r), lmp.row(r), g ? d_logits.at(m).row(r) : std::span<double>{},
                                           g ? d_logits.at(mp).row(r) : std::span<double>{}, scale / norm);
        }
    if (g)
        for (const auto& [m, f] : feats)
            detail::backprop_linear(f.common, common_w, d_logits.at(m), &g->common(m, f.common),
                                    &g->common_w(common_w));
    return total / norm;
}

// Cross-entropy of the common classifier on each modality's common features,
// averaged over samples and modalities.
inline double f_cls(const FeatureMap& feats, const Matrix& common_w, std::span<const int> labels,
                    FeatureGrads* g = nullptr, double scale = 1.0) {
    if (feats.empty()) return 0.0;
    detail::check_labels(labels, common_w.rows());
    const std::size_t n = labels.size();
    const double norm = static_cast<double>(n) * static_cast<double>(feats.size());
    double total = 0.0;
    for (const auto& [m, f] : feats) {
        if (f.common.rows() != n) throw ConfigError("f_cls: feature/label size mismatch");
        const Matrix logits = linear_forward(f.common, common_w);
        Matrix dl = g ? Matrix(n, common_w.rows()) : Matrix();
        for (std::size_t r = 0; r < n; ++r)
            total += detail::cross_entropy_logits(logits.row(r), labels[r], g ? dl.row(r) : std::span<double>{},
                                                  scale / norm);
        if (g) detail::backprop_linear(f.common, common_w, dl, &g->common(m, f.common), &g->common_w(common_w));
    }
    return total / norm;
}

// Orthogonality penalty sum_m || H^m (S^m)^T ||_F^2 with feature rows per
// sample, i.e. the squared dot products of every (common, specific) pair of
// samples in the batch.
inline double f_dif(const FeatureMap& feats, FeatureGrads* g = nullptr, double scale = 1.0) {
    double total = 0.0;
    for (const auto& [m, f] : feats) {
        const Matrix& h = f.common;
        const Matrix& s = f.specific;
        const std::size_t n = h.rows(), len = h.cols();
        if (s.cols() != len || s.rows() != n) throw ConfigError("f_dif: feature halves differ in shape");
        Matrix gram(n, n);
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b) {
                double dot = 0.0;
                for (std::size_t i = 0; i < len; ++i) dot += h(a, i) * s(b, i);
                gram(a, b) = dot;
            }
        total += squared_norm(gram.values());
        if (!g) continue;
        Matrix& dh = g->common(m, h);
        Matrix& ds = g->specific(m, s);
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b) {
                const double c = 2.0 * scale * gram(a, b);
                if (c == 0.0) continue;
                for (std::size_t i = 0; i < len; ++i) {
                    dh(a, i) += c * s(b, i);
                    ds(b, i) += c * h(a, i);
                }
            }
    }
    return total;
}

inline double f_dec(const FeatureMap& feats, const Matrix& common_w, std::span<const int> labels,
                    const LossWeights& w, FeatureGrads* g = nullptr, double scale = 1.0) {
    double total = 0.0;
    if (w.sim != 0.0) total += w.sim * f_sim(feats, common_w, g, scale * w.sim);
    if (w.cls != 0.0) total += w.cls * f_cls(feats, common_w, labels, g, scale * w.cls);
    if (w.dif != 0.0) total += w.dif * f_dif(feats, g, scale * w.dif);
    return total;
}

// Teacher features sampled from the frozen aggregated generator: for each
// modality, `samples` matrices shaped like that modality's common features.
using TeacherFeatures = std::map<int, std::vector<Matrix>>;

// Mean over samples, modalities and Monte-Carlo draws of
// KL(s(W h^m) || s(W h^G)). The teacher features are constants here, so the
// generator never receives gradient from this loss.
inline double f_kd(const FeatureMap& feats, const Matrix& common_w, const TeacherFeatures& teacher,
                   FeatureGrads* g = nullptr, double scale = 1.0) {
    if (feats.empty()) return 0.0;
    const std::size_t n = feats.begin()->second.common.rows();
    const double norm = static_cast<double>(n) * static_cast<double>(feats.size());
    double total = 0.0;
    for (const auto& [m, f] : feats) {
        auto it = teacher.find(m);
        if (it == teacher.end() || it->second.empty()) throw SimulationError("f_kd: missing teacher samples");
        const auto& draws = it->second;
        const double per = 1.0 / static_cast<double>(draws.size());
        const Matrix student = linear_forward(f.common, common_w);
        Matrix ds = g ? Matrix(n, common_w.rows()) : Matrix();
        for (const Matrix& hg : draws) {
            if (!hg.same_shape(f.common)) throw SimulationError("f_kd: teacher shape mismatch");
            const Matrix tl = linear_forward(hg, common_w);
            Matrix dt = g ? Matrix(n, common_w.rows()) : Matrix();
            for (std::size_t r = 0; r < n; ++r)
                total += per * detail::kl_logits(student.row(r), tl.row(r), g ? ds.row(r) : std::span<double>{},
                                                 g ? dt.row(r) : std::span<double>{}, scale * per / norm);
            if (g) detail::backprop_linear(hg, common_w, dt, nullptr, &g->common_w(common_w));
        }
        if (g) detail::backprop_linear(f.common, common_w, ds, &g->common(m, f.common), &g->common_w(common_w));
    }
    return total / norm;
}

struct LossBreakdown {
    double task = 0.0;
    double sim = 0.0;
    double cls = 0.0;
    double dif = 0.0;
    double kd = 0.0;
    double total = 0.0;
};

// Total objective of one iteration for the given active modalities.
//   dmml:       F_k
//   kd modes:   F_k + F_dec + alpha_4 F_kd  (F_kd only when teacher != nullptr)
// inputs holds the minibatch rows of each active modality. When grads is
// non-null it receives gradients for the active branches and the head.
inline LossBreakdown f_tot(const DeviceModel& model, const std::map<int, Matrix>& inputs, std::span<const int> labels,
                           const std::vector<int>& active, RunMode mode, const LossWeights& w,
                           const TeacherFeatures* teacher, GradientSet* grads) {
    if (active.empty()) throw SimulationError("f_tot: no active modality");
    std::map<int, ExtractorPass> passes;
    FeatureMap feats;
    for (int m : active) {
        auto pass = extract(inputs.at(m), model.branch(m));
        feats.emplace(m, pass.features);
        passes.emplace(m, std::move(pass));
    }
    FeatureGrads fg;
    FeatureGrads* g = grads ? &fg : nullptr;
    const Matrix& cw = model.head.common_w.value();
    const std::size_t classes = cw.rows();

    LossBreakdown out;
    const Matrix logits = fuse_predict(feats, active, model.head, model.branches);
    Matrix d_logits = g ? Matrix(logits.rows(), logits.cols()) : Matrix();
    out.task = f_task(logits, labels, g ? &d_logits : nullptr, 1.0);
    out.total = out.task;
    if (g) {
        Matrix& db = fg.bias(classes);
        for (std::size_t r = 0; r < d_logits.rows(); ++r)
            for (std::size_t c = 0; c < classes; ++c) db(0, c) += d_logits(r, c);
        for (int m : active) {
            const Features& f = feats.at(m);
            const Matrix& sw = model.branch(m).spec_w.value();
            detail::backprop_linear(f.common, cw, d_logits, &fg.common(m, f.common), &fg.common_w(cw));
            detail::backprop_linear(f.specific, sw, d_logits, &fg.specific(m, f.specific), &fg.spec_w(m, sw));
        }
    }
    if (mode != RunMode::dmml) {
        if (w.sim != 0.0) out.sim = f_sim(feats, cw, g, w.sim);
        if (w.cls != 0.0) out.cls = f_cls(feats, cw, labels, g, w.cls);
        if (w.dif != 0.0) out.dif = f_dif(feats, g, w.dif);
        out.total += w.sim * out.sim + w.cls * out.cls + w.dif * out.dif;
        if (teacher && w.kd != 0.0) {
            out.kd = f_kd(feats, cw, *teacher, g, w.kd);
            out.total += w.kd * out.kd;
        }
    }
    if (!std::isfinite(out.total))
        throw NumericalError("f_tot: non-finite loss (task=" + std::to_string(out.task) + " sim=" +
                             std::to_string(out.sim) + " cls=" + std::to_string(out.cls) + " dif=" +
                             std::to_string(out.dif) + " kd=" + std::to_string(out.kd) + ")");
    if (!g) return out;

    for (int m : active) {
        const ModalityBranch& b = model.branch(m);
        const Features& f = feats.at(m);
        const Matrix& dc = fg.d_common.count(m) ? fg.d_common.at(m) : Matrix(f.common.rows(), f.common.cols());
        const Matrix& dsp =
            fg.d_specific.count(m) ? fg.d_specific.at(m) : Matrix(f.specific.rows(), f.specific.cols());
        extractor_backward(passes.at(m), b, dc, dsp, *grads);
        accumulate(*grads, b.spec_w.id(), fg.d_spec_w.count(m) ? fg.d_spec_w.at(m) : Matrix(classes, cw.cols()));
    }
    accumulate(*grads, model.head.common_w.id(), fg.d_common_w);
    accumulate(*grads, model.head.bias.id(), fg.d_bias);
    return out;
}

// Generator objective with the common classifier frozen:
//   mean_n [ CE(s(W G(z_n, y_n)), y_n) + beta * || G(z_n, y_n) - mean_feature[y_n] ||_2 ]
// Gradients go to the generator blocks only.
inline double f_gen(const GeneratorParams& gen, const Matrix& common_w,
                    const std::map<int, std::vector<double>>& mean_features, std::span<const int> labels,
                    const Matrix& z, double beta, GradientSet* grads = nullptr) {
    const auto pass = generator_forward(z, labels, gen);
    const Matrix& h = pass.output;
    const std::size_t n = h.rows();
    const double inv_n = 1.0 / static_cast<double>(n);
    const Matrix logits = linear_forward(h, common_w);
    Matrix dl = grads ? Matrix(n, common_w.rows()) : Matrix();
    Matrix dh = grads ? Matrix(n, h.cols()) : Matrix();
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        total += detail::cross_entropy_logits(logits.row(r), labels[r], grads ? dl.row(r) : std::span<double>{},
                                              inv_n);
        auto it = mean_features.find(labels[r]);
        if (it == mean_features.end())
            throw SimulationError("f_gen: no mean feature for label " + std::to_string(labels[r]));
        double sq = 0.0;
        for (std::size_t c = 0; c < h.cols(); ++c) sq += (h(r, c) - it->second[c]) * (h(r, c) - it->second[c]);
        const double dist = std::sqrt(sq);
        total += beta * dist;
        if (grads && dist > 0.0)
            for (std::size_t c = 0; c < h.cols(); ++c) dh(r, c) += beta * inv_n * (h(r, c) - it->second[c]) / dist;
    }
    total *= inv_n;
    if (!std::isfinite(total)) throw NumericalError("f_gen: non-finite loss");
    if (grads) {
        detail::backprop_linear(h, common_w, dl, &dh, nullptr);
        generator_backward(pass, gen, dh, *grads);
    }
    return total;
}

}  // namespace dmml
