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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dmml/format.hpp"
#include "dmml/nn.hpp"
#include "dmml/rng.hpp"

namespace dmml {

// Architecture hyper-parameters shared by every device.
struct ModelShape {
    std::vector<std::size_t> input_dims{32, 32};  // d_m, indexed by modality - 1
    std::size_t hidden = 64;                      // extractor hidden width
    std::size_t common_len = 16;                  // length of each feature half
    std::size_t classes = 6;
    std::size_t noise_dim = 16;                   // generator latent size
    std::size_t gen_hidden = 64;

    std::size_t modality_count() const { return input_dims.size(); }
    std::size_t input_dim(int m) const {
        if (m < 1 || static_cast<std::size_t>(m) > input_dims.size())
            throw ConfigError("unknown modality " + std::to_string(m));
        return input_dims[static_cast<std::size_t>(m) - 1];
    }
};

inline std::string branch_prefix(int m) { return "m" + std::to_string(m) + "."; }

// Feature extractor (input -> hidden -> 2*common_len) plus the
// modality-specific classifier.
struct ModalityBranch {
    int modality = 0;
    ParamBlock ext_w1, ext_b1, ext_w2, ext_b2;
    ParamBlock spec_w;  // [classes x common_len]

    std::vector<ParamBlock*> extractor_blocks() { return {&ext_w1, &ext_b1, &ext_w2, &ext_b2}; }
    std::vector<const ParamBlock*> extractor_blocks() const { return {&ext_w1, &ext_b1, &ext_w2, &ext_b2}; }
    std::vector<ParamBlock*> blocks() { return {&ext_w1, &ext_b1, &ext_w2, &ext_b2, &spec_w}; }
    std::vector<const ParamBlock*> blocks() const { return {&ext_w1, &ext_b1, &ext_w2, &ext_b2, &spec_w}; }
};

struct SharedHead {
    ParamBlock common_w;  // [classes x common_len]
    ParamBlock bias;      // [1 x classes]

    std::vector<ParamBlock*> blocks() { return {&common_w, &bias}; }
    std::vector<const ParamBlock*> blocks() const { return {&common_w, &bias}; }
};

// (z ++ one_hot(y)) -> relu hidden -> common_len.
struct GeneratorParams {
    ParamBlock w1, b1, w2, b2;

    std::size_t input_len() const { return w1.cols(); }
    std::size_t output_len() const { return w2.rows(); }
    std::vector<ParamBlock*> blocks() { return {&w1, &b1, &w2, &b2}; }
    std::vector<const ParamBlock*> blocks() const { return {&w1, &b1, &w2, &b2}; }
};

struct DeviceModel {
    std::vector<int> modalities;  // sorted, owned set
    std::map<int, ModalityBranch> branches;
    SharedHead head;
    GeneratorParams generator;
    OptimizerState model_opt;
    OptimizerState gen_opt;

    bool owns(int m) const { return branches.count(m) != 0; }
    ModalityBranch& branch(int m) {
        auto it = branches.find(m);
        if (it == branches.end()) throw SimulationError("modality " + std::to_string(m) + " not owned");
        return it->second;
    }
    const ModalityBranch& branch(int m) const {
        auto it = branches.find(m);
        if (it == branches.end()) throw SimulationError("modality " + std::to_string(m) + " not owned");
        return it->second;
    }

    // Multi-modal network blocks (branches + head), generator excluded.
    std::vector<ParamBlock*> network_blocks() {
        std::vector<ParamBlock*> out;
        for (auto& [m, b] : branches)
            for (auto* p : b.blocks()) out.push_back(p);
        for (auto* p : head.blocks()) out.push_back(p);
        return out;
    }
    std::vector<const ParamBlock*> network_blocks() const {
        std::vector<const ParamBlock*> out;
        for (const auto& [m, b] : branches)
            for (auto* p : b.blocks()) out.push_back(p);
        for (auto* p : head.blocks()) out.push_back(p);
        return out;
    }
    std::vector<ParamBlock*> all_blocks() {
        auto out = network_blocks();
        for (auto* p : generator.blocks()) out.push_back(p);
        return out;
    }
    std::vector<const ParamBlock*> all_blocks() const {
        auto out = network_blocks();
        for (auto* p : generator.blocks()) out.push_back(p);
        return out;
    }
    ParamBlock* find(const std::string& id) {
        for (auto* p : all_blocks())
            if (p->id() == id) return p;
        return nullptr;
    }
};

// He-style uniform init. Each block draws from its own stream keyed by the
// block id, so a modality branch is identical on every device that owns it.
inline void init_block(ParamBlock& p, std::uint64_t seed, bool is_bias) {
    if (is_bias) {
        std::fill(p.values().begin(), p.values().end(), 0.0);
        return;
    }
    std::uint64_t key = 1469598103934665603ull;
    for (char c : p.id()) key = (key ^ static_cast<unsigned char>(c)) * 1099511628211ull;
    Rng rng = make_rng(seed, Stream::init, {key});
    const double limit = std::sqrt(6.0 / static_cast<double>(p.cols()));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (double& v : p.values()) v = u(rng);
}

inline ModalityBranch make_branch(const ModelShape& s, int m, std::uint64_t seed) {
    const std::string pre = branch_prefix(m);
    ModalityBranch b;
    b.modality = m;
    b.ext_w1 = ParamBlock(pre + "ext.w1", s.hidden, s.input_dim(m));
    b.ext_b1 = ParamBlock(pre + "ext.b1", 1, s.hidden);
    b.ext_w2 = ParamBlock(pre + "ext.w2", 2 * s.common_len, s.hidden);
    b.ext_b2 = ParamBlock(pre + "ext.b2", 1, 2 * s.common_len);
    b.spec_w = ParamBlock(pre + "spec.w", s.classes, s.common_len);
    init_block(b.ext_w1, seed, false);
    init_block(b.ext_b1, seed, true);
    init_block(b.ext_w2, seed, false);
    init_block(b.ext_b2, seed, true);
    init_block(b.spec_w, seed, false);
    return b;
}

inline GeneratorParams make_generator(const ModelShape& s, std::uint64_t seed) {
    GeneratorParams g;
    g.w1 = ParamBlock("gen.w1", s.gen_hidden, s.noise_dim + s.classes);
    g.b1 = ParamBlock("gen.b1", 1, s.gen_hidden);
    g.w2 = ParamBlock("gen.w2", s.common_len, s.gen_hidden);
    g.b2 = ParamBlock("gen.b2", 1, s.common_len);
    init_block(g.w1, seed, false);
    init_block(g.b1, seed, true);
    init_block(g.w2, seed, false);
    init_block(g.b2, seed, true);
    return g;
}

inline DeviceModel make_device_model(const ModelShape& s, std::vector<int> modalities, std::uint64_t seed) {
    if (modalities.empty()) throw ConfigError("device must own at least one modality");
    std::sort(modalities.begin(), modalities.end());
    modalities.erase(std::unique(modalities.begin(), modalities.end()), modalities.end());
    DeviceModel d;
    d.modalities = modalities;
    for (int m : modalities) d.branches.emplace(m, make_branch(s, m, seed));
    d.head.common_w = ParamBlock("head.common.w", s.classes, s.common_len);
    d.head.bias = ParamBlock("head.bias", 1, s.classes);
    init_block(d.head.common_w, seed, false);
    init_block(d.head.bias, seed, true);
    d.generator = make_generator(s, seed);
    return d;
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

// Common (first half) and specific (second half) features, rows = samples.
struct Features {
    Matrix common;
    Matrix specific;
};

using FeatureMap = std::map<int, Features>;

struct ExtractorPass {
    Matrix input;
    Matrix pre_hidden;
    Matrix hidden;
    Features features;
};

inline ExtractorPass extract(const Matrix& x, const ModalityBranch& b) {
    if (x.cols() != b.ext_w1.cols())
        throw ConfigError("extract: modality " + std::to_string(b.modality) + " expects " +
                          std::to_string(b.ext_w1.cols()) + " columns, got " + std::to_string(x.cols()));
    ExtractorPass pass;
    pass.input = x;
    pass.pre_hidden = dense_forward(x, b.ext_w1.value(), b.ext_b1.value());
    pass.hidden = relu(pass.pre_hidden);
    const Matrix out = dense_forward(pass.hidden, b.ext_w2.value(), b.ext_b2.value());
    const std::size_t half = out.cols() / 2;
    pass.features.common = Matrix(x.rows(), half);
    pass.features.specific = Matrix(x.rows(), half);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto row = out.row(r);
        std::copy(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(half), pass.features.common.row(r).begin());
        std::copy(row.begin() + static_cast<std::ptrdiff_t>(half), row.end(), pass.features.specific.row(r).begin());
    }
    return pass;
}

// Accumulates extractor gradients given dL/d(common) and dL/d(specific).
inline void extractor_backward(const ExtractorPass& pass, const ModalityBranch& b, const Matrix& d_common,
                               const Matrix& d_specific, GradientSet& grads) {
    const std::size_t n = pass.input.rows(), half = d_common.cols();
    Matrix d_out(n, 2 * half);
    for (std::size_t r = 0; r < n; ++r) {
        auto row = d_out.row(r);
        std::copy(d_common.row(r).begin(), d_common.row(r).end(), row.begin());
        std::copy(d_specific.row(r).begin(), d_specific.row(r).end(), row.begin() + static_cast<std::ptrdiff_t>(half));
    }
    auto g2 = dense_backward(pass.hidden, b.ext_w2.value(), d_out);
    accumulate(grads, b.ext_w2.id(), g2.dw);
    accumulate(grads, b.ext_b2.id(), g2.db);
    const Matrix d_pre = relu_backward(pass.pre_hidden, g2.dx);
    auto g1 = dense_backward(pass.input, b.ext_w1.value(), d_pre, false);
    accumulate(grads, b.ext_w1.id(), g1.dw);
    accumulate(grads, b.ext_b1.id(), g1.db);
}

// c = sum_{m in mask} (common_w h_common^m + spec_w^m h_specific^m) + b
inline Matrix fuse_predict(const FeatureMap& features, const std::vector<int>& mask, const SharedHead& head,
                           const std::map<int, ModalityBranch>& branches) {
    if (mask.empty()) throw SimulationError("fuse_predict: empty modality mask");
    const std::size_t n = features.at(mask.front()).common.rows();
    Matrix logits(n, head.bias.size());
    for (std::size_t r = 0; r < n; ++r)
        std::copy(head.bias.values().begin(), head.bias.values().end(), logits.row(r).begin());
    for (int m : mask) {
        auto bit = branches.find(m);
        if (bit == branches.end()) throw SimulationError("fuse_predict: modality not owned");
        const Features& f = features.at(m);
        logits += linear_forward(f.common, head.common_w.value());
        logits += linear_forward(f.specific, bit->second.spec_w.value());
    }
    return logits;
}

// Single-modality estimate: common_w h^m + spec_w^m hs^m + b / total_modalities.
inline Matrix per_modality_predict(int m, const Features& f, const SharedHead& head, const ModalityBranch& branch,
                                   std::size_t total_modalities) {
    if (branch.modality != m) throw SimulationError("per_modality_predict: branch/modality mismatch");
    Matrix logits = linear_forward(f.common, head.common_w.value());
    logits += linear_forward(f.specific, branch.spec_w.value());
    const double share = 1.0 / static_cast<double>(total_modalities);
    for (std::size_t r = 0; r < logits.rows(); ++r)
        for (std::size_t c = 0; c < logits.cols(); ++c) logits(r, c) += head.bias.values()[c] * share;
    return logits;
}

struct GeneratorPass {
    Matrix input;  // [n x (Z + C)]
    Matrix pre_hidden;
    Matrix hidden;
    Matrix output;  // [n x common_len]
};

inline Matrix generator_input(const Matrix& z, std::span<const int> labels, std::size_t classes) {
    if (z.rows() != labels.size()) throw ConfigError("generator_input: z/label count mismatch");
    Matrix in(z.rows(), z.cols() + classes);
    for (std::size_t r = 0; r < z.rows(); ++r) {
        if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= classes)
            throw ConfigError("generator_input: label out of range");
        auto row = in.row(r);
        std::copy(z.row(r).begin(), z.row(r).end(), row.begin());
        row[z.cols() + static_cast<std::size_t>(labels[r])] = 1.0;
    }
    return in;
}

inline GeneratorPass generator_forward(const Matrix& z, std::span<const int> labels, const GeneratorParams& g) {
    const std::size_t classes = g.input_len() - z.cols();
    if (g.input_len() <= z.cols()) throw ConfigError("generator_forward: noise dimension mismatch");
    GeneratorPass pass;
    pass.input = generator_input(z, labels, classes);
    pass.pre_hidden = dense_forward(pass.input, g.w1.value(), g.b1.value());
    pass.hidden = relu(pass.pre_hidden);
    pass.output = dense_forward(pass.hidden, g.w2.value(), g.b2.value());
    return pass;
}

inline std::vector<double> generator_forward(std::span<const double> z, int label, const GeneratorParams& g) {
    Matrix zm(1, z.size(), std::vector<double>(z.begin(), z.end()));
    const int labels[1] = {label};
    auto pass = generator_forward(zm, labels, g);
    return {pass.output.values().begin(), pass.output.values().end()};
}

inline void generator_backward(const GeneratorPass& pass, const GeneratorParams& g, const Matrix& d_out,
                               GradientSet& grads) {
    auto g2 = dense_backward(pass.hidden, g.w2.value(), d_out);
    accumulate(grads, g.w2.id(), g2.dw);
    accumulate(grads, g.b2.id(), g2.db);
    const Matrix d_pre = relu_backward(pass.pre_hidden, g2.dx);
    auto g1 = dense_backward(pass.input, g.w1.value(), d_pre, false);
    accumulate(grads, g.w1.id(), g1.dw);
    accumulate(grads, g.b1.id(), g1.db);
}

// Per-label mean of the common features over samples and owned modalities.
// inputs[m] holds the modality-m rows of the local dataset, aligned with labels.
inline std::map<int, std::vector<double>> mean_common_features(const std::map<int, Matrix>& inputs,
                                                               std::span<const int> labels,
                                                               const std::map<int, ModalityBranch>& branches) {
    std::map<int, std::vector<double>> sums;
    std::map<int, std::size_t> counts;
    for (const auto& [m, branch] : branches) {
        auto it = inputs.find(m);
        if (it == inputs.end()) throw SimulationError("mean_common_features: missing modality input");
        const auto pass = extract(it->second, branch);
        const Matrix& h = pass.features.common;
        for (std::size_t r = 0; r < h.rows(); ++r) {
            auto& s = sums[labels[r]];
            if (s.empty()) s.assign(h.cols(), 0.0);
            for (std::size_t c = 0; c < h.cols(); ++c) s[c] += h(r, c);
            ++counts[labels[r]];
        }
    }
    for (auto& [y, s] : sums)
        for (double& v : s) v /= static_cast<double>(counts[y]);
    return sums;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
//   dmml-checkpoint 1
//   modalities <m...>
//   blocks <count>
//   block <id> <rows> <cols>
//   <rows lines of cols space-separated values, shortest round-trip decimal>
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(std::ostream& os, const DeviceModel& d) {
    os << "dmml-checkpoint " << kCheckpointVersion << "\n";
    os << "modalities";
    for (int m : d.modalities) os << ' ' << m;
    os << "\n";
    const auto blocks = d.all_blocks();
    os << "blocks " << blocks.size() << "\n";
    for (const ParamBlock* p : blocks) {
        os << "block " << p->id() << ' ' << p->rows() << ' ' << p->cols() << "\n";
        for (std::size_t r = 0; r < p->rows(); ++r) {
            const auto row = p->value().row(r);
            for (std::size_t c = 0; c < row.size(); ++c) os << (c ? " " : "") << format_double(row[c]);
            os << "\n";
        }
    }
}

struct Checkpoint {
    std::vector<int> modalities;
    std::vector<ParamBlock> blocks;
};

inline Checkpoint read_checkpoint(std::istream& is) {
    std::string tag;
    int version = 0;
    if (!(is >> tag >> version) || tag != "dmml-checkpoint") throw ConfigError("checkpoint: bad header");
    if (version != kCheckpointVersion) throw ConfigError("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint ck;
    std::string line;
    std::getline(is, line);
    std::getline(is, line);
    {
        std::istringstream ls(line);
        ls >> tag;
        if (tag != "modalities") throw ConfigError("checkpoint: expected modalities line");
        int m;
        while (ls >> m) ck.modalities.push_back(m);
    }
    std::size_t count = 0;
    if (!(is >> tag >> count) || tag != "blocks") throw ConfigError("checkpoint: expected block count");
    for (std::size_t i = 0; i < count; ++i) {
        std::string id;
        std::size_t rows = 0, cols = 0;
        if (!(is >> tag >> id >> rows >> cols) || tag != "block") throw ConfigError("checkpoint: bad block header");
        std::vector<double> vals(rows * cols);
        for (double& v : vals) {
            std::string tok;
            if (!(is >> tok)) throw ConfigError("checkpoint: truncated block " + id);
            v = parse_double(tok);
        }
        ck.blocks.emplace_back(id, Matrix(rows, cols, std::move(vals)));
    }
    return ck;
}

// Copies checkpoint blocks into an existing model of the same architecture.
inline void restore_checkpoint(DeviceModel& d, const Checkpoint& ck) {
    if (ck.modalities != d.modalities) throw ConfigError("checkpoint: modality set mismatch");
    for (const ParamBlock& b : ck.blocks) {
        ParamBlock* p = d.find(b.id());
        if (!p) throw ConfigError("checkpoint: unknown block " + b.id());
        p->assign(b.value());
    }
}

}  // namespace dmml
