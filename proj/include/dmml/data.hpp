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

// Synthetic two-modality classification data and its split across devices.
//
// Each sample draws a latent s = mu_y + N(0, sigma_s^2 I) around a fixed class
// prototype; modality m observes x^m = gain_m * A^m s + N(0, sigma_n^2 I).
// Both modalities of one sample share s.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "dmml/format.hpp"
#include "dmml/nn.hpp"
#include "dmml/rng.hpp"

namespace dmml {

struct SyntheticSpec {
    std::size_t classes = 6;
    std::size_t latent_dim = 16;
    std::vector<std::size_t> input_dims{32, 32};
    double shared_sigma = 0.5;    // sigma_s
    double noise_sigma = 0.3;     // sigma_n
    double prototype_scale = 1.0; // std of prototype entries
    std::vector<double> modality_gain{1.0, 1.0};
    std::size_t train_per_class = 200;
    std::size_t test_per_class = 50;
    std::uint64_t seed = 1;

    void validate() const {
        if (classes < 2) throw ConfigError("data.classes: must be >= 2");
        if (latent_dim == 0) throw ConfigError("data.latent_dim: must be > 0");
        if (input_dims.empty()) throw ConfigError("data.input_dims: need at least one modality");
        for (auto d : input_dims)
            if (d == 0) throw ConfigError("data.input_dims: entries must be > 0");
        if (modality_gain.size() != input_dims.size())
            throw ConfigError("data.modality_gain: one entry per modality required");
        for (double g : modality_gain)
            if (!(g > 0.0)) throw ConfigError("data.modality_gain: entries must be > 0");
        if (shared_sigma < 0.0 || noise_sigma < 0.0) throw ConfigError("data: noise levels must be >= 0");
        if (!(prototype_scale > 0.0)) throw ConfigError("data.prototype_scale: must be > 0");
        if (train_per_class == 0 || test_per_class == 0) throw ConfigError("data: per-class counts must be > 0");
    }
};

// Column store: x[m - 1] holds one row per sample.
struct SampleSet {
    std::vector<Matrix> x;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    std::size_t modality_count() const { return x.size(); }
    const Matrix& modality(int m) const { return x.at(static_cast<std::size_t>(m) - 1); }

    Matrix gather(int m, std::span<const std::size_t> ids) const {
        const Matrix& src = modality(m);
        Matrix out(ids.size(), src.cols());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const auto r = src.row(ids[i]);
            std::copy(r.begin(), r.end(), out.row(i).begin());
        }
        return out;
    }
};

struct Dataset {
    SampleSet train;
    SampleSet test;
    std::vector<std::vector<double>> prototypes;  // [class][latent]
    std::vector<Matrix> maps;                     // A^m, [d_m x latent], gain included
};

inline Dataset generate(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng = make_rng(spec.seed, Stream::data);
    std::normal_distribution<double> normal(0.0, 1.0);
    Dataset ds;
    ds.prototypes.assign(spec.classes, std::vector<double>(spec.latent_dim));
    for (auto& p : ds.prototypes)
        for (double& v : p) v = spec.prototype_scale * normal(rng);
    const double map_scale = 1.0 / std::sqrt(static_cast<double>(spec.latent_dim));
    for (std::size_t m = 0; m < spec.input_dims.size(); ++m) {
        Matrix a(spec.input_dims[m], spec.latent_dim);
        for (double& v : a.values()) v = spec.modality_gain[m] * map_scale * normal(rng);
        ds.maps.push_back(std::move(a));
    }

    auto fill = [&](SampleSet& set, std::size_t per_class) {
        const std::size_t n = per_class * spec.classes;
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % spec.classes);
        std::shuffle(labels.begin(), labels.end(), rng);
        set.labels = labels;
        set.x.clear();
        for (auto d : spec.input_dims) set.x.emplace_back(n, d);
        std::vector<double> s(spec.latent_dim);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& mu = ds.prototypes[static_cast<std::size_t>(labels[i])];
            for (std::size_t j = 0; j < spec.latent_dim; ++j) s[j] = mu[j] + spec.shared_sigma * normal(rng);
            for (std::size_t m = 0; m < spec.input_dims.size(); ++m) {
                const Matrix& a = ds.maps[m];
                auto row = set.x[m].row(i);
                for (std::size_t r = 0; r < a.rows(); ++r) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < spec.latent_dim; ++j) acc += a(r, j) * s[j];
                    row[r] = acc + spec.noise_sigma * normal(rng);
                }
            }
        }
    };
    fill(ds.train, spec.train_per_class);
    fill(ds.test, spec.test_per_class);
    return ds;
}

// ---------------------------------------------------------------------------
// Partitioning
// ---------------------------------------------------------------------------

struct DevicePartition {
    int device = 0;
    std::vector<int> modalities;
    std::vector<std::size_t> samples;  // indices into the global training set
    int dominant_label = -1;           // -1 for iid
};

// Modality availability: 1 (all devices multi-modal), 0.5 (half multi-modal,
// a quarter each single-modality) or 0 (half each single-modality).
inline std::vector<std::vector<int>> partition_modalities(std::size_t devices, double availability,
                                                          std::uint64_t seed) {
    std::vector<std::vector<int>> out;
    auto both = std::vector<int>{1, 2};
    if (availability == 1.0) return std::vector<std::vector<int>>(devices, both);
    std::size_t n_both = 0, n_first = 0;
    if (availability == 0.5) {
        if (devices % 4 != 0) throw ConfigError("gamma=0.5 requires the device count to be a multiple of 4");
        n_both = devices / 2;
        n_first = devices / 4;
    } else if (availability == 0.0) {
        if (devices % 2 != 0) throw ConfigError("gamma=0 requires an even device count");
        n_first = devices / 2;
    } else {
        throw ConfigError("gamma: allowed values are 1, 0.5, 0");
    }
    std::vector<std::vector<int>> sets;
    for (std::size_t i = 0; i < devices; ++i) {
        if (i < n_both) sets.push_back(both);
        else if (i < n_both + n_first) sets.push_back({1});
        else sets.push_back({2});
    }
    Rng rng = make_rng(seed, Stream::modality_split);
    std::shuffle(sets.begin(), sets.end(), rng);
    return sets;
}

// Label skew: iid, or a fraction p of every device's quota from its dominant
// class (assigned round-robin by device id) and the rest from other classes.
struct LabelSkew {
    bool iid = true;
    double dominant_fraction = 0.0;

    static LabelSkew make_iid() { return {}; }
    static LabelSkew dominant(double p) { return {false, p}; }
};

inline std::vector<std::vector<std::size_t>> partition_labels(std::span<const int> labels, std::size_t classes,
                                                              std::size_t devices, LabelSkew skew,
                                                              std::uint64_t seed) {
    if (devices == 0) throw ConfigError("partition_labels: need at least one device");
    const std::size_t n = labels.size();
    if (n < devices) throw ConfigError("partition_labels: fewer samples than devices");
    std::vector<std::size_t> quota(devices, n / devices);
    for (std::size_t k = 0; k < n % devices; ++k) ++quota[k];
    Rng rng = make_rng(seed, Stream::label_split);
    std::vector<std::vector<std::size_t>> parts(devices);

    if (skew.iid) {
        std::vector<std::size_t> ids(n);
        std::iota(ids.begin(), ids.end(), std::size_t{0});
        std::shuffle(ids.begin(), ids.end(), rng);
        std::size_t pos = 0;
        for (std::size_t k = 0; k < devices; ++k)
            for (std::size_t i = 0; i < quota[k]; ++i) parts[k].push_back(ids[pos++]);
        for (auto& p : parts) std::sort(p.begin(), p.end());
        return parts;
    }

    if (!(skew.dominant_fraction > 0.0 && skew.dominant_fraction <= 1.0))
        throw ConfigError("phi: dominant fraction must lie in (0, 1]");
    std::vector<std::vector<std::size_t>> by_class(classes);
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
            throw ConfigError("partition_labels: label out of range");
        by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    }
    for (auto& c : by_class) std::shuffle(c.begin(), c.end(), rng);

    std::vector<int> dominant(devices);
    std::vector<std::size_t> taken(classes, 0);
    for (std::size_t k = 0; k < devices; ++k) {
        dominant[k] = static_cast<int>(k % classes);
        const auto want = static_cast<std::size_t>(std::llround(skew.dominant_fraction * static_cast<double>(quota[k])));
        auto& pool = by_class[static_cast<std::size_t>(dominant[k])];
        if (taken[static_cast<std::size_t>(dominant[k])] + want > pool.size())
            throw ConfigError("partition_labels: class " + std::to_string(dominant[k]) +
                              " has too few samples for the requested dominant fraction");
        for (std::size_t i = 0; i < want; ++i) parts[k].push_back(pool[taken[static_cast<std::size_t>(dominant[k])]++]);
    }

    std::vector<std::size_t> rest;
    for (std::size_t c = 0; c < classes; ++c) rest.insert(rest.end(), by_class[c].begin() + static_cast<std::ptrdiff_t>(taken[c]), by_class[c].end());
    std::shuffle(rest.begin(), rest.end(), rng);

    // Place each remaining sample on the non-dominant device with the most
    // free slots; if only same-class devices have room, swap with a sample
    // already placed elsewhere.
    auto free_slots = [&](std::size_t k) { return quota[k] - parts[k].size(); };
    for (std::size_t id : rest) {
        const int y = labels[id];
        std::size_t best = devices;
        for (std::size_t k = 0; k < devices; ++k)
            if (dominant[k] != y && free_slots(k) > 0 && (best == devices || free_slots(k) > free_slots(best)))
                best = k;
        if (best != devices) {
            parts[best].push_back(id);
            continue;
        }
        std::size_t open = devices;
        for (std::size_t k = 0; k < devices && open == devices; ++k)
            if (free_slots(k) > 0) open = k;
        if (open == devices) throw ConfigError("partition_labels: quota overflow");
        bool placed = false;
        for (std::size_t k = 0; k < devices && !placed; ++k) {
            if (dominant[k] == y) continue;
            for (auto& held : parts[k]) {
                const int hy = labels[held];
                if (hy == dominant[k] || hy == dominant[open]) continue;
                parts[open].push_back(held);
                held = id;
                placed = true;
                break;
            }
        }
        if (!placed) throw ConfigError("partition_labels: cannot satisfy the label-skew constraints");
    }
    for (auto& p : parts) std::sort(p.begin(), p.end());
    return parts;
}

inline std::vector<DevicePartition> make_partitions(const SampleSet& train, std::size_t classes, std::size_t devices,
                                                    double availability, LabelSkew skew, std::uint64_t seed) {
    const auto mods = partition_modalities(devices, availability, seed);
    const auto samples = partition_labels(train.labels, classes, devices, skew, seed);
    std::vector<DevicePartition> out(devices);
    for (std::size_t k = 0; k < devices; ++k) {
        out[k].device = static_cast<int>(k);
        out[k].modalities = mods[k];
        out[k].samples = samples[k];
        out[k].dominant_label = skew.iid ? -1 : static_cast<int>(k % classes);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Export / import
// ---------------------------------------------------------------------------

// CSV: split,sample_id,label,x1_0..x1_{d1-1},x2_0..x2_{d2-1}
inline void write_dataset_csv(std::ostream& os, const Dataset& ds) {
    const std::size_t mods = ds.train.modality_count();
    os << "split,sample_id,label";
    for (std::size_t m = 0; m < mods; ++m)
        for (std::size_t j = 0; j < ds.train.x[m].cols(); ++j) os << ",x" << (m + 1) << '_' << j;
    os << "\n";
    auto dump = [&](const SampleSet& set, const char* split) {
        for (std::size_t i = 0; i < set.size(); ++i) {
            os << split << ',' << i << ',' << set.labels[i];
            for (std::size_t m = 0; m < mods; ++m)
                for (double v : set.x[m].row(i)) os << ',' << format_double(v);
            os << "\n";
        }
    };
    dump(ds.train, "train");
    dump(ds.test, "test");
}

inline std::pair<SampleSet, SampleSet> read_dataset_csv(std::istream& is, const std::vector<std::size_t>& input_dims) {
    std::string line;
    if (!std::getline(is, line)) throw ConfigError("dataset csv: empty input");
    std::size_t width = 0;
    for (auto d : input_dims) width += d;
    std::vector<std::vector<double>> rows[2];
    std::vector<int> labels[2];
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string split, tok;
        std::getline(ls, split, ',');
        std::getline(ls, tok, ',');
        std::getline(ls, tok, ',');
        const int which = split == "train" ? 0 : split == "test" ? 1 : -1;
        if (which < 0) throw ConfigError("dataset csv: unknown split '" + split + "'");
        labels[which].push_back(std::stoi(tok));
        std::vector<double> vals;
        while (std::getline(ls, tok, ',')) vals.push_back(parse_double(tok));
        if (vals.size() != width) throw ConfigError("dataset csv: wrong column count");
        rows[which].push_back(std::move(vals));
    }
    auto build = [&](int which) {
        SampleSet s;
        s.labels = labels[which];
        std::size_t off = 0;
        for (auto d : input_dims) {
            Matrix x(rows[which].size(), d);
            for (std::size_t i = 0; i < rows[which].size(); ++i)
                std::copy_n(rows[which][i].begin() + static_cast<std::ptrdiff_t>(off), d, x.row(i).begin());
            s.x.push_back(std::move(x));
            off += d;
        }
        return s;
    };
    return {build(0), build(1)};
}

}  // namespace dmml
