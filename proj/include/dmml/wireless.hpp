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
#include <map>
#include <numbers>
#include <ostream>
#include <queue>
#include <random>
#include <vector>

#include "dmml/format.hpp"
#include "dmml/nn.hpp"
#include "dmml/rng.hpp"

namespace dmml {

struct Position {
    double x = 0.0;
    double y = 0.0;
};

inline double distance(Position a, Position b) { return std::hypot(a.x - b.x, a.y - b.y); }

using Adjacency = std::vector<std::vector<bool>>;
using WeightMatrix = std::vector<std::vector<double>>;

struct WirelessParams {
    double diameter_m = 100.0;
    double range_m = 50.0;
    double carrier_ghz = 2.6;
    double bandwidth_hz = 5e5;
    double noise_w_per_hz = 1e-17;  // -140 dBm/Hz
    int max_placement_retries = 100;
};

// Uniform over a disc centred at the origin.
inline std::vector<Position> place_devices(std::size_t devices, double diameter_m, std::uint64_t seed) {
    if (devices < 2) throw ConfigError("place_devices: need at least two devices");
    Rng rng = make_rng(seed, Stream::placement);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double radius = diameter_m / 2.0;
    std::vector<Position> pos(devices);
    for (auto& p : pos) {
        const double r = radius * std::sqrt(u(rng));
        const double theta = 2.0 * std::numbers::pi * u(rng);
        p = {r * std::cos(theta), r * std::sin(theta)};
    }
    return pos;
}

inline Adjacency build_adjacency(const std::vector<Position>& pos, double range_m) {
    const std::size_t k = pos.size();
    Adjacency adj(k, std::vector<bool>(k, false));
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i + 1; j < k; ++j)
            if (distance(pos[i], pos[j]) <= range_m) adj[i][j] = adj[j][i] = true;
    return adj;
}

inline std::size_t degree(const Adjacency& adj, std::size_t k) {
    return static_cast<std::size_t>(std::count(adj[k].begin(), adj[k].end(), true));
}

// Connected components; isolated nodes form their own component.
inline std::vector<int> components(const Adjacency& adj) {
    const std::size_t k = adj.size();
    std::vector<int> comp(k, -1);
    int next = 0;
    for (std::size_t s = 0; s < k; ++s) {
        if (comp[s] >= 0) continue;
        std::queue<std::size_t> q;
        q.push(s);
        comp[s] = next;
        while (!q.empty()) {
            const std::size_t u = q.front();
            q.pop();
            for (std::size_t v = 0; v < k; ++v)
                if (adj[u][v] && comp[v] < 0) {
                    comp[v] = next;
                    q.push(v);
                }
        }
        ++next;
    }
    return comp;
}

inline bool is_connected(const Adjacency& adj) {
    const auto c = components(adj);
    return std::all_of(c.begin(), c.end(), [](int v) { return v == 0; });
}

// Restriction of adj to the nodes flagged in `members`; other rows are empty.
inline Adjacency induced_subgraph(const Adjacency& adj, const std::vector<bool>& members) {
    Adjacency sub(adj.size(), std::vector<bool>(adj.size(), false));
    for (std::size_t i = 0; i < adj.size(); ++i)
        for (std::size_t j = 0; j < adj.size(); ++j) sub[i][j] = adj[i][j] && members[i] && members[j];
    return sub;
}

// Metropolis-Hastings weights: xi_ij = 1 / (1 + max(deg_i, deg_j)) on edges,
// diagonal takes the remainder. Non-members keep weight 1 on themselves.
inline WeightMatrix mh_weights(const Adjacency& adj) {
    const std::size_t k = adj.size();
    WeightMatrix w(k, std::vector<double>(k, 0.0));
    std::vector<std::size_t> deg(k);
    for (std::size_t i = 0; i < k; ++i) deg[i] = degree(adj, i);
    for (std::size_t i = 0; i < k; ++i) {
        double off = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            if (i == j || !adj[i][j]) continue;
            w[i][j] = 1.0 / (1.0 + static_cast<double>(std::max(deg[i], deg[j])));
            off += w[i][j];
        }
        w[i][i] = 1.0 - off;
    }
    return w;
}

struct Topology {
    std::vector<Position> positions;
    Adjacency adjacency;
    std::vector<std::vector<int>> modalities;  // per device, sorted
    WeightMatrix common_weights;
    std::map<int, Adjacency> modality_adjacency;
    std::map<int, WeightMatrix> modality_weights;
    std::uint64_t placement_seed = 0;
    int placement_attempts = 1;

    std::size_t size() const { return positions.size(); }
    bool owns(std::size_t k, int m) const {
        return std::find(modalities[k].begin(), modalities[k].end(), m) != modalities[k].end();
    }
    std::vector<std::size_t> neighbors(std::size_t k) const {
        std::vector<std::size_t> out;
        for (std::size_t j = 0; j < size(); ++j)
            if (adjacency[k][j]) out.push_back(j);
        return out;
    }
    std::vector<std::size_t> modality_neighbors(std::size_t k, int m) const {
        std::vector<std::size_t> out;
        auto it = modality_adjacency.find(m);
        if (it == modality_adjacency.end()) return out;
        for (std::size_t j = 0; j < size(); ++j)
            if (it->second[k][j]) out.push_back(j);
        return out;
    }
    std::size_t cluster_head() const {
        std::size_t best = 0;
        for (std::size_t k = 1; k < size(); ++k)
            if (degree(adjacency, k) > degree(adjacency, best)) best = k;
        return best;
    }
};

// Builds the full and per-modality graphs and their weights. `active`
// restricts every graph to the flagged devices (others become isolated).
inline Topology assemble_topology(std::vector<Position> positions, Adjacency adj,
                                  std::vector<std::vector<int>> modalities, const std::vector<bool>& active) {
    Topology t;
    t.positions = std::move(positions);
    t.modalities = std::move(modalities);
    t.adjacency = induced_subgraph(adj, active);
    t.common_weights = mh_weights(t.adjacency);
    std::vector<int> all;
    for (const auto& ms : t.modalities) all.insert(all.end(), ms.begin(), ms.end());
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    for (int m : all) {
        std::vector<bool> members(t.size());
        for (std::size_t k = 0; k < t.size(); ++k) members[k] = active[k] && t.owns(k, m);
        t.modality_adjacency[m] = induced_subgraph(t.adjacency, members);
        t.modality_weights[m] = mh_weights(t.modality_adjacency[m]);
    }
    return t;
}

// Places devices and retries with a fresh placement seed until the graph is
// connected.
inline Topology build_topology(std::size_t devices, const WirelessParams& wp,
                               const std::vector<std::vector<int>>& modalities, std::uint64_t seed) {
    if (modalities.size() != devices) throw ConfigError("build_topology: modality list size mismatch");
    for (int attempt = 0; attempt < wp.max_placement_retries; ++attempt) {
        const std::uint64_t s = attempt == 0 ? seed : derive_seed(seed, Stream::placement, {static_cast<std::uint64_t>(attempt)});
        auto pos = place_devices(devices, wp.diameter_m, s);
        auto adj = build_adjacency(pos, wp.range_m);
        if (!is_connected(adj)) continue;
        Topology t = assemble_topology(std::move(pos), std::move(adj), modalities, std::vector<bool>(devices, true));
        t.placement_seed = s;
        t.placement_attempts = attempt + 1;
        return t;
    }
    throw SimulationError("build_topology: no connected placement after " +
                          std::to_string(wp.max_placement_retries) + " attempts");
}

// Free-space style path loss in dB with the carrier in GHz and distance in m.
inline double path_loss_db(double d_m, double carrier_ghz = 2.6) {
    if (!(d_m > 0.0)) throw ConfigError("path_loss: distance must be > 0");
    return 32.4 + 20.0 * std::log10(carrier_ghz) + 20.0 * std::log10(d_m);
}

inline double mean_gain(double d_m, double carrier_ghz = 2.6) {
    return std::pow(10.0, -path_loss_db(d_m, carrier_ghz) / 20.0);
}

// Rayleigh amplitude with the given mean; reciprocal per unordered pair and
// drawn fresh per round.
inline double sample_channel(std::size_t a, std::size_t b, int round, double mean, std::uint64_t seed) {
    const auto lo = static_cast<std::uint64_t>(std::min(a, b));
    const auto hi = static_cast<std::uint64_t>(std::max(a, b));
    Rng rng = make_rng(seed, Stream::channel, {static_cast<std::uint64_t>(round), lo, hi});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double sigma = mean / std::sqrt(std::numbers::pi / 2.0);
    double v = 0.0;
    do v = u(rng);
    while (v <= 0.0);
    return sigma * std::sqrt(-2.0 * std::log(v));
}

using ChannelGains = std::vector<std::vector<double>>;

inline ChannelGains sample_round_channels(const Topology& topo, int round, double carrier_ghz, std::uint64_t seed) {
    const std::size_t k = topo.size();
    ChannelGains g(k, std::vector<double>(k, 0.0));
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i + 1; j < k; ++j) {
            const double mu = mean_gain(distance(topo.positions[i], topo.positions[j]), carrier_ghz);
            g[i][j] = g[j][i] = sample_channel(i, j, round, mu, seed);
        }
    return g;
}

// Shannon rate in bits/s (log base 2).
inline double link_rate(double gain, double power_w, double bandwidth_hz, double noise_w_per_hz) {
    return bandwidth_hz * std::log2(1.0 + power_w * gain * gain / (bandwidth_hz * noise_w_per_hz));
}

// Edge list with weights, one line per entry, for reproducibility audits.
inline void write_topology(std::ostream& os, const Topology& t) {
    os << "# dmml-topology 1\n";
    os << "devices " << t.size() << " placement_seed " << t.placement_seed << " attempts " << t.placement_attempts
       << "\n";
    for (std::size_t k = 0; k < t.size(); ++k) {
        os << "device " << k << ' ' << format_double(t.positions[k].x) << ' ' << format_double(t.positions[k].y)
           << " modalities";
        for (int m : t.modalities[k]) os << ' ' << m;
        os << "\n";
    }
    auto dump = [&](const std::string& tag, const WeightMatrix& w) {
        for (std::size_t i = 0; i < w.size(); ++i)
            for (std::size_t j = 0; j < w.size(); ++j)
                if (w[i][j] != 0.0) os << tag << ' ' << i << ' ' << j << ' ' << format_double(w[i][j]) << "\n";
    };
    dump("common", t.common_weights);
    for (const auto& [m, w] : t.modality_weights) dump("modality" + std::to_string(m), w);
}

}  // namespace dmml
