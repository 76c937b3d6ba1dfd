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

#include <cstdint>
#include <initializer_list>
#include <random>

namespace dmml {

using Rng = std::mt19937_64;

// Stream tags so that independent consumers never share a seed.
enum class Stream : std::uint64_t {
    init = 1,
    data,
    modality_split,
    label_split,
    placement,
    channel,
    mask,
    batch_order,
    kd_noise,
    generator,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Deterministic seed from a master seed, a stream tag and up to a handful of
// integer coordinates (device, round, modality, ...).
inline std::uint64_t derive_seed(std::uint64_t master, Stream stream, std::initializer_list<std::uint64_t> coords = {}) {
    std::uint64_t h = splitmix64(master ^ splitmix64(static_cast<std::uint64_t>(stream)));
    for (std::uint64_t c : coords) h = splitmix64(h ^ (c + 0x632BE59BD9B4E019ull));
    return h;
}

inline Rng make_rng(std::uint64_t master, Stream stream, std::initializer_list<std::uint64_t> coords = {}) {
    return Rng(derive_seed(master, stream, coords));
}

}  // namespace dmml
