/*
 * Copyright 2026 The pgekit Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Deterministic random numbers. The standard <random> distributions are not
// reproducible across library implementations, so every draw that affects a
// result goes through the generators below.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string_view>
#include <utility>

namespace pge {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Combines a key with a counter into a well-mixed 64-bit value.
constexpr std::uint64_t hash_combine(std::uint64_t key, std::uint64_t counter) noexcept {
    return splitmix64(splitmix64(key) ^ (counter + 0x632be59bd9b4e019ULL));
}

/// Derives an independent stream seed from a parent seed and a tag.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return hash_combine(seed, h);
}

/// Uniform double in [0, 1) determined only by (key, index).
inline double counter_uniform(std::uint64_t key, std::uint64_t index) noexcept {
    return static_cast<double>(hash_combine(key, index) >> 11) * 0x1.0p-53;
}

/// Standard normal determined only by (key, index) (Box-Muller on two counters).
inline double counter_normal(std::uint64_t key, std::uint64_t index) noexcept {
    const double u1 = 1.0 - counter_uniform(key, 2 * index);  // (0, 1]
    const double u2 = counter_uniform(key, 2 * index + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Sequential generator for shuffles and sampling.
class Rng {
public:
    explicit Rng(std::uint64_t seed) noexcept : key_(splitmix64(seed)) {}

    std::uint64_t next() noexcept { return hash_combine(key_, counter_++); }

    double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n). n must be positive.
    std::size_t below(std::size_t n) noexcept {
        const std::uint64_t bound = n;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t r = next();
        while (r >= limit) r = next();
        return static_cast<std::size_t>(r % bound);
    }

    double normal() noexcept {
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    template <typename T>
    void shuffle(std::span<T> items) noexcept {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::swap(items[i - 1], items[below(i)]);
        }
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace pge
