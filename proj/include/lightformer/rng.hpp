#pragma once

#include <cstdint>

namespace lightformer::rng {

// Counter-based deterministic generator. Every draw is a pure function of
// (key, index), so streams are reproducible regardless of evaluation order.

std::uint64_t splitmix64(std::uint64_t x);

// Order-sensitive key derivation: combine(a, b) != combine(b, a).
std::uint64_t combine(std::uint64_t a, std::uint64_t b);

// Uniform in [0, 1).
double uniform01(std::uint64_t key, std::uint64_t index);

// Zero-mean normal with the given deviation, resampled until |z| <= cutoff
// deviations. Deterministic per (key, index).
double truncated_normal(std::uint64_t key, std::uint64_t index, double sigma,
                        double cutoff_sigmas = 2.0);

}  // namespace lightformer::rng
