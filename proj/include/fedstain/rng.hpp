#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace fedstain {

using Rng = std::mt19937_64;

/// Mixes a parent seed with a tag into a child seed (splitmix64 finalizer).
/// Used for the master -> client -> round -> sample seed hierarchy so that
/// every stream is fixed regardless of execution order.
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag);
std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag);

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

double uniform01(Rng& rng);
double uniform(Rng& rng, double lo, double hi);
/// Uniform integer in [lo, hi].
std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi);
double standard_normal(Rng& rng);
double sample_gamma(Rng& rng, double shape);
double sample_beta(Rng& rng, double a, double b);
std::vector<double> sample_dirichlet(Rng& rng, std::span<const double> alpha);
std::vector<double> sample_dirichlet(Rng& rng, std::size_t k, double alpha);

/// First `count` entries of a uniformly random permutation of [0, n).
std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n,
                                                    std::size_t count);

}  // namespace fedstain
