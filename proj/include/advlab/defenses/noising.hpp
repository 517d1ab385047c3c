#pragma once

#include "advlab/core/rng.hpp"
#include "advlab/core/tensor.hpp"

namespace advlab {
namespace defenses {

// Pre-process defense: clamp(x + N(0, sigma^2), 0, 1), seeded. sigma = 0 is
// the identity (no RNG draw happens, so the seed is irrelevant in that case).
inline Tensor gaussian_noising(const Tensor& x, double sigma, uint64_t seed) {
    if (sigma < 0.0) throw ConfigError("gaussian_noising: sigma must be >= 0");
    if (sigma == 0.0) return x;
    Tensor out = x;
    Rng rng(derive_seed(seed, "gaussian_noising"));
    for (auto& v : out.data) {
        v = static_cast<float>(v + sigma * rng.normal());
        v = std::min(std::max(v, 0.0f), 1.0f);
    }
    return out;
}

}  // namespace defenses
}  // namespace advlab
