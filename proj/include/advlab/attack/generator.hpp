#pragma once

#include <string>

#include "advlab/diffusion/vae.hpp"

namespace advlab {
namespace attack {

enum class AttackVariant { advi2i = 0, adaptive = 1, direct = 2, attack_vae = 3, clean = 4 };

inline const char* variant_name(AttackVariant v) {
    switch (v) {
        case AttackVariant::advi2i: return "advi2i";
        case AttackVariant::adaptive: return "adaptive";
        case AttackVariant::direct: return "direct";
        case AttackVariant::attack_vae: return "attack_vae";
        case AttackVariant::clean: return "clean";
    }
    return "?";
}

inline AttackVariant variant_from_name(const std::string& s) {
    for (AttackVariant v : {AttackVariant::advi2i, AttackVariant::adaptive, AttackVariant::direct,
                            AttackVariant::attack_vae, AttackVariant::clean})
        if (s == variant_name(v)) return v;
    throw ConfigError("unknown attack variant: " + s);
}

struct AttackConfig {
    double epsilon = 64.0 / 255.0;  // L-inf pixel budget
    double alpha = 2.5;             // concept strength
    double mu = 1.0;                // checker-loss weight (adaptive)
    double sigma_g = 0.05;          // gaussian training noise (adaptive)
    bool sigma_g_is_variance = false;
    int t_target = 1;
    AttackVariant variant = AttackVariant::advi2i;
    int steps = 2000;
    double lr = 1e-4;
    int batch = 1;
    uint64_t seed = 21;

    double sigma_g_std() const { return sigma_g_is_variance ? std::sqrt(sigma_g) : sigma_g; }

    void validate() const {
        if (epsilon <= 0.0) throw ConfigError("attack: epsilon must be > 0");
        if (mu < 0.0) throw ConfigError("attack: mu must be >= 0");
        if (sigma_g < 0.0) throw ConfigError("attack: sigma_g must be >= 0");
        if (t_target < 1) throw ConfigError("attack: t_target must be >= 1");
        if (steps < 0 || batch < 1) throw ConfigError("attack: bad steps/batch");
    }
};

// Encoder-decoder image generator (weights psi), initialized from the
// pretrained image autoencoder so its raw output starts near the input.
struct AdvGenerator {
    diffusion::ImageVae net;
    diffusion::VaeConfig cfg;
};

inline AdvGenerator make_generator_from_vae(const diffusion::ImageVae& vae) {
    AdvGenerator g;
    g.cfg = vae.config();
    Rng rng(0x9d2c5680);  // immediately overwritten by the pretrained weights
    g.net = diffusion::ImageVae(g.cfg, rng);
    g.net.load_state_dict(vae.state_dict());
    return g;
}

inline Var generator_raw(const AdvGenerator& gen, const Var& x) { return gen.net.decode(gen.net.encode(x)); }

// projection bounds: the eps ball around x intersected with [0,1]
inline std::pair<Tensor, Tensor> projection_bounds(const Tensor& x, double eps) {
    Tensor lo = x, hi = x;
    for (int64_t i = 0; i < x.numel(); ++i) {
        lo[i] = std::max(0.0f, static_cast<float>(x[i] - eps));
        hi[i] = std::min(1.0f, static_cast<float>(x[i] + eps));
    }
    return {lo, hi};
}

// y = clamp(g_raw(x), x - eps, x + eps) then clamp to [0,1]; the clamp passes
// gradient wherever the raw output is inside the active bounds
inline Var perturb(const AdvGenerator& gen, const Var& x, double eps) {
    if (eps <= 0.0) throw ConfigError("perturb: epsilon must be > 0");
    auto [lo, hi] = projection_bounds(x->val, eps);
    return clamp(generator_raw(gen, x), lo, hi);
}

inline Tensor perturb(const AdvGenerator& gen, const Tensor& x, double eps) {
    NoGradGuard ng;
    return perturb(gen, constant(x), eps)->val;
}

// direct-optimization baseline: universal additive perturbation
inline Var apply_delta(const Var& x, const Var& delta, double eps) {
    auto [lo, hi] = projection_bounds(x->val, eps);
    return clamp(add(x, delta), lo, hi);
}

inline Tensor apply_delta(const Tensor& x, const Tensor& delta, double eps) {
    NoGradGuard ng;
    return apply_delta(constant(x), constant(delta), eps)->val;
}

}  // namespace attack
}  // namespace advlab
