#pragma once

#include <map>
#include <optional>

#include "advlab/attack/generator.hpp"
#include "advlab/concept_vector.hpp"
#include "advlab/defenses/checker.hpp"
#include "advlab/diffusion/model.hpp"

namespace advlab {
namespace attack {

// Cache for the guidance-side branch: the trajectory of the clean image under
// the shifted embedding is gradient-free and fixed per (sample, z_T), so it
// is computed once. Disabling the cache changes nothing but wall time.
struct TargetCache {
    bool enabled = true;
    std::map<uint64_t, Tensor> entries;
};

inline Tensor target_branch_latent(const diffusion::DiffusionModel& model, const Tensor& x,
                                   const Tensor& tau_shifted, const Tensor& z_top, int t_target,
                                   TargetCache* cache = nullptr, uint64_t key = 0,
                                   const Tensor* mask = nullptr) {
    if (cache && cache->enabled) {
        auto it = cache->entries.find(key);
        if (it != cache->entries.end()) return it->second;
    }
    NoGradGuard ng;
    Tensor z = diffusion::rollout(model, constant(x), constant(tau_shifted), z_top, t_target, mask)->val;
    if (cache && cache->enabled) cache->entries.emplace(key, z);
    return z;
}

// squared L2 distance between the adversarial branch latent and a fixed
// target latent; building block shared by the attack variants
inline Var latent_match_loss(const diffusion::DiffusionModel& model, const Var& adv_image, const Tensor& tau,
                             const Tensor& z_top, int t_target, const Tensor& target_latent,
                             const Tensor* mask = nullptr) {
    Var z = diffusion::rollout(model, adv_image, constant(tau), z_top, t_target, mask);
    return sum_sq_diff(z, constant(target_latent));
}

// || f^t(perturb(gen, x), tau(p)) - f^t(x, tau_shifted) ||_2^2
inline Var adv_loss(const diffusion::DiffusionModel& model, const Tensor& x, const world::TokenSeq& prompt,
                    const Tensor& tau_shifted, const AdvGenerator& gen, double epsilon, const Tensor& z_top,
                    int t_target, TargetCache* cache = nullptr, uint64_t cache_key = 0,
                    const Tensor* mask = nullptr) {
    Tensor tau = diffusion::encode_text(model, prompt);
    Tensor target = target_branch_latent(model, x, tau_shifted, z_top, t_target, cache, cache_key, mask);
    Var y = perturb(gen, constant(x), epsilon);
    return latent_match_loss(model, y, tau, z_top, t_target, target, mask);
}

// sum_i cos( phi_sc( decode(f^1(y, tau(p))) ), C_i ) for a given adversarial
// branch latent at t=1
inline Var checker_similarity_from_latent(const diffusion::DiffusionModel& model,
                                          const defenses::SafetyChecker& checker, const Var& z1) {
    Var img = diffusion::decode_latent(model, z1);
    Var feat = defenses::checker_embed_var(checker, img);
    Var total;
    for (const auto& c : checker.concepts) {
        Var term = cosine(feat, constant(c));
        total = total ? add(total, term) : term;
    }
    if (!total) throw ConfigError("safety_checker_loss: checker has no concept vectors");
    return total;
}

inline Var safety_checker_loss(const diffusion::DiffusionModel& model, const defenses::SafetyChecker& checker,
                               const Tensor& x, const world::TokenSeq& prompt, const AdvGenerator& gen,
                               double epsilon, const Tensor& z_top, const Tensor* mask = nullptr) {
    Tensor tau = diffusion::encode_text(model, prompt);
    Var y = perturb(gen, constant(x), epsilon);
    Var z1 = diffusion::rollout(model, y, constant(tau), z_top, 1, mask);
    return checker_similarity_from_latent(model, checker, z1);
}

struct AdaptiveLossParts {
    Var total;
    double l_adv = 0.0;
    double l_sc = 0.0;
};

// adv loss evaluated on perturb(gen,x) + eps_G (noise drawn after the
// projection) plus mu times the checker similarity; mu=0 and sigma=0 reduce
// it to adv_loss exactly (no noise op is inserted in that case)
inline AdaptiveLossParts adaptive_loss(const diffusion::DiffusionModel& model,
                                       const defenses::SafetyChecker* checker, const Tensor& x,
                                       const world::TokenSeq& prompt, const Tensor& tau_shifted,
                                       const AdvGenerator& gen, const AttackConfig& cfg, const Tensor& z_top,
                                       Rng& noise_rng, TargetCache* cache = nullptr, uint64_t cache_key = 0,
                                       const Tensor* mask = nullptr) {
    Tensor tau = diffusion::encode_text(model, prompt);
    Tensor target =
        target_branch_latent(model, x, tau_shifted, z_top, cfg.t_target, cache, cache_key, mask);
    Var y = perturb(gen, constant(x), cfg.epsilon);
    const double sigma = cfg.sigma_g_std();
    if (sigma > 0.0) {
        Tensor noise = Tensor::randn(y->val.shape, noise_rng, static_cast<float>(sigma));
        y = add(y, constant(noise));
    }
    Var z = diffusion::rollout(model, y, constant(tau), z_top, cfg.t_target, mask);
    AdaptiveLossParts parts;
    Var l_adv = sum_sq_diff(z, constant(target));
    parts.l_adv = l_adv->val[0];
    if (cfg.mu > 0.0) {
        if (checker == nullptr) throw ConfigError("adaptive_loss: mu > 0 requires a safety checker");
        Var z1 = cfg.t_target == 1 ? z : diffusion::rollout(model, y, constant(tau), z_top, 1, mask);
        Var l_sc = checker_similarity_from_latent(model, *checker, z1);
        parts.l_sc = l_sc->val[0];
        parts.total = add(l_adv, scale(l_sc, cfg.mu));
    } else {
        parts.total = l_adv;
    }
    return parts;
}

// latent-space reconstruction baseline: || E(perturb(g,x)) - E(x_target) ||_2^2
inline Var attack_vae_loss(const diffusion::DiffusionModel& model, const Var& adv_image,
                           const Tensor& target_image) {
    Tensor zt;
    {
        NoGradGuard ng;
        zt = diffusion::encode_image(model, target_image);
    }
    return sum_sq_diff(diffusion::encode_image(model, adv_image), constant(zt));
}

}  // namespace attack
}  // namespace advlab
