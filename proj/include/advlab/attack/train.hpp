#pragma once

#include <map>
#include <vector>

#include "advlab/attack/losses.hpp"
#include "advlab/core/optim.hpp"

namespace advlab {
namespace attack {

struct TraceRow {
    int step = 0;
    double l_adv = 0.0;
    double l_sc = 0.0;
    double total = 0.0;
};

struct ProjectionAudit {
    int64_t steps_audited = 0;
    int64_t violations = 0;       // steps where the eps ball or [0,1] range was broken
    double max_linf_dev = 0.0;    // worst observed max|y - x|
    bool all_in_range = true;

    void record(const Tensor& x, const Tensor& y, double eps) {
        ++steps_audited;
        double dev = 0.0;
        bool in_range = true;
        for (int64_t i = 0; i < x.numel(); ++i) {
            dev = std::max(dev, std::fabs(static_cast<double>(y[i]) - x[i]));
            if (y[i] < 0.0f || y[i] > 1.0f) in_range = false;
        }
        max_linf_dev = std::max(max_linf_dev, dev);
        if (dev > eps + 1e-7 || !in_range) ++violations;
        all_in_range = all_in_range && in_range;
    }
};

struct AttackDivergenceError : Error {
    std::vector<TraceRow> trace;
    int step;
    AttackDivergenceError(const std::string& msg, std::vector<TraceRow> tr, int s)
        : Error(msg), trace(std::move(tr)), step(s) {}
};

struct GeneratorTrainResult {
    AdvGenerator gen;
    AttackConfig cfg;
    std::string concept_hash;
    std::vector<TraceRow> trace;
    ProjectionAudit audit;
};

namespace traindetail {

struct SampleContext {
    const world::SampleRecord* record;
    const Tensor* image;
    const world::TokenSeq* prompt;
    Tensor z_top;
    const Tensor* mask_channel;  // null outside inpaint mode
};

// deterministic per-sample state shared by both loss branches
class SamplePool {
public:
    SamplePool(const diffusion::DiffusionModel& model, const world::Dataset& ds, uint64_t seed)
        : model_(model), ds_(ds), seed_(seed) {
        records_ = ds.split_records(world::Split::train);
        if (records_.empty()) throw ConfigError("attack training: empty train split");
    }

    size_t size() const { return records_.size(); }

    SampleContext get(int index) {
        const world::SampleRecord* r = records_[static_cast<size_t>(index)];
        SampleContext sc;
        sc.record = r;
        sc.image = &ds_.image_of(*r).image;
        sc.prompt = &ds_.prompt_of(*r).tokens;
        auto zit = z_tops_.find(r->id);
        if (zit == z_tops_.end()) {
            Rng rng(derive_seed(seed_, "z_top.sample", static_cast<uint64_t>(r->id)));
            zit = z_tops_.emplace(r->id, Tensor::randn(model_.latent_shape(), rng)).first;
        }
        sc.z_top = zit->second;
        sc.mask_channel = nullptr;
        if (model_.cfg.inpaint()) {
            auto mit = masks_.find(r->id);
            if (mit == masks_.end())
                mit = masks_.emplace(r->id, diffusion::mask_to_latent_channel(model_, ds_.mask_for(*r))).first;
            sc.mask_channel = &mit->second;
        }
        return sc;
    }

private:
    const diffusion::DiffusionModel& model_;
    const world::Dataset& ds_;
    uint64_t seed_;
    std::vector<const world::SampleRecord*> records_;
    std::map<int, Tensor> z_tops_;
    std::map<int, Tensor> masks_;
};

}  // namespace traindetail

// Attack training loop: sample (x, p), shift the prompt embedding by the
// concept vector, project the generated image into the eps ball, minimize the
// variant loss, update psi. Trace and projection audit cover every step.
inline GeneratorTrainResult train_generator(const diffusion::DiffusionModel& model, const world::Dataset& ds,
                                            const ConceptVector& concept_vec, const defenses::SafetyChecker* checker,
                                            const AttackConfig& cfg) {
    cfg.validate();
    if (cfg.variant != AttackVariant::advi2i && cfg.variant != AttackVariant::adaptive)
        throw ConfigError("train_generator handles the advi2i/adaptive variants");
    if (cfg.variant == AttackVariant::adaptive && cfg.mu > 0.0 && checker == nullptr)
        throw ConfigError("adaptive attack requires a safety checker");

    GeneratorTrainResult res;
    res.cfg = cfg;
    res.concept_hash = concept_vec.source_hash;
    res.gen = make_generator_from_vae(model.vae);

    traindetail::SamplePool pool(model, ds, cfg.seed);
    TargetCache cache;
    std::map<int, Tensor> tau_shifted;  // per prompt id
    auto shifted_for = [&](const world::SampleRecord& r) -> const Tensor& {
        auto it = tau_shifted.find(r.prompt_id);
        if (it == tau_shifted.end()) {
            Tensor tau = diffusion::encode_text(model, ds.prompt_of(r).tokens);
            it = tau_shifted.emplace(r.prompt_id, shift_embedding(tau, concept_vec, cfg.alpha).values).first;
        }
        return it->second;
    };

    Adam opt(res.gen.net.parameters(), cfg.lr);
    Rng sample_rng(derive_seed(cfg.seed, "attack.sample"));
    Rng noise_rng(derive_seed(cfg.seed, "attack.noise"));
    for (int step = 0; step < cfg.steps; ++step) {
        opt.zero_grad();
        Var total;
        double l_adv_acc = 0.0, l_sc_acc = 0.0;
        for (int b = 0; b < cfg.batch; ++b) {
            auto sc = pool.get(sample_rng.uniform_int(static_cast<int>(pool.size())));
            const uint64_t key = static_cast<uint64_t>(sc.record->id);
            Var loss;
            if (cfg.variant == AttackVariant::advi2i) {
                loss = adv_loss(model, *sc.image, *sc.prompt, shifted_for(*sc.record), res.gen, cfg.epsilon,
                                sc.z_top, cfg.t_target, &cache, key, sc.mask_channel);
                l_adv_acc += loss->val[0];
            } else {
                auto parts = adaptive_loss(model, checker, *sc.image, *sc.prompt, shifted_for(*sc.record),
                                           res.gen, cfg, sc.z_top, noise_rng, &cache, key, sc.mask_channel);
                loss = parts.total;
                l_adv_acc += parts.l_adv;
                l_sc_acc += parts.l_sc;
            }
            {
                NoGradGuard ng;
                res.audit.record(*sc.image, perturb(res.gen, *sc.image, cfg.epsilon), cfg.epsilon);
            }
            total = total ? add(total, loss) : loss;
        }
        total = scale(total, 1.0 / cfg.batch);
        const double tv = total->val[0];
        if (!std::isfinite(tv))
            throw AttackDivergenceError("attack training loss non-finite at step " + std::to_string(step),
                                        res.trace, step);
        res.trace.push_back({step, l_adv_acc / cfg.batch, l_sc_acc / cfg.batch, tv});
        backward(total);
        opt.step();
    }
    return res;
}

struct DirectPerturbationResult {
    Tensor delta;  // universal additive perturbation, ||delta||_inf <= eps
    AttackConfig cfg;
    std::string concept_hash;
    std::vector<TraceRow> trace;
    ProjectionAudit audit;
};

// Ablation baseline: one image-shaped perturbation optimized with the same
// latent-matching objective and projected after every update.
inline DirectPerturbationResult optimize_direct_perturbation(const diffusion::DiffusionModel& model,
                                                             const world::Dataset& ds,
                                                             const ConceptVector& concept_vec,
                                                             const AttackConfig& cfg) {
    cfg.validate();
    DirectPerturbationResult res;
    res.cfg = cfg;
    res.concept_hash = concept_vec.source_hash;
    res.delta = Tensor::zeros({3, ds.cfg.image_size, ds.cfg.image_size});

    traindetail::SamplePool pool(model, ds, cfg.seed);
    TargetCache cache;
    std::map<int, Tensor> tau_shifted;
    Var delta = leaf(res.delta);
    Adam opt({delta}, cfg.lr > 0 ? std::max(cfg.lr, 1e-3) : 1e-3);  // a bare perturbation needs a larger step
    Rng sample_rng(derive_seed(cfg.seed, "direct.sample"));
    for (int step = 0; step < cfg.steps; ++step) {
        opt.zero_grad();
        Var total;
        for (int b = 0; b < cfg.batch; ++b) {
            auto sc = pool.get(sample_rng.uniform_int(static_cast<int>(pool.size())));
            auto it = tau_shifted.find(sc.record->prompt_id);
            if (it == tau_shifted.end()) {
                Tensor tau = diffusion::encode_text(model, *sc.prompt);
                it = tau_shifted.emplace(sc.record->prompt_id, shift_embedding(tau, concept_vec, cfg.alpha).values)
                         .first;
            }
            Tensor target = target_branch_latent(model, *sc.image, it->second, sc.z_top, cfg.t_target, &cache,
                                                 static_cast<uint64_t>(sc.record->id), sc.mask_channel);
            Var y = apply_delta(constant(*sc.image), delta, cfg.epsilon);
            Var loss = latent_match_loss(model, y, diffusion::encode_text(model, *sc.prompt), sc.z_top,
                                         cfg.t_target, target, sc.mask_channel);
            {
                NoGradGuard ng;
                res.audit.record(*sc.image, y->val, cfg.epsilon);
            }
            total = total ? add(total, loss) : loss;
        }
        total = scale(total, 1.0 / cfg.batch);
        const double tv = total->val[0];
        if (!std::isfinite(tv))
            throw AttackDivergenceError("direct perturbation loss non-finite at step " + std::to_string(step),
                                        res.trace, step);
        res.trace.push_back({step, tv, 0.0, tv});
        backward(total);
        opt.step();
        // keep the universal perturbation itself inside the eps ball
        const float e = static_cast<float>(cfg.epsilon);
        for (auto& v : delta->val.data) v = std::min(std::max(v, -e), e);
    }
    res.delta = delta->val;
    return res;
}

// Latent reconstruction baseline: the generator only matches the encoder
// latent of concept-bearing target images; no diffusion rollout involved.
inline GeneratorTrainResult attack_vae_baseline(const diffusion::DiffusionModel& model, const world::Dataset& ds,
                                                const std::vector<Tensor>& target_images,
                                                const AttackConfig& cfg) {
    cfg.validate();
    if (target_images.empty()) throw ConfigError("attack_vae: need at least one target image");
    GeneratorTrainResult res;
    res.cfg = cfg;
    res.gen = make_generator_from_vae(model.vae);

    auto train_records = ds.split_records(world::Split::train);
    if (train_records.empty()) throw ConfigError("attack training: empty train split");
    std::vector<Tensor> target_latents;
    {
        NoGradGuard ng;
        for (const auto& t : target_images) target_latents.push_back(diffusion::encode_image(model, t));
    }

    Adam opt(res.gen.net.parameters(), cfg.lr);
    Rng rng(derive_seed(cfg.seed, "attack_vae.sample"));
    for (int step = 0; step < cfg.steps; ++step) {
        opt.zero_grad();
        Var total;
        for (int b = 0; b < cfg.batch; ++b) {
            const auto* r = train_records[static_cast<size_t>(rng.uniform_int(static_cast<int>(train_records.size())))];
            const Tensor& x = ds.image_of(*r).image;
            const Tensor& zt = target_latents[static_cast<size_t>(rng.uniform_int(static_cast<int>(target_latents.size())))];
            Var y = perturb(res.gen, constant(x), cfg.epsilon);
            Var loss = sum_sq_diff(diffusion::encode_image(model, y), constant(zt));
            {
                NoGradGuard ng;
                res.audit.record(x, y->val, cfg.epsilon);
            }
            total = total ? add(total, loss) : loss;
        }
        total = scale(total, 1.0 / cfg.batch);
        const double tv = total->val[0];
        if (!std::isfinite(tv))
            throw AttackDivergenceError("attack_vae loss non-finite at step " + std::to_string(step), res.trace,
                                        step);
        res.trace.push_back({step, tv, 0.0, tv});
        backward(total);
        opt.step();
    }
    return res;
}

}  // namespace attack
}  // namespace advlab
