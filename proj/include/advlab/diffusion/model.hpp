#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "advlab/core/optim.hpp"
#include "advlab/core/sha256.hpp"
#include "advlab/defenses/guidance.hpp"
#include "advlab/diffusion/denoiser.hpp"
#include "advlab/diffusion/scheduler.hpp"
#include "advlab/diffusion/text_encoder.hpp"
#include "advlab/diffusion/vae.hpp"
#include "advlab/world/world.hpp"

namespace advlab {
namespace diffusion {

struct DiffusionConfig {
    std::string arch = "conv_film";  // conv_film | cross_attn
    std::string mode = "instruct";   // instruct | inpaint
    int image_size = 64;
    int latent_channels = 4;
    int downsample = 8;
    int vae_width = 12;
    int denoiser_width = 40;
    int text_dim = 32;
    int text_len = 16;
    int t_train = 100;
    int k_infer = 4;
    // training
    int vae_steps = 1500;
    int vae_batch = 2;
    double vae_lr = 2e-3;
    int steps = 4500;
    int batch = 8;
    double lr = 2e-3;
    int snapshot_every = 250;
    uint64_t seed = 5;

    bool inpaint() const { return mode == "inpaint"; }

    void validate() const {
        if (mode != "instruct" && mode != "inpaint") throw ConfigError("diffusion: mode must be instruct|inpaint");
        if (arch != "conv_film" && arch != "cross_attn") throw ConfigError("diffusion: unknown arch " + arch);
        if (image_size % downsample != 0) throw ConfigError("diffusion: image_size not divisible by downsample");
        if (t_train < 1 || k_infer < 1 || k_infer > t_train) throw ConfigError("diffusion: bad t_train/k_infer");
    }
};

struct DiffusionModel {
    DiffusionConfig cfg;
    std::vector<std::string> vocab;
    TextEncoder text_encoder;
    ImageVae vae;
    std::unique_ptr<Denoiser> denoiser;
    SchedulerConfig scheduler;
    float latent_scale = 1.0f;
    uint64_t seed = 0;

    int latent_size() const { return cfg.image_size / cfg.downsample; }
    std::vector<int> latent_shape() const { return {cfg.latent_channels, latent_size(), latent_size()}; }
};

inline DiffusionModel make_diffusion_model(const DiffusionConfig& cfg, const std::vector<std::string>& vocab) {
    cfg.validate();
    DiffusionModel m;
    m.cfg = cfg;
    m.vocab = vocab;
    m.seed = cfg.seed;
    Rng te_rng(derive_seed(cfg.seed, "init.text"));
    m.text_encoder = TextEncoder(vocab, {cfg.text_dim, cfg.text_len, 2}, te_rng);
    Rng vae_rng(derive_seed(cfg.seed, "init.vae"));
    m.vae = ImageVae({cfg.vae_width, cfg.latent_channels, cfg.downsample, 3}, vae_rng);
    Rng den_rng(derive_seed(cfg.seed, "init.denoiser"));
    DenoiserConfig dc;
    dc.arch = cfg.arch;
    dc.width = cfg.denoiser_width;
    dc.z_channels = cfg.latent_channels;
    dc.text_dim = cfg.text_dim;
    dc.inpaint = cfg.inpaint();
    m.denoiser = make_denoiser(dc, den_rng);
    m.scheduler = SchedulerConfig::cosine(cfg.t_train, cfg.k_infer);
    return m;
}

// ---------------------------------------------------------------------------
// encode / decode
// ---------------------------------------------------------------------------

inline Var encode_image(const DiffusionModel& m, const Var& x) {
    return scale(m.vae.encode(x), m.latent_scale);
}

inline Var decode_latent(const DiffusionModel& m, const Var& z) {
    return m.vae.decode(scale(z, 1.0 / m.latent_scale));
}

inline Tensor encode_image(const DiffusionModel& m, const Tensor& x) {
    NoGradGuard ng;
    return encode_image(m, constant(x))->val;
}

inline Tensor decode_latent(const DiffusionModel& m, const Tensor& z) {
    NoGradGuard ng;
    return decode_latent(m, constant(z))->val;
}

inline Tensor encode_text(const DiffusionModel& m, const world::TokenSeq& prompt) {
    return m.text_encoder.encode(prompt);
}

// mask [H,W] -> latent-resolution channel [1,h,w]
inline Tensor mask_to_latent_channel(const DiffusionModel& m, const Tensor& mask) {
    if (mask.ndim() != 2 || mask.dim(0) != m.cfg.image_size || mask.dim(1) != m.cfg.image_size)
        throw ShapeError("mask must be [" + std::to_string(m.cfg.image_size) + "," +
                         std::to_string(m.cfg.image_size) + "]");
    NoGradGuard ng;
    Var v = constant(mask);
    v = reshape(v, {1, mask.dim(0), mask.dim(1)});
    int ds = m.cfg.downsample;
    while (ds > 1) {
        v = avg_pool2(v);
        ds /= 2;
    }
    return v->val;
}

// conditioning tensor fed to the denoiser alongside z_t
inline Var build_condition(const DiffusionModel& m, const Var& image_latent, const Tensor* mask_channel) {
    if (!m.cfg.inpaint()) return image_latent;
    if (mask_channel == nullptr) throw Error("inpaint model: mask required");
    return concat_channels(image_latent, constant(*mask_channel));
}

// ---------------------------------------------------------------------------
// sampling
// ---------------------------------------------------------------------------

// one deterministic update z_t -> z_{t-1}; exposed span version is used by
// the k-step inference grid
inline Var denoise_span(const DiffusionModel& m, const Var& z, const Var& cond, const Var& tau, int t_from,
                        int t_to) {
    auto [a, b] = m.scheduler.span_coeffs(t_from, t_to);
    Var eps = m.denoiser->predict(z, cond, tau, t_from);
    return add(scale(z, a), scale(eps, b));
}

inline Var denoise_step(const DiffusionModel& m, const Var& z, const Var& cond, const Var& tau, int t) {
    if (t < 1 || t > m.scheduler.t_train) throw Error("denoise_step: t out of range");
    return denoise_span(m, z, cond, tau, t, t - 1);
}

// Full differentiable trajectory from z_T down to z_{t_stop} over the k-step
// inference grid. Gradients flow into x, tau and the model parameters.
inline Var rollout(const DiffusionModel& m, const Var& x, const Var& tau, const Tensor& z_top, int t_stop,
                   const Tensor* mask_channel = nullptr) {
    if (t_stop < 1) throw Error("rollout: t_stop must be >= 1");
    Var cond = build_condition(m, encode_image(m, x), mask_channel);
    Var z = constant(z_top);
    const auto grid = m.scheduler.time_grid(t_stop);
    for (size_t k = 0; k + 1 < grid.size(); ++k) z = denoise_span(m, z, cond, tau, grid[k], grid[k + 1]);
    return z;
}

inline Tensor sample_initial_latent(const DiffusionModel& m, uint64_t seed) {
    Rng rng(derive_seed(seed, "z_top"));
    return Tensor::randn(m.latent_shape(), rng);
}

// I2I generation: decode(rollout(x, tau(prompt), z_T, 1)) with optional
// guidance rewrite per step; in inpaint mode the unmasked region is blended
// back from the input in pixel space.
inline Tensor generate(const DiffusionModel& m, const Tensor& x, const world::TokenSeq& prompt,
                       const std::string& mode, const defenses::GuidanceHook& hook, uint64_t seed,
                       const Tensor* mask = nullptr) {
    if (mode != m.cfg.mode)
        throw ConfigError("generate: model was trained for mode '" + m.cfg.mode + "', requested '" + mode + "'");
    if (m.cfg.inpaint() && mask == nullptr) throw Error("generate: inpaint mode requires a mask");
    hook.validate();
    NoGradGuard ng;

    Tensor mask_ch;
    const Tensor* mask_ch_ptr = nullptr;
    if (m.cfg.inpaint()) {
        mask_ch = mask_to_latent_channel(m, *mask);
        mask_ch_ptr = &mask_ch;
    }
    Var xin = constant(x);
    Var cond = build_condition(m, encode_image(m, xin), mask_ch_ptr);
    Var tau = constant(m.text_encoder.encode(prompt));
    Var tau_neg;
    if (hook.kind != defenses::GuidanceKind::none)
        tau_neg = constant(m.text_encoder.encode(hook.negative_prompt));

    Var z = constant(sample_initial_latent(m, seed));
    const auto grid = m.scheduler.time_grid(1);
    for (size_t k = 0; k + 1 < grid.size(); ++k) {
        const int t_from = grid[k], t_to = grid[k + 1];
        Tensor eps = m.denoiser->predict(z, cond, tau, t_from)->val;
        if (hook.kind == defenses::GuidanceKind::sd_np) {
            Tensor eps_neg = m.denoiser->predict(z, cond, tau_neg, t_from)->val;
            eps = defenses::negative_prompt_guidance(eps, eps_neg, hook.scale);
        } else if (hook.kind == defenses::GuidanceKind::sld) {
            Tensor eps_con = m.denoiser->predict(z, cond, tau_neg, t_from)->val;
            eps = defenses::safe_latent_guidance(eps, eps_con, hook.sld_scale, hook.sld_threshold);
        }
        auto [a, b] = m.scheduler.span_coeffs(t_from, t_to);
        Tensor zn = z->val;
        for (int64_t i = 0; i < zn.numel(); ++i)
            zn[i] = static_cast<float>(a * zn[i] + b * eps[i]);
        z = constant(std::move(zn));
    }
    Tensor out = decode_latent(m, z->val);
    if (m.cfg.inpaint()) {
        for (int c = 0; c < out.dim(0); ++c)
            for (int y = 0; y < out.dim(1); ++y)
                for (int xx = 0; xx < out.dim(2); ++xx) {
                    const float mv = mask->at2(y, xx);
                    out.at3(c, y, xx) = mv * out.at3(c, y, xx) + (1.0f - mv) * x.at3(c, y, xx);
                }
    }
    return out;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

struct DiffusionTrainStats {
    double vae_psnr_heldout = 0.0;
    double heldout_loss_init = 0.0;
    double heldout_loss_final = 0.0;
};

namespace modeldetail {

inline int edit_key(const world::EditOp& e) {
    return static_cast<int>(e.kind) * 4096 + (e.color_id + 1) * 64 + static_cast<int>(e.texture);
}

// random grammar edit + a matching surface form; concept textures included
// so the model learns what the concept tokens mean
inline std::pair<world::EditOp, world::TokenSeq> sample_edit(Rng& rng) {
    using namespace world;
    const double u = rng.uniform();
    const int verb = rng.uniform_int(3), noun = rng.uniform_int(4);
    const int color = rng.uniform_int(static_cast<int>(color_names().size()));
    auto any_texture = [&]() {
        static const TextureKind all[] = {TextureKind::hatch, TextureKind::crack, TextureKind::spots,
                                          TextureKind::rings};
        return all[rng.uniform_int(4)];
    };
    if (u < 0.30) {
        auto p = grammar::recolor_prompt(verb, noun, color);
        return {p.edit, p.tokens};
    }
    if (u < 0.40) {
        auto p = grammar::recolor_bg_prompt(rng.uniform_int(2), color);
        return {p.edit, p.tokens};
    }
    if (u < 0.65) {
        auto p = grammar::texture_prompt(rng.uniform_int(2), noun, any_texture());
        return {p.edit, p.tokens};
    }
    auto p = grammar::recolor_texture_prompt(verb, noun, any_texture(), color);
    return {p.edit, p.tokens};
}

struct LatentCache {
    std::map<std::pair<int, int>, Tensor> z0;      // (image_id, edit_key) -> target latent
    std::map<int, Tensor> cond;                    // image_id -> source latent
    std::map<std::pair<int, int>, Tensor> mask_ch; // (image_id, bg_edit)
};

}  // namespace modeldetail

struct HeldoutItem {
    Tensor z0, cond, mask_ch;
    world::TokenSeq prompt;
    int t;
    Tensor noise;
};

inline double denoise_loss_on(const DiffusionModel& m, const std::vector<HeldoutItem>& items) {
    NoGradGuard ng;
    double total = 0.0;
    for (const auto& it : items) {
        Tensor z_t = it.z0;
        const double ab = m.scheduler.abar(it.t);
        const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
        for (int64_t i = 0; i < z_t.numel(); ++i)
            z_t[i] = static_cast<float>(sa * z_t[i] + sb * it.noise[i]);
        Var cond = build_condition(m, constant(it.cond), it.mask_ch.empty() ? nullptr : &it.mask_ch);
        Var pred = m.denoiser->predict(constant(z_t), cond, constant(m.text_encoder.encode(it.prompt)), it.t);
        total += mse(pred, constant(it.noise))->val[0];
    }
    return items.empty() ? 0.0 : total / static_cast<double>(items.size());
}

// Denoiser (+ optionally text encoder) training pass against an already
// pretrained, frozen VAE. Conditioning and target latents are cached.
inline void run_denoiser_training(DiffusionModel& m, const world::Dataset& ds, const DiffusionConfig& cfg,
                                  bool train_text_encoder, DiffusionTrainStats* stats) {
    std::vector<int> train_imgs = ds.split_image_ids(world::Split::train);
    if (train_imgs.empty()) throw ConfigError("diffusion training: empty train split");

    modeldetail::LatentCache cache;
    auto cond_latent = [&](int img_id) -> const Tensor& {
        auto it = cache.cond.find(img_id);
        if (it != cache.cond.end()) return it->second;
        NoGradGuard ng;
        Tensor z = encode_image(m, ds.images[static_cast<size_t>(img_id)].image);
        return cache.cond.emplace(img_id, std::move(z)).first->second;
    };
    auto target_latent = [&](int img_id, const world::EditOp& e) -> const Tensor& {
        const auto key = std::make_pair(img_id, modeldetail::edit_key(e));
        auto it = cache.z0.find(key);
        if (it != cache.z0.end()) return it->second;
        NoGradGuard ng;
        Tensor z = encode_image(
            m, world::render_scene(world::apply_edit(ds.images[static_cast<size_t>(img_id)].scene, e)));
        return cache.z0.emplace(key, std::move(z)).first->second;
    };
    auto mask_channel = [&](int img_id, bool bg_edit) -> const Tensor& {
        const auto key = std::make_pair(img_id, bg_edit ? 1 : 0);
        auto it = cache.mask_ch.find(key);
        if (it != cache.mask_ch.end()) return it->second;
        Tensor mc = mask_to_latent_channel(
            m, world::editable_mask(ds.images[static_cast<size_t>(img_id)].scene, bg_edit));
        return cache.mask_ch.emplace(key, std::move(mc)).first->second;
    };

    std::vector<HeldoutItem> heldout;
    {
        Rng rng(derive_seed(cfg.seed, "denoiser.heldout"));
        for (int i = 0; i < 16; ++i) {
            const int img_id =
                train_imgs[static_cast<size_t>(rng.uniform_int(static_cast<int>(train_imgs.size())))];
            auto [edit, prompt] = modeldetail::sample_edit(rng);
            HeldoutItem it;
            it.z0 = target_latent(img_id, edit);
            it.cond = cond_latent(img_id);
            if (cfg.inpaint()) it.mask_ch = mask_channel(img_id, edit.kind == world::EditKind::recolor_bg);
            it.prompt = prompt;
            it.t = 1 + rng.uniform_int(cfg.t_train);
            it.noise = Tensor::randn(m.latent_shape(), rng);
            heldout.push_back(std::move(it));
        }
    }
    if (stats) stats->heldout_loss_init = denoise_loss_on(m, heldout);

    std::vector<Var> params = m.denoiser->parameters();
    if (train_text_encoder)
        for (auto& p : m.text_encoder.parameters()) params.push_back(p);
    Adam opt(params, cfg.lr);
    Rng rng(derive_seed(cfg.seed, "denoiser.train"));
    int last_good_step = 0;
    for (int step = 0; step < cfg.steps; ++step) {
        opt.zero_grad();
        Var total;
        for (int b = 0; b < cfg.batch; ++b) {
            const int img_id =
                train_imgs[static_cast<size_t>(rng.uniform_int(static_cast<int>(train_imgs.size())))];
            auto [edit, prompt] = modeldetail::sample_edit(rng);
            const Tensor& z0 = target_latent(img_id, edit);
            const Tensor& cnd = cond_latent(img_id);
            const int t = 1 + rng.uniform_int(cfg.t_train);
            Tensor noise = Tensor::randn(m.latent_shape(), rng);
            Tensor z_t = z0;
            const double ab = m.scheduler.abar(t);
            const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
            for (int64_t i = 0; i < z_t.numel(); ++i)
                z_t[i] = static_cast<float>(sa * z_t[i] + sb * noise[i]);
            const Tensor* mk =
                cfg.inpaint() ? &mask_channel(img_id, edit.kind == world::EditKind::recolor_bg) : nullptr;
            Var cond = build_condition(m, constant(cnd), mk);
            Var tau = train_text_encoder ? m.text_encoder.encode_var(prompt)
                                         : constant(m.text_encoder.encode(prompt));
            Var pred = m.denoiser->predict(constant(z_t), cond, tau, t);
            Var loss = mse(pred, constant(noise));
            total = total ? add(total, loss) : loss;
        }
        total = scale(total, 1.0 / cfg.batch);
        if (!std::isfinite(total->val[0]))
            throw DivergenceError("diffusion training loss non-finite at step " + std::to_string(step),
                                  last_good_step);
        backward(total);
        opt.step();
        if ((step + 1) % cfg.snapshot_every == 0) last_good_step = step + 1;
    }
    if (stats) stats->heldout_loss_final = denoise_loss_on(m, heldout);
}

// Standard denoising objective on (source image, edited target, prompt)
// triples synthesized by the renderer. The VAE is pretrained first and kept
// frozen, so conditioning latents are cached. Throws DivergenceError with the
// last snapshotted step if the loss goes non-finite.
inline DiffusionModel train_diffusion_model(const world::Dataset& ds, const DiffusionConfig& cfg,
                                            DiffusionTrainStats* stats_out = nullptr) {
    cfg.validate();
    if (ds.images.empty() || ds.records.empty()) throw ConfigError("diffusion training: empty dataset");
    if (ds.cfg.image_size != cfg.image_size)
        throw ConfigError("diffusion training: dataset image size mismatch");
    DiffusionModel m = make_diffusion_model(cfg, ds.cfg.vocab);

    std::vector<int> train_imgs = ds.split_image_ids(world::Split::train);
    if (train_imgs.empty()) throw ConfigError("diffusion training: empty train split");

    // --- VAE pretraining on pool images and rendered edits ---
    {
        Adam opt(m.vae.parameters(), cfg.vae_lr);
        Rng rng(derive_seed(cfg.seed, "vae.train"));
        nn::StateDict last_good = m.vae.state_dict();
        int last_good_step = 0;
        for (int step = 0; step < cfg.vae_steps; ++step) {
            opt.zero_grad();
            Var total;
            for (int b = 0; b < cfg.vae_batch; ++b) {
                const int img_id = train_imgs[static_cast<size_t>(rng.uniform_int(static_cast<int>(train_imgs.size())))];
                world::SceneParams s = ds.images[static_cast<size_t>(img_id)].scene;
                if (rng.bernoulli(0.5)) s = world::apply_edit(s, modeldetail::sample_edit(rng).first);
                Var x = constant(world::render_scene(s));
                Var z = m.vae.encode(x);
                Var rec = m.vae.decode(z);
                Var loss = add(mse(rec, x), scale(mean_all(mul(z, z)), 1e-3));
                total = total ? add(total, loss) : loss;
            }
            total = scale(total, 1.0 / cfg.vae_batch);
            if (!std::isfinite(total->val[0]))
                throw DivergenceError("vae training loss non-finite at step " + std::to_string(step),
                                      last_good_step);
            backward(total);
            opt.step();
            if ((step + 1) % cfg.snapshot_every == 0) {
                last_good = m.vae.state_dict();
                last_good_step = step + 1;
            }
        }
    }

    // latent scale so diffusion states are roughly unit variance
    {
        NoGradGuard ng;
        Rng rng(derive_seed(cfg.seed, "vae.scale"));
        double sq = 0.0;
        int64_t count = 0;
        for (int i = 0; i < 48; ++i) {
            const int img_id = train_imgs[static_cast<size_t>(rng.uniform_int(static_cast<int>(train_imgs.size())))];
            world::SceneParams s = ds.images[static_cast<size_t>(img_id)].scene;
            if (rng.bernoulli(0.5)) s = world::apply_edit(s, modeldetail::sample_edit(rng).first);
            Tensor z = m.vae.encode(constant(world::render_scene(s)))->val;
            for (float v : z.data) sq += static_cast<double>(v) * v;
            count += z.numel();
        }
        const double stddev = std::sqrt(std::max(sq / static_cast<double>(count), 1e-12));
        m.latent_scale = static_cast<float>(1.0 / stddev);
    }

    // VAE held-out reconstruction quality
    DiffusionTrainStats stats;
    {
        NoGradGuard ng;
        auto eval_imgs = ds.split_image_ids(world::Split::eval_seen);
        if (eval_imgs.empty()) eval_imgs = train_imgs;
        double acc = 0.0;
        int n = 0;
        for (size_t i = 0; i < eval_imgs.size() && n < 32; ++i, ++n) {
            const Tensor& x = ds.images[static_cast<size_t>(eval_imgs[i])].image;
            Tensor rec = m.vae.decode(m.vae.encode(constant(x)))->val;
            acc += psnr(x, rec);
        }
        stats.vae_psnr_heldout = n ? acc / n : 0.0;
    }

    run_denoiser_training(m, ds, cfg, /*train_text_encoder=*/true, &stats);
    if (stats_out) *stats_out = stats;
    return m;
}

// Builds a transfer target: same text encoder, VAE and latent scale as the
// base model, with a freshly initialized denoiser (possibly of a different
// architecture) trained from scratch under a new seed.
inline DiffusionModel retrain_denoiser(const DiffusionModel& base, const world::Dataset& ds,
                                       const std::string& arch, uint64_t seed,
                                       DiffusionTrainStats* stats_out = nullptr) {
    DiffusionConfig cfg = base.cfg;
    cfg.arch = arch;
    cfg.seed = seed;
    DiffusionModel m = make_diffusion_model(cfg, base.vocab);
    m.text_encoder.load_state_dict(base.text_encoder.state_dict());
    m.vae.load_state_dict(base.vae.state_dict());
    m.latent_scale = base.latent_scale;
    m.scheduler = base.scheduler;
    DiffusionTrainStats stats;
    run_denoiser_training(m, ds, cfg, /*train_text_encoder=*/false, &stats);
    if (stats_out) *stats_out = stats;
    return m;
}

// ---------------------------------------------------------------------------
// hashing / state
// ---------------------------------------------------------------------------

inline nn::StateDict model_state_dict(const DiffusionModel& m) {
    nn::StateDict sd;
    for (auto& [k, v] : m.text_encoder.state_dict()) sd["text_encoder." + k] = v;
    for (auto& [k, v] : m.vae.state_dict()) sd["vae." + k] = v;
    for (auto& [k, v] : m.denoiser->state_dict()) sd["denoiser." + k] = v;
    return sd;
}

inline void load_model_state(DiffusionModel& m, const nn::StateDict& sd) {
    nn::StateDict te, vae, den;
    for (auto& [k, v] : sd) {
        if (k.rfind("text_encoder.", 0) == 0) te[k.substr(13)] = v;
        else if (k.rfind("vae.", 0) == 0) vae[k.substr(4)] = v;
        else if (k.rfind("denoiser.", 0) == 0) den[k.substr(9)] = v;
        else throw IntegrityError("unknown model parameter " + k);
    }
    m.text_encoder.load_state_dict(te);
    m.vae.load_state_dict(vae);
    m.denoiser->load_state_dict(den);
}

inline std::string state_dict_hash(const nn::StateDict& sd, const std::string& header) {
    Sha256 h;
    h.update(header);
    for (const auto& [name, t] : sd) {
        h.update(name);
        h.update("\0", 1);
        for (int d : t.shape) {
            uint32_t v = static_cast<uint32_t>(d);
            h.update(&v, sizeof(v));
        }
        h.update(t.data.data(), t.data.size() * sizeof(float));
    }
    return h.hex_digest();
}

inline std::string model_content_hash(const DiffusionModel& m) {
    std::string header = "diffusion/" + m.cfg.arch + "/" + m.cfg.mode + "/" + std::to_string(m.cfg.image_size) +
                         "/" + std::to_string(m.latent_scale) + "/" + std::to_string(m.seed);
    return state_dict_hash(model_state_dict(m), header);
}

}  // namespace diffusion
}  // namespace advlab
