#pragma once

#include <memory>
#include <string>
#include <vector>

#include "advlab/core/nn.hpp"

namespace advlab {
namespace diffusion {

struct DenoiserConfig {
    std::string arch = "conv_film";  // or "cross_attn"
    int width = 40;
    int z_channels = 4;
    int text_dim = 32;
    int t_embed_dim = 16;
    bool inpaint = false;  // adds a mask channel to the conditioning

    int in_channels() const { return 2 * z_channels + (inpaint ? 1 : 0); }
};

namespace denoiserdetail {

inline Tensor timestep_embedding(int t, int dim) {
    Tensor e({dim});
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
        e[i] = static_cast<float>(std::sin(t * freq));
        e[half + i] = static_cast<float>(std::cos(t * freq));
    }
    return e;
}

inline Var concat_vec(const Var& a, const Var& b) {
    Var a3 = reshape(a, {a->val.dim(0), 1, 1});
    Var b3 = reshape(b, {b->val.dim(0), 1, 1});
    Var c = concat_channels(a3, b3);
    return reshape(c, {c->val.dim(0)});
}

}  // namespace denoiserdetail

// Noise-prediction network interface: eps_hat(z_t, image latent (+mask), text
// feature, t). Output shape always equals the z_t shape.
class Denoiser : public nn::Module {
public:
    virtual ~Denoiser() = default;
    virtual Var predict(const Var& z_t, const Var& cond_latent, const Var& tau, int t) const = 0;
    virtual const DenoiserConfig& config() const = 0;
};

// Convolutional U-shaped denoiser; text conditioning enters through
// per-channel feature modulation of the pooled prompt feature.
class ConvFilmDenoiser : public Denoiser {
public:
    ConvFilmDenoiser() = default;
    ConvFilmDenoiser(const DenoiserConfig& cfg, Rng& rng) : cfg_(cfg) {
        const int w = cfg.width;
        const int w2 = w + w / 2;
        cond_in_ = nn::Linear(cfg.text_dim + cfg.t_embed_dim, cond_dim_, rng);
        conv_in_ = nn::Conv2dLayer(cfg.in_channels(), w, 3, 1, 1, rng);
        b1a_ = nn::Conv2dLayer(w, w, 3, 1, 1, rng);
        b1b_ = nn::Conv2dLayer(w, w, 3, 1, 1, rng);
        down_ = nn::Conv2dLayer(w, w2, 3, 1, 1, rng);
        b2a_ = nn::Conv2dLayer(w2, w2, 3, 1, 1, rng);
        b2b_ = nn::Conv2dLayer(w2, w2, 3, 1, 1, rng);
        up_ = nn::Conv2dLayer(w2, w, 3, 1, 1, rng);
        fuse_ = nn::Conv2dLayer(2 * w, w, 3, 1, 1, rng);
        b3_ = nn::Conv2dLayer(w, w, 3, 1, 1, rng);
        conv_out_ = nn::Conv2dLayer(w, cfg.z_channels, 3, 1, 1, rng, /*zero_init=*/true);
        film1_ = nn::Linear(cond_dim_, 2 * w, rng, /*zero_init=*/true);
        film2_ = nn::Linear(cond_dim_, 2 * w2, rng, /*zero_init=*/true);
        film3_ = nn::Linear(cond_dim_, 2 * w, rng, /*zero_init=*/true);
    }

    void visit(nn::ParamVisitor& v) const override {
        v.child("cond_in", cond_in_);
        v.child("conv_in", conv_in_);
        v.child("b1a", b1a_);
        v.child("b1b", b1b_);
        v.child("down", down_);
        v.child("b2a", b2a_);
        v.child("b2b", b2b_);
        v.child("up", up_);
        v.child("fuse", fuse_);
        v.child("b3", b3_);
        v.child("conv_out", conv_out_);
        v.child("film1", film1_);
        v.child("film2", film2_);
        v.child("film3", film3_);
    }

    const DenoiserConfig& config() const override { return cfg_; }

    Var predict(const Var& z_t, const Var& cond_latent, const Var& tau, int t) const override {
        Var x = concat_channels(z_t, cond_latent);
        Var pooled = rows_weighted_mean(tau, Tensor::full({tau->val.dim(0)}, 1.0f / tau->val.dim(0)));
        Var temb = constant(denoiserdetail::timestep_embedding(t, cfg_.t_embed_dim));
        Var cond = silu(cond_in_.forward(
            reshape(denoiserdetail::concat_vec(pooled, temb), {1, cfg_.text_dim + cfg_.t_embed_dim})));

        Var h = silu(conv_in_.forward(x));
        h = film_block(h, b1a_, b1b_, film1_, cond);
        Var skip = h;
        Var d = avg_pool2(h);
        d = silu(down_.forward(d));
        d = film_block(d, b2a_, b2b_, film2_, cond);
        Var u = silu(up_.forward(upsample_nearest2(d)));
        h = silu(fuse_.forward(concat_channels(u, skip)));
        h = apply_film(h, film3_, cond);
        h = silu(b3_.forward(h));
        return conv_out_.forward(h);
    }

private:
    static Var apply_film(const Var& h, const nn::Linear& film, const Var& cond) {
        const int c = h->val.dim(0);
        Var gb = reshape(film.forward(cond), {2 * c});
        Var g3 = reshape(gb, {2 * c, 1, 1});
        Var gamma = reshape(slice_channels(g3, 0, c), {c});
        Var beta = reshape(slice_channels(g3, c, 2 * c), {c});
        return channel_affine(h, gamma, beta);
    }

    Var film_block(const Var& h, const nn::Conv2dLayer& ca, const nn::Conv2dLayer& cb, const nn::Linear& film,
                   const Var& cond) const {
        Var m = apply_film(h, film, cond);
        m = silu(ca.forward(m));
        m = cb.forward(m);
        return silu(add(h, m));
    }

    DenoiserConfig cfg_;
    int cond_dim_ = 64;
    nn::Linear cond_in_, film1_, film2_, film3_;
    nn::Conv2dLayer conv_in_, b1a_, b1b_, down_, b2a_, b2b_, up_, fuse_, b3_, conv_out_;
};

// Transformer-flavored denoiser: latent positions cross-attend to the full
// token sequence at the bottleneck. Structurally distinct from the conv/FiLM
// network for transfer experiments.
class CrossAttnDenoiser : public Denoiser {
public:
    CrossAttnDenoiser() = default;
    CrossAttnDenoiser(const DenoiserConfig& cfg, Rng& rng) : cfg_(cfg) {
        const int w = cfg.width;
        t_in_ = nn::Linear(cfg.t_embed_dim, cond_dim_, rng);
        conv_in_ = nn::Conv2dLayer(cfg.in_channels(), w, 3, 1, 1, rng);
        b1a_ = nn::Conv2dLayer(w, w, 3, 1, 1, rng);
        b1b_ = nn::Conv2dLayer(w, w, 3, 1, 1, rng);
        ln_q_ = nn::LayerNorm(w);
        wq_ = nn::Linear(w, w, rng);
        wk_ = nn::Linear(cfg.text_dim, w, rng);
        wv_ = nn::Linear(cfg.text_dim, w, rng);
        wo_ = nn::Linear(w, w, rng, /*zero_init=*/true);
        ln_m_ = nn::LayerNorm(w);
        mlp1_ = nn::Linear(w, 2 * w, rng);
        mlp2_ = nn::Linear(2 * w, w, rng, /*zero_init=*/true);
        b2a_ = nn::Conv2dLayer(w, w, 3, 1, 1, rng);
        b2b_ = nn::Conv2dLayer(w, w, 3, 1, 1, rng);
        conv_out_ = nn::Conv2dLayer(w, cfg.z_channels, 3, 1, 1, rng, /*zero_init=*/true);
        film1_ = nn::Linear(cond_dim_, 2 * w, rng, /*zero_init=*/true);
        film2_ = nn::Linear(cond_dim_, 2 * w, rng, /*zero_init=*/true);
    }

    void visit(nn::ParamVisitor& v) const override {
        v.child("t_in", t_in_);
        v.child("conv_in", conv_in_);
        v.child("b1a", b1a_);
        v.child("b1b", b1b_);
        v.child("ln_q", ln_q_);
        v.child("wq", wq_);
        v.child("wk", wk_);
        v.child("wv", wv_);
        v.child("wo", wo_);
        v.child("ln_m", ln_m_);
        v.child("mlp1", mlp1_);
        v.child("mlp2", mlp2_);
        v.child("b2a", b2a_);
        v.child("b2b", b2b_);
        v.child("conv_out", conv_out_);
        v.child("film1", film1_);
        v.child("film2", film2_);
    }

    const DenoiserConfig& config() const override { return cfg_; }

    Var predict(const Var& z_t, const Var& cond_latent, const Var& tau, int t) const override {
        const int w = cfg_.width;
        Var x = concat_channels(z_t, cond_latent);
        Var temb = constant(denoiserdetail::timestep_embedding(t, cfg_.t_embed_dim));
        Var cond = silu(t_in_.forward(reshape(temb, {1, cfg_.t_embed_dim})));

        Var h = silu(conv_in_.forward(x));
        h = film_block(h, b1a_, b1b_, film1_, cond);

        const int hh = h->val.dim(1), ww = h->val.dim(2);
        Var tokens = transpose2d(reshape(h, {w, hh * ww}));  // [P, w]
        Var q = wq_.forward(ln_q_.forward(tokens));
        Var k = wk_.forward(tau);
        Var v = wv_.forward(tau);
        Var attn = softmax_rows(scale(matmul(q, transpose2d(k)), 1.0 / std::sqrt(static_cast<double>(w))));
        tokens = add(tokens, wo_.forward(matmul(attn, v)));
        tokens = add(tokens, mlp2_.forward(silu(mlp1_.forward(ln_m_.forward(tokens)))));
        h = reshape(transpose2d(tokens), {w, hh, ww});

        h = film_block(h, b2a_, b2b_, film2_, cond);
        return conv_out_.forward(h);
    }

private:
    static Var apply_film(const Var& h, const nn::Linear& film, const Var& cond) {
        const int c = h->val.dim(0);
        Var gb = reshape(film.forward(cond), {2 * c});
        Var g3 = reshape(gb, {2 * c, 1, 1});
        Var gamma = reshape(slice_channels(g3, 0, c), {c});
        Var beta = reshape(slice_channels(g3, c, 2 * c), {c});
        return channel_affine(h, gamma, beta);
    }

    Var film_block(const Var& h, const nn::Conv2dLayer& ca, const nn::Conv2dLayer& cb, const nn::Linear& film,
                   const Var& cond) const {
        Var m = apply_film(h, film, cond);
        m = silu(ca.forward(m));
        m = cb.forward(m);
        return silu(add(h, m));
    }

    DenoiserConfig cfg_;
    int cond_dim_ = 32;
    nn::Linear t_in_, wq_, wk_, wv_, wo_, mlp1_, mlp2_, film1_, film2_;
    nn::LayerNorm ln_q_, ln_m_;
    nn::Conv2dLayer conv_in_, b1a_, b1b_, b2a_, b2b_, conv_out_;
};

inline std::unique_ptr<Denoiser> make_denoiser(const DenoiserConfig& cfg, Rng& rng) {
    if (cfg.arch == "conv_film") return std::make_unique<ConvFilmDenoiser>(cfg, rng);
    if (cfg.arch == "cross_attn") return std::make_unique<CrossAttnDenoiser>(cfg, rng);
    throw ConfigError("unknown denoiser arch: " + cfg.arch);
}

}  // namespace diffusion
}  // namespace advlab
