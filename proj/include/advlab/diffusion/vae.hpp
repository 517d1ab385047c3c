#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "advlab/core/nn.hpp"

namespace advlab {
namespace diffusion {

struct VaeConfig {
    int width = 12;        // first-level channel count
    int z_channels = 4;
    int downsample = 8;    // power of two; one stride-2 level per factor of 2
    int image_channels = 3;

    int levels() const {
        int d = downsample, n = 0;
        while (d > 1) {
            if (d % 2) throw ConfigError("vae: downsample must be a power of two");
            d /= 2;
            ++n;
        }
        if (n < 1) throw ConfigError("vae: downsample must be >= 2");
        return n;
    }
    int level_channels(int i) const { return width * std::min(i + 1, 3); }
};

// Convolutional autoencoder. The encoder is deterministic (posterior mean,
// no sampling) and the decoder output is clamped to [0,1].
class ImageVae : public nn::Module {
public:
    ImageVae() = default;
    ImageVae(const VaeConfig& cfg, Rng& rng) : cfg_(cfg) {
        const int n = cfg.levels();
        enc_.resize(static_cast<size_t>(n));
        dec_.resize(static_cast<size_t>(n));
        int cin = cfg.image_channels;
        for (int i = 0; i < n; ++i) {
            enc_[static_cast<size_t>(i)] = nn::Conv2dLayer(cin, cfg.level_channels(i), 3, 2, 1, rng);
            cin = cfg.level_channels(i);
        }
        to_z_ = nn::Conv2dLayer(cin, cfg.z_channels, 3, 1, 1, rng);
        from_z_ = nn::Conv2dLayer(cfg.z_channels, cin, 3, 1, 1, rng);
        for (int i = n - 1; i >= 0; --i) {
            const int cout = i == 0 ? cfg.width : cfg.level_channels(i - 1);
            dec_[static_cast<size_t>(i)] = nn::Conv2dLayer(cfg.level_channels(i), cout, 3, 1, 1, rng);
        }
        out_ = nn::Conv2dLayer(cfg.width, cfg.image_channels, 3, 1, 1, rng);
    }

    void visit(nn::ParamVisitor& v) const override {
        for (size_t i = 0; i < enc_.size(); ++i) v.child("enc" + std::to_string(i), enc_[i]);
        v.child("to_z", to_z_);
        v.child("from_z", from_z_);
        for (size_t i = 0; i < dec_.size(); ++i) v.child("dec" + std::to_string(i), dec_[i]);
        v.child("out", out_);
    }

    const VaeConfig& config() const { return cfg_; }

    Var encode(const Var& x) const {
        if (x->val.ndim() != 3 || x->val.dim(0) != cfg_.image_channels)
            throw ShapeError("vae encode: expected [" + std::to_string(cfg_.image_channels) + ",H,W], got " +
                             x->val.shape_str());
        if (x->val.dim(1) % cfg_.downsample != 0 || x->val.dim(2) % cfg_.downsample != 0)
            throw ShapeError("vae encode: spatial dims must be divisible by " + std::to_string(cfg_.downsample));
        Var h = x;
        for (const auto& c : enc_) h = silu(c.forward(h));
        return to_z_.forward(h);
    }

    Var decode(const Var& z) const {
        if (z->val.ndim() != 3 || z->val.dim(0) != cfg_.z_channels)
            throw ShapeError("vae decode: expected [" + std::to_string(cfg_.z_channels) + ",h,w], got " +
                             z->val.shape_str());
        Var h = silu(from_z_.forward(z));
        for (int i = static_cast<int>(dec_.size()) - 1; i >= 0; --i) {
            h = upsample_nearest2(h);
            h = silu(dec_[static_cast<size_t>(i)].forward(h));
        }
        return clamp_scalar(out_.forward(h), 0.0f, 1.0f);
    }

private:
    VaeConfig cfg_;
    std::vector<nn::Conv2dLayer> enc_, dec_;
    nn::Conv2dLayer to_z_, from_z_, out_;
};

}  // namespace diffusion
}  // namespace advlab
