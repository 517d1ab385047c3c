#pragma once

#include <map>
#include <string>
#include <vector>

#include "advlab/core/nn.hpp"

namespace advlab {
namespace diffusion {

struct TextEncoderConfig {
    int dim = 32;        // embedding width D
    int len = 16;        // fixed sequence length L
    int mixer_blocks = 2;
};

// Token embedding + learned positions + token-mixing blocks. Output is
// always [L,D]; token id 0 is the padding row, so an empty prompt encodes to
// L copies of the learned padding vector.
class TextEncoder : public nn::Module {
public:
    TextEncoder() = default;
    TextEncoder(const std::vector<std::string>& vocab, const TextEncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
        for (size_t i = 0; i < vocab.size(); ++i) token_ids_[vocab[i]] = static_cast<int>(i) + 1;
        table = nn::Embedding(static_cast<int>(vocab.size()) + 1, cfg.dim, rng);
        pos = leaf(Tensor::randn({cfg.len, cfg.dim}, rng, 0.04f));
        blocks_.resize(static_cast<size_t>(cfg.mixer_blocks));
        for (auto& blk : blocks_) {
            blk.token_mix = leaf(Tensor::zeros({cfg.len, cfg.len}));
            blk.w1 = nn::Linear(cfg.dim, cfg.dim, rng);
            blk.w2 = nn::Linear(cfg.dim, cfg.dim, rng, /*zero_init=*/true);
        }
    }

    void visit(nn::ParamVisitor& v) const override {
        v.child("table", table);
        v.param("pos", pos);
        for (size_t b = 0; b < blocks_.size(); ++b) {
            const std::string p = "block" + std::to_string(b) + ".";
            v.param(p + "token_mix", blocks_[b].token_mix);
            v.child(p + "w1", blocks_[b].w1);
            v.child(p + "w2", blocks_[b].w2);
        }
    }

    const TextEncoderConfig& config() const { return cfg_; }
    int seq_len() const { return cfg_.len; }
    int dim() const { return cfg_.dim; }

    std::vector<int> tokenize(const std::vector<std::string>& tokens) const {
        std::vector<int> ids(static_cast<size_t>(cfg_.len), 0);
        const size_t n = std::min(tokens.size(), static_cast<size_t>(cfg_.len));
        for (size_t i = 0; i < n; ++i) {
            auto it = token_ids_.find(tokens[i]);
            if (it == token_ids_.end()) throw Error("text encoder: unknown token '" + tokens[i] + "'");
            ids[i] = it->second;
        }
        return ids;
    }

    bool knows(const std::string& token) const { return token_ids_.count(token) > 0; }

    // differentiable path (used in training)
    Var encode_var(const std::vector<std::string>& tokens) const {
        Var h = add(table.forward(tokenize(tokens)), pos);
        for (const auto& blk : blocks_) {
            h = add(h, matmul(blk.token_mix, h));
            h = add(h, blk.w2.forward(silu(blk.w1.forward(h))));
        }
        return h;
    }

    Tensor encode(const std::vector<std::string>& tokens) const {
        NoGradGuard ng;
        return encode_var(tokens)->val;
    }

private:
    struct MixerBlock {
        Var token_mix;  // [L,L], zero-init so the block starts as identity
        nn::Linear w1, w2;
    };

    TextEncoderConfig cfg_;
    std::map<std::string, int> token_ids_;
    std::vector<MixerBlock> blocks_;

public:
    nn::Embedding table;
    Var pos;
};

}  // namespace diffusion
}  // namespace advlab
