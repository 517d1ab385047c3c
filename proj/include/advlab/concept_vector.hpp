#pragma once

#include <string>

#include "advlab/core/sha256.hpp"
#include "advlab/diffusion/text_encoder.hpp"
#include "advlab/world/world.hpp"

namespace advlab {

// Mean embedding difference over contrastive prompt pairs: the direction in
// text-feature space that adding the concept token induces.
struct ConceptVector {
    Tensor values;  // [L,D]
    std::string concept_name;
    int n_pairs = 0;
    std::string source_hash;  // hash of the pair token lists
};

struct ShiftedEmbedding {
    Tensor values;  // [L,D]
    double alpha = 0.0;
    std::string base_prompt;  // joined tokens, for provenance
};

inline std::string prompt_pairs_hash(const world::PromptPairSet& pairs) {
    Sha256 h;
    h.update(pairs.concept_name);
    for (const auto& [pc, pn] : pairs.pairs) {
        for (const auto& t : pc) {
            h.update(t);
            h.update("\x1f", 1);
        }
        h.update("\x1e", 1);
        for (const auto& t : pn) {
            h.update(t);
            h.update("\x1f", 1);
        }
        h.update("\x1d", 1);
    }
    return h.hex_digest();
}

// c = (1/N) * sum_i [ tau(p_i_with_concept) - tau(p_i_without) ], elementwise
inline ConceptVector extract_concept(const world::PromptPairSet& pairs, const diffusion::TextEncoder& encoder) {
    if (pairs.pairs.empty()) throw ConfigError("extract_concept: empty pair set");
    ConceptVector out;
    out.concept_name = pairs.concept_name;
    out.n_pairs = static_cast<int>(pairs.pairs.size());
    out.source_hash = prompt_pairs_hash(pairs);
    std::vector<double> acc;
    for (const auto& [pc, pn] : pairs.pairs) {
        Tensor ec = encoder.encode(pc);
        Tensor en = encoder.encode(pn);
        if (acc.empty()) {
            acc.assign(static_cast<size_t>(ec.numel()), 0.0);
            out.values = Tensor::zeros(ec.shape);
        }
        for (int64_t i = 0; i < ec.numel(); ++i) acc[static_cast<size_t>(i)] += static_cast<double>(ec[i]) - en[i];
    }
    const double inv = 1.0 / out.n_pairs;
    for (int64_t i = 0; i < out.values.numel(); ++i)
        out.values[i] = static_cast<float>(acc[static_cast<size_t>(i)] * inv);
    if (!out.values.all_finite()) throw Error("extract_concept: non-finite concept vector");
    return out;
}

// tau + alpha * c, elementwise
inline ShiftedEmbedding shift_embedding(const Tensor& tau, const ConceptVector& c, double alpha,
                                        const std::string& base_prompt = "") {
    require_same_shape(tau, c.values, "shift_embedding");
    ShiftedEmbedding out;
    out.alpha = alpha;
    out.base_prompt = base_prompt;
    out.values = tau;
    for (int64_t i = 0; i < tau.numel(); ++i)
        out.values[i] = static_cast<float>(tau[i] + alpha * c.values[i]);
    return out;
}

}  // namespace advlab
