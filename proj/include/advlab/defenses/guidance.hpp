#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "advlab/core/tensor.hpp"

namespace advlab {
namespace defenses {

enum class GuidanceKind { none = 0, sd_np = 1, sld = 2 };

inline const char* guidance_kind_name(GuidanceKind k) {
    switch (k) {
        case GuidanceKind::none: return "none";
        case GuidanceKind::sd_np: return "sd_np";
        case GuidanceKind::sld: return "sld";
    }
    return "?";
}

// Inference-time guidance rewrite applied at every denoise step.
struct GuidanceHook {
    GuidanceKind kind = GuidanceKind::none;
    std::vector<std::string> negative_prompt;  // safety / negative concept words
    double scale = 3.0;                        // guidance scale s (sd_np)
    double sld_scale = 1.0;
    double sld_threshold = 0.1;

    void validate() const {
        if (scale < 0.0) throw ConfigError("guidance: scale must be >= 0");
        if (kind != GuidanceKind::none && negative_prompt.empty())
            throw ConfigError("guidance: negative prompt required");
    }
};

// negative-prompt guidance: eps = eps_neg + s * (eps_pos - eps_neg).
// s=1 reproduces the undefended prediction, s=0 the negative one.
inline Tensor negative_prompt_guidance(const Tensor& eps_pos, const Tensor& eps_neg, double s) {
    require_same_shape(eps_pos, eps_neg, "negative_prompt_guidance");
    Tensor out = eps_pos;
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = static_cast<float>(eps_neg[i] + s * (static_cast<double>(eps_pos[i]) - eps_neg[i]));
    return out;
}

// Simplified safe-guidance rule. With d = eps_concept - eps_pos (the
// direction that would denoise toward the unsafe concept):
//   eps = eps_pos - scale * max(0, d)  wherever |d| > threshold,
//   eps = eps_pos                      elsewhere.
// scale=0 or threshold=inf leave the prediction untouched.
inline Tensor safe_latent_guidance(const Tensor& eps_pos, const Tensor& eps_concept, double scale,
                                   double threshold) {
    require_same_shape(eps_pos, eps_concept, "safe_latent_guidance");
    Tensor out = eps_pos;
    for (int64_t i = 0; i < out.numel(); ++i) {
        const double d = static_cast<double>(eps_concept[i]) - eps_pos[i];
        if (std::fabs(d) > threshold && d > 0.0) out[i] = static_cast<float>(eps_pos[i] - scale * d);
    }
    return out;
}

}  // namespace defenses
}  // namespace advlab
