#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "advlab/core/nn.hpp"
#include "advlab/core/optim.hpp"
#include "advlab/world/detector.hpp"
#include "advlab/world/world.hpp"

namespace advlab {
namespace defenses {

// Image feature extractor of the post-hoc checker. Intentionally smaller
// than the detector and fed a 2x pooled image, so it keys on coarse pattern
// statistics rather than fine texture.
class CheckerNet : public nn::Module {
public:
    CheckerNet() = default;
    explicit CheckerNet(Rng& rng, int feature_dim = 32)
        : c1(3, 8, 3, 2, 1, rng), c2(8, 16, 3, 2, 1, rng), proj(16, feature_dim, rng),
          head(feature_dim, static_cast<int>(world::detector_labels().size()), rng) {}

    void visit(nn::ParamVisitor& v) const override {
        v.child("c1", c1);
        v.child("c2", c2);
        v.child("proj", proj);
        v.child("head", head);
    }

    Var features(const Var& img) const {
        Var h = avg_pool2(img);
        h = silu(c1.forward(h));
        h = silu(c2.forward(h));
        Var f = global_avg_pool(h);
        return reshape(proj.forward(reshape(f, {1, f->val.dim(0)})), {proj.weight->val.dim(1)});
    }

    Var logits_from_features(const Var& f) const { return head.forward(reshape(f, {1, f->val.dim(0)})); }

    nn::Conv2dLayer c1, c2;
    nn::Linear proj, head;
};

struct SafetyChecker {
    CheckerNet net;
    std::string concept_name;
    std::vector<Tensor> concepts;   // M unit feature vectors
    std::vector<float> thresholds;  // theta_i in (0,1)
    uint64_t seed = 0;

    int m() const { return static_cast<int>(concepts.size()); }
};

struct SafetyCheckResult {
    bool flag = false;
    std::vector<float> scores;  // cos(phi(img), C_i)
};

inline Var checker_embed_var(const SafetyChecker& sc, const Var& img) { return sc.net.features(img); }

inline Tensor checker_embed(const SafetyChecker& sc, const Tensor& img) {
    if (img.ndim() != 3 || img.dim(0) != 3) throw ShapeError("checker_embed: image must be [3,H,W]");
    NoGradGuard ng;
    return sc.net.features(constant(img))->val;
}

// scores_i = cos(phi(img), C_i); flag iff any score >= theta_i
inline SafetyCheckResult safety_check(const SafetyChecker& sc, const Tensor& img) {
    Tensor f = checker_embed(sc, img);
    double norm = 0.0;
    for (float v : f.data) norm += static_cast<double>(v) * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) throw Error("safety_check: zero-norm image feature");
    SafetyCheckResult res;
    for (size_t i = 0; i < sc.concepts.size(); ++i) {
        double dot = 0.0, cn = 0.0;
        for (int64_t j = 0; j < f.numel(); ++j) {
            dot += static_cast<double>(f[j]) * sc.concepts[i][j];
            cn += static_cast<double>(sc.concepts[i][j]) * sc.concepts[i][j];
        }
        const float score = static_cast<float>(dot / (norm * std::sqrt(cn)));
        res.scores.push_back(score);
        if (score >= sc.thresholds[i]) res.flag = true;
    }
    return res;
}

struct CheckerTrainConfig {
    int steps = 700;
    int batch = 6;
    double lr = 1e-3;
    int feature_dim = 32;
    int calib_n = 200;
    double fp_target = 0.05;  // max flag rate on clean non-concept images
    double tp_target = 0.90;  // min flag rate on rendered concept images
    uint64_t seed = 13;
};

struct CheckerCalibration {
    double fp_rate = 0.0;
    double tp_rate = 0.0;
};

// Trains phi as a small texture classifier (features = penultimate layer),
// derives M=3 concept anchors (all positives plus the two texture variants)
// and calibrates per-anchor thresholds against the fp/tp gates.
inline SafetyChecker train_safety_checker(const world::Dataset& ds, const std::string& concept_name,
                                          const CheckerTrainConfig& cfg, CheckerCalibration* calib_out = nullptr) {
    if (ds.images.empty()) throw ConfigError("checker: empty dataset");
    const world::TextureKind tex = world::texture_from_name(concept_name);
    if (tex != world::TextureKind::hatch && tex != world::TextureKind::crack)
        throw ConfigError("checker: concept must be one of the concept textures");

    SafetyChecker sc;
    Rng init_rng(derive_seed(cfg.seed, "checker.init", hash_str64(concept_name)));
    sc.net = CheckerNet(init_rng, cfg.feature_dim);
    sc.concept_name = concept_name;
    sc.seed = cfg.seed;

    // classifier training (no corruption augmentation: the checker's feature
    // space is deliberately less hardened than the detector's)
    {
        Adam opt(sc.net.parameters(), cfg.lr);
        world::DetectorTrainConfig sample_cfg;  // reuse the example sampler
        sample_cfg.synthesize_positives = true;
        Rng rng(derive_seed(cfg.seed, "checker.train", hash_str64(concept_name)));
        for (int step = 0; step < cfg.steps; ++step) {
            opt.zero_grad();
            Var total;
            for (int b = 0; b < cfg.batch; ++b) {
                auto ex = world::detectordetail::sample_example(ds, sample_cfg, rng, /*augment=*/false);
                Var f = sc.net.features(constant(ex.image));
                Var loss = bce_with_logits_mean(
                    reshape(sc.net.logits_from_features(f), {static_cast<int>(world::detector_labels().size())}),
                    ex.labels);
                total = total ? add(total, loss) : loss;
            }
            total = scale(total, 1.0 / cfg.batch);
            if (!std::isfinite(total->val[0])) throw DivergenceError("checker training loss non-finite", step);
            backward(total);
            opt.step();
        }
    }

    // anchors: normalized mean features over concept positives
    auto mean_feature = [&](const std::vector<Tensor>& imgs) {
        std::vector<double> acc(static_cast<size_t>(cfg.feature_dim), 0.0);
        for (const auto& im : imgs) {
            Tensor f = checker_embed(sc, im);
            for (int64_t i = 0; i < f.numel(); ++i) acc[static_cast<size_t>(i)] += f[i];
        }
        Tensor m({cfg.feature_dim});
        double norm = 0.0;
        for (int i = 0; i < cfg.feature_dim; ++i) {
            m[i] = static_cast<float>(acc[static_cast<size_t>(i)] / static_cast<double>(imgs.size()));
            norm += static_cast<double>(m[i]) * m[i];
        }
        norm = std::sqrt(norm);
        if (norm == 0.0) throw Error("checker: zero-norm concept anchor");
        for (int i = 0; i < cfg.feature_dim; ++i) m[i] = static_cast<float>(m[i] / norm);
        return m;
    };

    const uint64_t cseed = derive_seed(cfg.seed, "checker.calib", hash_str64(concept_name));
    std::vector<Tensor> pos_all, pos_v0, pos_v1;
    {
        Rng rng(cseed);
        for (int i = 0; i < cfg.calib_n; ++i) {
            const auto& entry =
                ds.images[static_cast<size_t>(rng.uniform_int(static_cast<int>(ds.images.size())))];
            world::SceneParams s = entry.scene;
            s.texture = tex;
            s.texture_variant = i % 2;
            Tensor im = world::render_scene(s);
            (i % 2 == 0 ? pos_v0 : pos_v1).push_back(im);
            pos_all.push_back(std::move(im));
        }
    }
    sc.concepts = {mean_feature(pos_all), mean_feature(pos_v0), mean_feature(pos_v1)};

    // negatives: clean pool images (benign textures included)
    std::vector<Tensor> negs;
    {
        Rng rng(derive_seed(cseed, "neg"));
        for (int i = 0; i < cfg.calib_n; ++i) {
            const auto& entry =
                ds.images[static_cast<size_t>(rng.uniform_int(static_cast<int>(ds.images.size())))];
            if (entry.scene.texture == tex) {
                world::SceneParams s = entry.scene;
                s.texture = world::TextureKind::none;
                negs.push_back(world::render_scene(s));
            } else {
                negs.push_back(entry.image);
            }
        }
    }

    auto scores_of = [&](const std::vector<Tensor>& imgs) {
        std::vector<std::vector<float>> per_anchor(sc.concepts.size());
        for (const auto& im : imgs) {
            auto r = safety_check(SafetyChecker{sc.net, sc.concept_name, sc.concepts,
                                                std::vector<float>(sc.concepts.size(), 2.0f), sc.seed},
                                  im);
            for (size_t i = 0; i < r.scores.size(); ++i) per_anchor[i].push_back(r.scores[i]);
        }
        return per_anchor;
    };
    auto neg_scores = scores_of(negs);
    auto pos_scores = scores_of(pos_all);

    auto rate_with = [&](const std::vector<std::vector<float>>& scores, const std::vector<float>& th) {
        int flagged = 0;
        const size_t n = scores[0].size();
        for (size_t k = 0; k < n; ++k) {
            bool f = false;
            for (size_t i = 0; i < th.size(); ++i)
                if (scores[i][k] >= th[i]) f = true;
            if (f) ++flagged;
        }
        return static_cast<double>(flagged) / static_cast<double>(n);
    };

    // sweep a shared negative-quantile; take the first setting meeting both gates
    bool ok = false;
    for (double q = 0.999; q >= 0.80; q -= 0.005) {
        std::vector<float> th;
        for (auto& col : neg_scores) {
            std::vector<float> sorted = col;
            std::sort(sorted.begin(), sorted.end());
            const size_t idx = std::min(sorted.size() - 1, static_cast<size_t>(q * sorted.size()));
            float t = sorted[idx] + 1e-4f;
            t = std::min(std::max(t, 0.01f), 0.99f);  // thresholds live in (0,1)
            th.push_back(t);
        }
        const double fp = rate_with(neg_scores, th);
        const double tp = rate_with(pos_scores, th);
        if (fp <= cfg.fp_target && tp >= cfg.tp_target) {
            sc.thresholds = th;
            if (calib_out) *calib_out = {fp, tp};
            ok = true;
            break;
        }
    }
    if (!ok) throw Error("checker calibration failed: no threshold meets fp<=" + std::to_string(cfg.fp_target) +
                         " and tp>=" + std::to_string(cfg.tp_target));
    return sc;
}

}  // namespace defenses
}  // namespace advlab
