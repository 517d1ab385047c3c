#pragma once

#include <string>
#include <vector>

#include "advlab/core/nn.hpp"
#include "advlab/core/optim.hpp"
#include "advlab/world/world.hpp"

namespace advlab {
namespace world {

inline const std::vector<std::string>& detector_labels() {
    static const std::vector<std::string> labels = {"hatch", "crack", "spots", "rings"};
    return labels;
}

// 3-layer convolutional multi-label texture classifier.
class DetectorNet : public nn::Module {
public:
    DetectorNet() = default;
    explicit DetectorNet(Rng& rng, int width = 12)
        : c1(3, width, 3, 2, 1, rng),
          c2(width, 2 * width, 3, 2, 1, rng),
          c3(2 * width, 32, 3, 2, 1, rng),
          head(32, static_cast<int>(detector_labels().size()), rng) {}

    void visit(nn::ParamVisitor& v) const override {
        v.child("c1", c1);
        v.child("c2", c2);
        v.child("c3", c3);
        v.child("head", head);
    }

    Var logits(const Var& img) const {
        Var h = silu(c1.forward(img));
        h = silu(c2.forward(h));
        h = silu(c3.forward(h));
        Var f = global_avg_pool(h);
        return head.forward(reshape(f, {1, f->val.dim(0)}));
    }

    nn::Conv2dLayer c1, c2, c3;
    nn::Linear head;
};

struct Detector {
    DetectorNet net;
    std::vector<std::string> labels = detector_labels();
    std::vector<std::string> label_list;  // labels whose presence marks a positive
    float threshold = 0.5f;
    uint64_t seed = 0;
};

struct DetectResult {
    bool flag = false;
    std::vector<std::pair<std::string, float>> scores;
};

// flag = OR over label_list of (score >= threshold); boundary counts positive
inline DetectResult detect(const Detector& det, const Tensor& image) {
    if (image.ndim() != 3 || image.dim(0) != 3) throw ShapeError("detect: image must be [3,H,W]");
    NoGradGuard ng;
    Var logit = det.net.logits(constant(image));
    DetectResult res;
    for (size_t i = 0; i < det.labels.size(); ++i) {
        const float p = 1.0f / (1.0f + std::exp(-logit->val[static_cast<int64_t>(i)]));
        res.scores.emplace_back(det.labels[i], p);
        const bool listed =
            std::find(det.label_list.begin(), det.label_list.end(), det.labels[i]) != det.label_list.end();
        if (listed && p >= det.threshold) res.flag = true;
    }
    return res;
}

inline Tensor box_blur3(const Tensor& img) {
    const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    Tensor out({c, h, w});
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                float acc = 0.0f;
                int cnt = 0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int yy = y + dy, xx = x + dx;
                        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                        acc += img.at3(ci, yy, xx);
                        ++cnt;
                    }
                out.at3(ci, y, x) = acc / static_cast<float>(cnt);
            }
    return out;
}

struct DetectorTrainConfig {
    int steps = 1600;
    int batch = 6;
    double lr = 1e-3;
    float threshold = 0.5f;
    int width = 12;
    int held_out = 200;
    bool synthesize_positives = true;  // render textured edits as extra positives
    uint64_t seed = 11;
};

namespace detectordetail {

struct LabeledImage {
    Tensor image;
    Tensor labels;  // [n_labels] in {0,1}
};

inline Tensor labels_of(TextureKind t) {
    Tensor l({static_cast<int>(detector_labels().size())});
    if (t != TextureKind::none) {
        for (size_t i = 0; i < detector_labels().size(); ++i)
            if (detector_labels()[i] == texture_name(t)) l[static_cast<int64_t>(i)] = 1.0f;
    }
    return l;
}

// Training/eval sampler. Mixes raw pool images with rendered edits so the
// classifier sees textures over every shape, color and edit combination,
// plus noise/blur corruption roughly matching decoder output quality.
inline LabeledImage sample_example(const Dataset& ds, const DetectorTrainConfig& cfg, Rng& rng, bool augment) {
    std::vector<const ImageEntry*> pool;
    for (const auto& e : ds.images)
        if (!e.unseen) pool.push_back(&e);
    const ImageEntry& base = *pool[static_cast<size_t>(rng.uniform_int(static_cast<int>(pool.size())))];
    SceneParams s = base.scene;
    const double u = rng.uniform();
    if (cfg.synthesize_positives && u < 0.30) {
        s.texture = rng.bernoulli(0.5) ? TextureKind::hatch : TextureKind::crack;
        s.texture_variant = rng.uniform_int(2);
        if (rng.bernoulli(0.5)) s.fg_color_id = rng.uniform_int(static_cast<int>(color_names().size()));
    } else if (cfg.synthesize_positives && u < 0.50) {
        s.texture = rng.bernoulli(0.5) ? TextureKind::spots : TextureKind::rings;
        s.texture_variant = rng.uniform_int(2);
    } else if (u < 0.65) {
        s.fg_color_id = rng.uniform_int(static_cast<int>(color_names().size()));
    }
    LabeledImage ex;
    ex.image = render_scene(s);
    ex.labels = labels_of(s.texture);
    if (augment) {
        if (rng.bernoulli(0.4)) ex.image = box_blur3(ex.image);
        const float sigma = static_cast<float>(rng.uniform(0.0, 0.05));
        if (sigma > 0.0f)
            for (auto& v : ex.image.data)
                v = std::min(std::max(v + static_cast<float>(rng.normal()) * sigma, 0.0f), 1.0f);
    }
    return ex;
}

}  // namespace detectordetail

inline double evaluate_detector(const Detector& det, const std::vector<detectordetail::LabeledImage>& examples) {
    int correct = 0;
    for (const auto& ex : examples) {
        NoGradGuard ng;
        Var logit = det.net.logits(constant(ex.image));
        bool ok = true;
        for (int64_t i = 0; i < ex.labels.numel(); ++i) {
            const float p = 1.0f / (1.0f + std::exp(-logit->val[i]));
            if ((p >= det.threshold) != (ex.labels[i] > 0.5f)) ok = false;
        }
        if (ok) ++correct;
    }
    return examples.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(examples.size());
}

struct DetectorTrainResult {
    Detector detector;
    double held_out_accuracy = 0.0;
};

inline DetectorTrainResult train_concept_detector(const Dataset& ds, const DetectorTrainConfig& cfg) {
    if (ds.images.empty()) throw ConfigError("detector: dataset has no images");
    if (!cfg.synthesize_positives) {
        bool any_pos = false, any_neg = false;
        for (const auto& e : ds.images) {
            const bool pos = e.scene.texture == TextureKind::hatch || e.scene.texture == TextureKind::crack;
            any_pos = any_pos || pos;
            any_neg = any_neg || !pos;
        }
        if (!any_pos || !any_neg)
            throw ConfigError("detector: single-class data (need both positive and negative concept labels)");
    }

    DetectorTrainResult out;
    Rng init_rng(derive_seed(cfg.seed, "detector.init"));
    out.detector.net = DetectorNet(init_rng, cfg.width);
    out.detector.threshold = cfg.threshold;
    out.detector.label_list = {ds.cfg.concept_name};
    out.detector.seed = cfg.seed;

    Adam opt(out.detector.net.parameters(), cfg.lr);
    Rng rng(derive_seed(cfg.seed, "detector.train"));
    for (int step = 0; step < cfg.steps; ++step) {
        opt.zero_grad();
        Var total;
        for (int b = 0; b < cfg.batch; ++b) {
            auto ex = detectordetail::sample_example(ds, cfg, rng, true);
            Var loss = bce_with_logits_mean(reshape(out.detector.net.logits(constant(ex.image)),
                                                    {static_cast<int>(detector_labels().size())}),
                                            ex.labels);
            total = total ? add(total, loss) : loss;
        }
        total = scale(total, 1.0 / cfg.batch);
        if (!std::isfinite(total->val[0])) throw DivergenceError("detector training loss non-finite", step);
        backward(total);
        opt.step();
    }

    Rng eval_rng(derive_seed(cfg.seed, "detector.eval"));
    std::vector<detectordetail::LabeledImage> held;
    held.reserve(static_cast<size_t>(cfg.held_out));
    for (int i = 0; i < cfg.held_out; ++i)
        held.push_back(detectordetail::sample_example(ds, cfg, eval_rng, false));
    out.held_out_accuracy = evaluate_detector(out.detector, held);
    return out;
}

}  // namespace world
}  // namespace advlab
