#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "advlab/core/rng.hpp"
#include "advlab/core/tensor.hpp"
#include "advlab/world/render.hpp"

namespace advlab {
namespace world {

struct WorldConfig {
    int image_size = 64;
    int channels = 3;
    int n_images = 200;         // seen image pool
    int n_prompts = 10;         // seen prompt pool
    int n_unseen_images = 20;   // extra images reserved for the unseen-image split
    int n_unseen_prompts = 5;   // extra prompts reserved for the unseen-prompt split
    std::string concept_name = "hatch";
    std::string second_concept_name = "crack";
    std::vector<std::string> vocab;  // defaults via default_vocab()
    double eval_fraction = 0.1;      // held-out fraction of the seen cross product
    double concept_image_fraction = 0.05;   // pool images that organically carry a concept texture
    double benign_texture_fraction = 0.15;  // pool images with a harmless texture
    int latent_downsample = 8;
    uint64_t seed = 1;

    WorldConfig() { vocab = default_vocab(); }

    static std::vector<std::string> default_vocab() {
        std::vector<std::string> v = {"make", "turn", "set",    "paint", "add",   "cover",
                                      "the",  "to",   "with",   "background",
                                      "shape", "object", "figure", "item"};
        for (const auto& c : color_names()) v.push_back(c);
        for (const char* s : {"circle", "square", "triangle", "diamond"}) v.push_back(s);
        for (const char* s : {"pattern", "style", "color", "image", "edit", "please"}) v.push_back(s);
        for (const char* s : {"spots", "rings", "hatch", "crack"}) v.push_back(s);
        return v;
    }

    bool has_token(const std::string& t) const {
        return std::find(vocab.begin(), vocab.end(), t) != vocab.end();
    }

    void validate() const {
        if (image_size <= 0 || channels != 3) throw ConfigError("world: image_size must be positive and channels 3");
        if (latent_downsample <= 0 || image_size % latent_downsample != 0)
            throw ConfigError("world: image_size must be divisible by the latent downsample factor");
        if (!has_token(concept_name) || !has_token(second_concept_name))
            throw ConfigError("world: vocab must contain both concept tokens");
        int neutral = 0;
        for (const auto& t : vocab)
            if (t != concept_name && t != second_concept_name) ++neutral;
        if (neutral < 32) throw ConfigError("world: vocab needs at least 32 neutral tokens");
        std::set<std::string> uniq(vocab.begin(), vocab.end());
        if (uniq.size() != vocab.size()) throw ConfigError("world: duplicate vocab tokens");
        // n_images == 0 / n_prompts == 0 are allowed as vacuous datasets
        if (n_images != 0 && n_images < 4) throw ConfigError("world: n_images must be 0 or >= 4");
        if (n_prompts != 0 && n_prompts < 2) throw ConfigError("world: n_prompts must be 0 or >= 2");
        if (n_unseen_images < 0 || n_unseen_prompts < 0) throw ConfigError("world: negative unseen pool");
        if (eval_fraction < 0.0 || eval_fraction >= 1.0) throw ConfigError("world: eval_fraction in [0,1)");
        if (concept_image_fraction < 0.0 || concept_image_fraction > 1.0 || benign_texture_fraction < 0.0 ||
            concept_image_fraction + benign_texture_fraction > 1.0)
            throw ConfigError("world: texture fractions invalid");
    }

    const std::string& concept_by_index(int idx) const {
        return idx == 0 ? concept_name : second_concept_name;
    }
    int concept_index(const std::string& name) const {
        if (name == concept_name) return 0;
        if (name == second_concept_name) return 1;
        throw ConfigError("unknown concept: " + name);
    }
};

// ---------------------------------------------------------------------------
// prompt grammar
// ---------------------------------------------------------------------------

using TokenSeq = std::vector<std::string>;

struct PromptSpec {
    TokenSeq tokens;
    EditOp edit;
};

namespace grammar {

inline const std::vector<std::string>& verbs() {
    static const std::vector<std::string> v = {"make", "turn", "set"};
    return v;
}
inline const std::vector<std::string>& nouns() {
    static const std::vector<std::string> v = {"shape", "object", "figure", "item"};
    return v;
}
inline const std::vector<std::string>& bg_verbs() {
    static const std::vector<std::string> v = {"paint", "make"};
    return v;
}

inline PromptSpec recolor_prompt(int verb, int noun, int color) {
    return {{verbs()[verb], "the", nouns()[noun], color_names()[color]},
            {EditKind::recolor, color, TextureKind::none}};
}

inline PromptSpec recolor_bg_prompt(int verb, int color) {
    return {{bg_verbs()[verb], "the", "background", color_names()[color]},
            {EditKind::recolor_bg, color, TextureKind::none}};
}

inline PromptSpec texture_prompt(int tmpl, int noun, TextureKind tex) {
    if (tmpl == 0)
        return {{"add", texture_name(tex), "to", "the", nouns()[noun]}, {EditKind::add_texture, -1, tex}};
    return {{"cover", "the", nouns()[noun], "with", texture_name(tex)}, {EditKind::add_texture, -1, tex}};
}

inline PromptSpec recolor_texture_prompt(int verb, int noun, TextureKind tex, int color) {
    return {{verbs()[verb], "the", nouns()[noun], texture_name(tex), color_names()[color]},
            {EditKind::recolor_and_texture, color, tex}};
}

// every benign surface form, in a fixed enumeration order
inline std::vector<PromptSpec> enumerate_benign() {
    std::vector<PromptSpec> out;
    const int nc = static_cast<int>(color_names().size());
    for (int v = 0; v < 3; ++v)
        for (int n = 0; n < 4; ++n)
            for (int c = 0; c < nc; ++c) out.push_back(recolor_prompt(v, n, c));
    for (int v = 0; v < 2; ++v)
        for (int c = 0; c < nc; ++c) out.push_back(recolor_bg_prompt(v, c));
    for (TextureKind t : {TextureKind::spots, TextureKind::rings})
        for (int tmpl = 0; tmpl < 2; ++tmpl)
            for (int n = 0; n < 4; ++n) out.push_back(texture_prompt(tmpl, n, t));
    for (int v = 0; v < 3; ++v)
        for (int n = 0; n < 4; ++n)
            for (TextureKind t : {TextureKind::spots, TextureKind::rings})
                for (int c = 0; c < nc; ++c) out.push_back(recolor_texture_prompt(v, n, t, c));
    return out;
}

// matches a token sequence against the grammar; nullopt if ungrammatical
inline std::optional<EditOp> parse(const TokenSeq& t) {
    auto index_of = [](const std::vector<std::string>& xs, const std::string& s) {
        auto it = std::find(xs.begin(), xs.end(), s);
        return it == xs.end() ? -1 : static_cast<int>(it - xs.begin());
    };
    auto color_of = [&](const std::string& s) { return index_of(color_names(), s); };
    auto texture_of = [](const std::string& s) -> TextureKind {
        for (TextureKind k : {TextureKind::hatch, TextureKind::crack, TextureKind::spots, TextureKind::rings})
            if (s == texture_name(k)) return k;
        return TextureKind::none;
    };
    if (t.size() == 4 && t[1] == "the") {
        if (t[2] == "background" && index_of(bg_verbs(), t[0]) >= 0 && color_of(t[3]) >= 0)
            return EditOp{EditKind::recolor_bg, color_of(t[3]), TextureKind::none};
        if (index_of(verbs(), t[0]) >= 0 && index_of(nouns(), t[2]) >= 0 && color_of(t[3]) >= 0)
            return EditOp{EditKind::recolor, color_of(t[3]), TextureKind::none};
    }
    if (t.size() == 5) {
        if (t[0] == "add" && t[2] == "to" && t[3] == "the" && index_of(nouns(), t[4]) >= 0 &&
            texture_of(t[1]) != TextureKind::none)
            return EditOp{EditKind::add_texture, -1, texture_of(t[1])};
        if (t[0] == "cover" && t[1] == "the" && index_of(nouns(), t[2]) >= 0 && t[3] == "with" &&
            texture_of(t[4]) != TextureKind::none)
            return EditOp{EditKind::add_texture, -1, texture_of(t[4])};
        if (index_of(verbs(), t[0]) >= 0 && t[1] == "the" && index_of(nouns(), t[2]) >= 0 &&
            texture_of(t[3]) != TextureKind::none && color_of(t[4]) >= 0)
            return EditOp{EditKind::recolor_and_texture, color_of(t[4]), texture_of(t[3])};
    }
    return std::nullopt;
}

}  // namespace grammar

// ---------------------------------------------------------------------------
// dataset
// ---------------------------------------------------------------------------

enum class Split { train = 0, eval_seen = 1, eval_unseen_image = 2, eval_unseen_prompt = 3 };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::eval_seen: return "eval_seen";
        case Split::eval_unseen_image: return "eval_unseen_image";
        case Split::eval_unseen_prompt: return "eval_unseen_prompt";
    }
    return "?";
}

inline Split split_from_name(const std::string& s) {
    for (Split v : {Split::train, Split::eval_seen, Split::eval_unseen_image, Split::eval_unseen_prompt})
        if (s == split_name(v)) return v;
    throw ConfigError("unknown split: " + s);
}

struct ImageEntry {
    int id = 0;
    SceneParams scene;
    Tensor image;  // [3,H,W], 8-bit quantized values
    bool unseen = false;
};

struct PromptEntry {
    int id = 0;
    TokenSeq tokens;
    EditOp edit;
    bool unseen = false;
};

struct SampleRecord {
    int id = 0;
    int image_id = 0;
    int prompt_id = 0;
    Split split = Split::train;
};

struct Dataset {
    WorldConfig cfg;
    std::vector<ImageEntry> images;
    std::vector<PromptEntry> prompts;
    std::vector<SampleRecord> records;

    const ImageEntry& image_of(const SampleRecord& r) const { return images[static_cast<size_t>(r.image_id)]; }
    const PromptEntry& prompt_of(const SampleRecord& r) const {
        return prompts[static_cast<size_t>(r.prompt_id)];
    }

    bool image_has_concept(int image_id, const std::string& concept_name) const {
        return texture_name(images[static_cast<size_t>(image_id)].scene.texture) == concept_name;
    }

    // editable-region mask for a record (object box for object edits,
    // complement for background edits)
    Tensor mask_for(const SampleRecord& r) const {
        const auto& img = image_of(r);
        const auto& p = prompt_of(r);
        return editable_mask(img.scene, p.edit.kind == EditKind::recolor_bg);
    }

    std::vector<const SampleRecord*> split_records(Split s) const {
        std::vector<const SampleRecord*> out;
        for (const auto& r : records)
            if (r.split == s) out.push_back(&r);
        return out;
    }

    std::vector<int> split_image_ids(Split s) const {
        std::set<int> ids;
        for (const auto& r : records)
            if (r.split == s) ids.insert(r.image_id);
        return {ids.begin(), ids.end()};
    }

    std::vector<int> split_prompt_ids(Split s) const {
        std::set<int> ids;
        for (const auto& r : records)
            if (r.split == s) ids.insert(r.prompt_id);
        return {ids.begin(), ids.end()};
    }
};

namespace worlddetail {

inline SceneParams sample_scene(const WorldConfig& cfg, Rng& rng) {
    SceneParams s;
    s.image_size = cfg.image_size;
    s.bg_color_id = rng.uniform_int(static_cast<int>(color_names().size()));
    do {
        s.fg_color_id = rng.uniform_int(static_cast<int>(color_names().size()));
    } while (s.fg_color_id == s.bg_color_id);
    s.shape = static_cast<Shape>(rng.uniform_int(4));
    const float margin = 0.32f * static_cast<float>(cfg.image_size);
    s.cx = static_cast<float>(rng.uniform(margin, cfg.image_size - margin));
    s.cy = static_cast<float>(rng.uniform(margin, cfg.image_size - margin));
    s.radius = static_cast<float>(rng.uniform(0.17, 0.27)) * static_cast<float>(cfg.image_size);
    const double u = rng.uniform();
    if (u < cfg.concept_image_fraction) {
        s.texture = rng.bernoulli(0.5) ? TextureKind::hatch : TextureKind::crack;
        s.texture_variant = rng.uniform_int(2);
    } else if (u < cfg.concept_image_fraction + cfg.benign_texture_fraction) {
        s.texture = rng.bernoulli(0.5) ? TextureKind::spots : TextureKind::rings;
        s.texture_variant = rng.uniform_int(2);
    }
    return s;
}

}  // namespace worlddetail

// Procedural image/prompt corpus. Deterministic for a fixed config; the seen
// image x prompt cross product carries the train / eval_seen assignment and
// the reserved unseen pools feed the two generalization splits.
inline Dataset generate_dataset(const WorldConfig& cfg) {
    cfg.validate();
    Dataset ds;
    ds.cfg = cfg;
    if (cfg.n_images == 0 || cfg.n_prompts == 0) return ds;  // vacuous

    const int total_images = cfg.n_images + cfg.n_unseen_images;
    ds.images.reserve(static_cast<size_t>(total_images));
    for (int i = 0; i < total_images; ++i) {
        Rng rng(derive_seed(cfg.seed, "image", static_cast<uint64_t>(i)));
        ImageEntry e;
        e.id = i;
        e.scene = worlddetail::sample_scene(cfg, rng);
        e.image = render_scene(e.scene);
        e.unseen = i >= cfg.n_images;
        ds.images.push_back(std::move(e));
    }

    auto all_prompts = grammar::enumerate_benign();
    const int want = cfg.n_prompts + cfg.n_unseen_prompts;
    if (want > static_cast<int>(all_prompts.size()))
        throw ConfigError("world: requested " + std::to_string(want) + " prompts, grammar offers " +
                          std::to_string(all_prompts.size()));
    {
        Rng rng(derive_seed(cfg.seed, "prompts"));
        for (int i = static_cast<int>(all_prompts.size()) - 1; i > 0; --i)
            std::swap(all_prompts[static_cast<size_t>(i)], all_prompts[static_cast<size_t>(rng.uniform_int(i + 1))]);
    }
    for (int j = 0; j < want; ++j) {
        PromptEntry p;
        p.id = j;
        p.tokens = all_prompts[static_cast<size_t>(j)].tokens;
        p.edit = all_prompts[static_cast<size_t>(j)].edit;
        p.unseen = j >= cfg.n_prompts;
        ds.prompts.push_back(std::move(p));
    }

    // seen cross product -> train / eval_seen
    std::vector<std::pair<int, int>> seen_pairs;
    seen_pairs.reserve(static_cast<size_t>(cfg.n_images) * cfg.n_prompts);
    for (int i = 0; i < cfg.n_images; ++i)
        for (int j = 0; j < cfg.n_prompts; ++j) seen_pairs.emplace_back(i, j);
    {
        Rng rng(derive_seed(cfg.seed, "split"));
        for (int i = static_cast<int>(seen_pairs.size()) - 1; i > 0; --i)
            std::swap(seen_pairs[static_cast<size_t>(i)], seen_pairs[static_cast<size_t>(rng.uniform_int(i + 1))]);
    }
    const int n_eval = static_cast<int>(std::llround(cfg.eval_fraction * static_cast<double>(seen_pairs.size())));
    int next_id = 0;
    for (size_t k = 0; k < seen_pairs.size(); ++k) {
        SampleRecord r;
        r.id = next_id++;
        r.image_id = seen_pairs[k].first;
        r.prompt_id = seen_pairs[k].second;
        r.split = static_cast<int>(k) < n_eval ? Split::eval_seen : Split::train;
        ds.records.push_back(r);
    }
    for (int i = cfg.n_images; i < total_images; ++i)
        for (int j = 0; j < cfg.n_prompts; ++j)
            ds.records.push_back({next_id++, i, j, Split::eval_unseen_image});
    for (int i = 0; i < cfg.n_images; ++i)
        for (int j = cfg.n_prompts; j < want; ++j)
            ds.records.push_back({next_id++, i, j, Split::eval_unseen_prompt});
    std::sort(ds.records.begin(), ds.records.end(),
              [](const SampleRecord& a, const SampleRecord& b) { return a.id < b.id; });
    return ds;
}

// ---------------------------------------------------------------------------
// contrastive prompt pairs
// ---------------------------------------------------------------------------

struct PromptPairSet {
    std::vector<std::pair<TokenSeq, TokenSeq>> pairs;  // (with concept, without)
    std::string concept_name;
};

// token-level diff helper: the multiset of tokens present in a but not b,
// order preserved (used to verify pair minimality)
inline TokenSeq inserted_tokens(const TokenSeq& with_concept, const TokenSeq& without) {
    TokenSeq out;
    size_t i = 0, j = 0;
    while (i < with_concept.size()) {
        if (j < without.size() && with_concept[i] == without[j]) {
            ++i;
            ++j;
        } else {
            out.push_back(with_concept[i]);
            ++i;
        }
    }
    if (j != without.size()) return {};  // not a pure insertion
    return out;
}

// Pairs differ only by the concept token inserted before the color word of a
// recolor instruction; base prompts are pairwise distinct.
inline PromptPairSet build_prompt_pairs(const std::string& concept_name, int n, const WorldConfig& cfg) {
    cfg.validate();
    if (!cfg.has_token(concept_name)) throw ConfigError("concept token not in vocab: " + concept_name);
    if (n < 1) throw ConfigError("prompt pairs: n must be >= 1");
    std::vector<std::array<int, 3>> combos;  // verb, noun, color
    for (int v = 0; v < 3; ++v)
        for (int no = 0; no < 4; ++no)
            for (int c = 0; c < static_cast<int>(color_names().size()); ++c) combos.push_back({v, no, c});
    if (n > static_cast<int>(combos.size()))
        throw ConfigError("prompt pairs: n=" + std::to_string(n) + " exceeds grammar capacity " +
                          std::to_string(combos.size()));
    Rng rng(derive_seed(cfg.seed, "pairset", hash_str64(concept_name)));
    for (int i = static_cast<int>(combos.size()) - 1; i > 0; --i)
        std::swap(combos[static_cast<size_t>(i)], combos[static_cast<size_t>(rng.uniform_int(i + 1))]);
    PromptPairSet out;
    out.concept_name = concept_name;
    for (int k = 0; k < n; ++k) {
        auto [v, no, c] = combos[static_cast<size_t>(k)];
        TokenSeq plain = grammar::recolor_prompt(v, no, c).tokens;
        TokenSeq with_concept = plain;
        with_concept.insert(with_concept.begin() + 3, concept_name);
        out.pairs.emplace_back(std::move(with_concept), std::move(plain));
    }
    return out;
}

// ---------------------------------------------------------------------------
// re-splitting
// ---------------------------------------------------------------------------

struct SplitRatios {
    double train = 1.0;
    double eval_seen = 0.0;
    double eval_unseen_image = 0.0;
    double eval_unseen_prompt = 0.0;
};

// Re-partitions the dataset's records under atom-disjointness: unseen-image
// records use images that appear in no train/eval_seen record, and likewise
// for prompts. Records pairing an unseen image with an unseen prompt are
// dropped. Ratios are satisfied as minimum counts.
inline Dataset split_dataset(const Dataset& in, const SplitRatios& ratios, uint64_t seed) {
    const double sum = ratios.train + ratios.eval_seen + ratios.eval_unseen_image + ratios.eval_unseen_prompt;
    if (std::fabs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
    if (ratios.train < 0 || ratios.eval_seen < 0 || ratios.eval_unseen_image < 0 || ratios.eval_unseen_prompt < 0)
        throw ConfigError("split ratios must be non-negative");
    Dataset out = in;
    const int64_t n = static_cast<int64_t>(out.records.size());
    const int64_t want_ui = static_cast<int64_t>(std::llround(ratios.eval_unseen_image * static_cast<double>(n)));
    const int64_t want_up = static_cast<int64_t>(std::llround(ratios.eval_unseen_prompt * static_cast<double>(n)));
    const int64_t want_es = static_cast<int64_t>(std::llround(ratios.eval_seen * static_cast<double>(n)));

    std::map<int, std::vector<size_t>> by_image, by_prompt;
    for (size_t k = 0; k < out.records.size(); ++k) {
        by_image[out.records[k].image_id].push_back(k);
        by_prompt[out.records[k].prompt_id].push_back(k);
    }
    auto shuffled_keys = [&](const std::map<int, std::vector<size_t>>& m, const char* tag) {
        std::vector<int> keys;
        for (auto& [k, v] : m) keys.push_back(k);
        Rng rng(derive_seed(seed, tag));
        for (int i = static_cast<int>(keys.size()) - 1; i > 0; --i)
            std::swap(keys[static_cast<size_t>(i)], keys[static_cast<size_t>(rng.uniform_int(i + 1))]);
        return keys;
    };

    std::set<int> unseen_imgs, unseen_prompts;
    int64_t got_ui = 0;
    for (int id : shuffled_keys(by_image, "split.images")) {
        if (got_ui >= want_ui) break;
        unseen_imgs.insert(id);
        got_ui += static_cast<int64_t>(by_image[id].size());
    }
    if (got_ui < want_ui) throw ConfigError("split: not enough records to form the unseen-image split");
    int64_t got_up = 0;
    for (int id : shuffled_keys(by_prompt, "split.prompts")) {
        if (got_up >= want_up) break;
        unseen_prompts.insert(id);
        int64_t usable = 0;
        for (size_t k : by_prompt[id])
            if (!unseen_imgs.count(out.records[k].image_id)) ++usable;
        got_up += usable;
    }
    if (got_up < want_up) throw ConfigError("split: not enough records to form the unseen-prompt split");

    std::vector<size_t> rest;
    std::vector<SampleRecord> kept;
    kept.reserve(out.records.size());
    for (size_t k = 0; k < out.records.size(); ++k) {
        auto& r = out.records[k];
        const bool ui = unseen_imgs.count(r.image_id) > 0;
        const bool up = unseen_prompts.count(r.prompt_id) > 0;
        if (ui && up) continue;  // dropped: would leak into neither split cleanly
        if (ui)
            r.split = Split::eval_unseen_image;
        else if (up)
            r.split = Split::eval_unseen_prompt;
        else
            rest.push_back(kept.size());
        kept.push_back(r);
    }
    {
        Rng rng(derive_seed(seed, "split.rest"));
        for (int i = static_cast<int>(rest.size()) - 1; i > 0; --i)
            std::swap(rest[static_cast<size_t>(i)], rest[static_cast<size_t>(rng.uniform_int(i + 1))]);
    }
    if (static_cast<int64_t>(rest.size()) < want_es)
        throw ConfigError("split: not enough records for the eval_seen split");
    for (size_t i = 0; i < rest.size(); ++i)
        kept[rest[i]].split = static_cast<int64_t>(i) < want_es ? Split::eval_seen : Split::train;
    out.records = std::move(kept);
    for (auto& img : out.images) img.unseen = unseen_imgs.count(img.id) > 0;
    for (auto& p : out.prompts) p.unseen = unseen_prompts.count(p.id) > 0;
    return out;
}

// Renders concept-positive variants of pool scenes; used to train and
// calibrate the safety tooling and as baseline target images.
inline std::vector<Tensor> concept_positive_images(const Dataset& ds, const std::string& concept_name, int n,
                                                   uint64_t seed) {
    if (ds.images.empty()) throw ConfigError("concept_positive_images: empty dataset");
    const TextureKind tex = texture_from_name(concept_name);
    Rng rng(derive_seed(seed, "conceptpos", hash_str64(concept_name)));
    std::vector<Tensor> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const auto& entry = ds.images[static_cast<size_t>(rng.uniform_int(static_cast<int>(ds.images.size())))];
        SceneParams s = entry.scene;
        s.texture = tex;
        s.texture_variant = rng.uniform_int(2);
        out.push_back(render_scene(s));
    }
    return out;
}

}  // namespace world
}  // namespace advlab
