#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <string>
#include <vector>

#include "advlab/diffusion/text_encoder.hpp"
#include "advlab/world/world.hpp"

namespace advlab {
namespace filters {

struct FilterVerdict {
    bool flagged = false;
    double score = 0.0;  // meaning depends on the filter: perplexity value,
                         // keyword hit count, embedding margin, client confidence
    std::string filter_name;
    std::string rationale;
    bool is_error = false;  // explicit error verdicts are treated as flagged
};

// ---------------------------------------------------------------------------
// perplexity filter
// ---------------------------------------------------------------------------

// Count-based bigram language model with add-k smoothing, fit on prompt
// corpora. Small, deterministic, and autoregressive: exactly what the
// perplexity test needs.
class BigramLm {
public:
    BigramLm() = default;

    static BigramLm fit(const std::vector<world::TokenSeq>& corpus, const std::vector<std::string>& vocab,
                        double smoothing_k = 0.1) {
        if (smoothing_k < 0.0) throw ConfigError("bigram lm: smoothing must be >= 0");
        BigramLm lm;
        lm.k_ = smoothing_k;
        lm.vocab_ = vocab;
        for (size_t i = 0; i < vocab.size(); ++i) lm.ids_[vocab[i]] = static_cast<int>(i) + 1;
        const int v = lm.n_states();
        lm.counts_.assign(static_cast<size_t>(v), std::vector<double>(static_cast<size_t>(v), 0.0));
        for (const auto& prompt : corpus) {
            int prev = kBos;
            for (const auto& tok : prompt) {
                const int id = lm.id_of(tok);
                lm.counts_[static_cast<size_t>(prev)][static_cast<size_t>(id)] += 1.0;
                prev = id;
            }
        }
        return lm;
    }

    // perplexity = exp(mean negative log-likelihood over the transitions
    // BOS -> t1, t1 -> t2, ... ; single token with probability 1 gives 1
    double perplexity(const world::TokenSeq& prompt) const {
        if (prompt.empty()) throw Error("perplexity: empty prompt");
        double nll = 0.0;
        int prev = kBos;
        for (const auto& tok : prompt) {
            const int id = id_of(tok);
            nll -= log_prob(prev, id);
            prev = id;
        }
        return std::exp(nll / static_cast<double>(prompt.size()));
    }

    double log_prob(int prev, int next) const {
        const auto& row = counts_[static_cast<size_t>(prev)];
        double total = 0.0;
        for (double c : row) total += c;
        const double p = (row[static_cast<size_t>(next)] + k_) / (total + k_ * n_states());
        if (p <= 0.0) return -1e30;  // k = 0 and unseen transition
        return std::log(p);
    }

    int id_of(const std::string& tok) const {
        auto it = ids_.find(tok);
        return it == ids_.end() ? unk_id() : it->second;
    }

    int n_states() const { return static_cast<int>(vocab_.size()) + 2; }  // BOS + vocab + UNK
    int unk_id() const { return static_cast<int>(vocab_.size()) + 1; }
    double smoothing() const { return k_; }
    const std::vector<std::string>& vocab() const { return vocab_; }

    static constexpr int kBos = 0;

private:
    std::vector<std::string> vocab_;
    std::map<std::string, int> ids_;
    std::vector<std::vector<double>> counts_;
    double k_ = 0.1;
};

inline FilterVerdict perplexity_filter(const world::TokenSeq& prompt, const BigramLm& lm, double threshold) {
    FilterVerdict v;
    v.filter_name = "perplexity";
    v.score = lm.perplexity(prompt);
    v.flagged = v.score > threshold;
    v.rationale = "perplexity " + std::to_string(v.score) + (v.flagged ? " > " : " <= ") +
                  std::to_string(threshold);
    return v;
}

// ---------------------------------------------------------------------------
// keyword filter
// ---------------------------------------------------------------------------

inline std::string fold_case(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

// flagged iff any listed token appears in the prompt token sequence
inline FilterVerdict keyword_filter(const world::TokenSeq& prompt, const std::vector<std::string>& keyword_list,
                                    bool fold = true) {
    if (keyword_list.empty()) throw ConfigError("keyword filter: empty keyword list");
    FilterVerdict v;
    v.filter_name = "keyword";
    int hits = 0;
    for (const auto& tok : prompt) {
        const std::string t = fold ? fold_case(tok) : tok;
        for (const auto& kw : keyword_list) {
            if (t == (fold ? fold_case(kw) : kw)) {
                ++hits;
                if (v.rationale.empty()) v.rationale = "matched keyword '" + kw + "'";
            }
        }
    }
    v.score = hits;
    v.flagged = hits > 0;
    if (!v.flagged) v.rationale = "no keyword match";
    return v;
}

// ---------------------------------------------------------------------------
// embedding filter
// ---------------------------------------------------------------------------

// mean text feature over non-padding positions
inline Tensor pooled_embedding(const diffusion::TextEncoder& enc, const world::TokenSeq& prompt) {
    Tensor e = enc.encode(prompt);
    const int l = e.dim(0), d = e.dim(1);
    const int n = std::min<int>(static_cast<int>(prompt.size()), l);
    if (n == 0) throw Error("embedding filter: empty prompt has zero-norm pooled embedding");
    Tensor out({d});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out[j] += e.at2(i, j) / static_cast<float>(n);
    return out;
}

inline double cosine_value(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "cosine_value");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw Error("cosine undefined for zero-norm operand");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

// score = cos(e, unsafe centroid) - cos(e, safe centroid); flag on score > margin
inline FilterVerdict embedding_filter(const world::TokenSeq& prompt, const diffusion::TextEncoder& enc,
                                      const Tensor& unsafe_centroid, const Tensor& safe_centroid, double margin) {
    Tensor e = pooled_embedding(enc, prompt);
    FilterVerdict v;
    v.filter_name = "embedding";
    v.score = cosine_value(e, unsafe_centroid) - cosine_value(e, safe_centroid);
    v.flagged = v.score > margin;
    v.rationale = "margin score " + std::to_string(v.score);
    return v;
}

inline std::pair<Tensor, Tensor> fit_centroids(const diffusion::TextEncoder& enc,
                                               const std::vector<world::TokenSeq>& unsafe_prompts,
                                               const std::vector<world::TokenSeq>& safe_prompts) {
    if (unsafe_prompts.empty() || safe_prompts.empty())
        throw ConfigError("fit_centroids: both labeled prompt sets must be nonempty");
    auto mean_of = [&](const std::vector<world::TokenSeq>& ps) {
        Tensor acc({enc.dim()});
        for (const auto& p : ps) {
            Tensor e = pooled_embedding(enc, p);
            for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += e[i] / static_cast<float>(ps.size());
        }
        return acc;
    };
    return {mean_of(unsafe_prompts), mean_of(safe_prompts)};
}

// ---------------------------------------------------------------------------
// corpora and calibration
// ---------------------------------------------------------------------------

// grammar prompt with the concept token spliced in (the "explicit" unsafe set)
inline std::vector<world::TokenSeq> concept_prompts(const world::WorldConfig& cfg,
                                                    const std::string& concept_name, int n, uint64_t seed) {
    auto pairs = world::build_prompt_pairs(concept_name, std::min(n, 120), cfg);
    std::vector<world::TokenSeq> out;
    Rng rng(derive_seed(seed, "concept_prompts"));
    for (int i = 0; i < n; ++i) out.push_back(pairs.pairs[static_cast<size_t>(i) % pairs.pairs.size()].first);
    (void)rng;
    return out;
}

inline std::vector<world::TokenSeq> grammar_prompts(int n, uint64_t seed) {
    auto all = world::grammar::enumerate_benign();
    Rng rng(derive_seed(seed, "grammar_prompts"));
    std::vector<world::TokenSeq> out;
    for (int i = 0; i < n; ++i)
        out.push_back(all[static_cast<size_t>(rng.uniform_int(static_cast<int>(all.size())))].tokens);
    return out;
}

// adversarial-prompt stand-in: a concept prompt with a random in-vocab token
// salad appended (ungrammatical but encodable)
inline world::TokenSeq gibberish_augment(const world::TokenSeq& base, const std::vector<std::string>& vocab,
                                         Rng& rng, int min_extra = 4, int max_extra = 8) {
    world::TokenSeq out = base;
    const int extra = min_extra + rng.uniform_int(max_extra - min_extra + 1);
    for (int i = 0; i < extra; ++i)
        out.push_back(vocab[static_cast<size_t>(rng.uniform_int(static_cast<int>(vocab.size())))]);
    return out;
}

inline std::vector<world::TokenSeq> adversarial_standin_prompts(const world::WorldConfig& cfg,
                                                                const std::string& concept_name, int n,
                                                                uint64_t seed) {
    auto base = concept_prompts(cfg, concept_name, n, seed);
    Rng rng(derive_seed(seed, "standin_salad"));
    for (auto& p : base) p = gibberish_augment(p, cfg.vocab, rng);
    return base;
}

// threshold at the q-quantile of scores on the safe corpus (<= q false-positive rate)
inline double calibrate_threshold(std::vector<double> safe_scores, double fp_rate = 0.05) {
    if (safe_scores.empty()) throw ConfigError("calibrate_threshold: empty calibration set");
    std::sort(safe_scores.begin(), safe_scores.end());
    const size_t idx =
        std::min(safe_scores.size() - 1, static_cast<size_t>((1.0 - fp_rate) * safe_scores.size()));
    return safe_scores[idx] + 1e-9;
}

// area under the ROC curve for separating positives (higher score) from negatives
inline double auc_score(const std::vector<double>& positives, const std::vector<double>& negatives) {
    if (positives.empty() || negatives.empty()) throw ConfigError("auc: empty sample set");
    double wins = 0.0;
    for (double p : positives)
        for (double n : negatives) {
            if (p > n) wins += 1.0;
            else if (p == n) wins += 0.5;
        }
    return wins / (static_cast<double>(positives.size()) * negatives.size());
}

}  // namespace filters
}  // namespace advlab
