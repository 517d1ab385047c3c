#pragma once

#include <string>
#include <vector>

#include "advlab/eval/harness.hpp"

namespace advlab {
namespace evalh {

// Experiment grids mirroring the published table structures at toy scale.
// Attack artifacts are shared across rows through the context caches.

namespace presetdetail {

inline ExperimentSpec base_spec(const RunConfig& cfg, const std::string& model_key,
                                attack::AttackVariant variant, const std::string& concept_name,
                                DefenseKind defense) {
    ExperimentSpec s;
    s.model_key = model_key;
    s.variant = variant;
    s.attack = cfg.attack;
    s.attack.variant = variant;
    s.concept_name = concept_name;
    if (defense != DefenseKind::none) s.defenses = {defense};
    s.n_eval = cfg.eval_section.n_eval;
    s.seed = cfg.eval_section.seed;
    s.split = world::split_from_name(cfg.eval_section.split);
    return s;
}

inline const std::vector<DefenseKind>& all_defenses() {
    static const std::vector<DefenseKind> d = {DefenseKind::none, DefenseKind::sld, DefenseKind::sd_np,
                                               DefenseKind::gn, DefenseKind::sc};
    return d;
}

}  // namespace presetdetail

// methods x defenses for both concepts on one conditioning mode
inline std::vector<ExperimentSpec> preset_method_defense_grid(const RunConfig& cfg,
                                                              const std::string& model_key) {
    using attack::AttackVariant;
    std::vector<ExperimentSpec> specs;
    for (const std::string& concept_name : {cfg.world.concept_name, cfg.world.second_concept_name})
        for (AttackVariant v : {AttackVariant::attack_vae, AttackVariant::advi2i, AttackVariant::adaptive})
            for (DefenseKind d : presetdetail::all_defenses())
                specs.push_back(presetdetail::base_spec(cfg, model_key, v, concept_name, d));
    return specs;
}

// generalization to unseen images / prompts
inline std::vector<ExperimentSpec> preset_unseen_grid(const RunConfig& cfg, const std::string& model_key) {
    using attack::AttackVariant;
    std::vector<ExperimentSpec> specs;
    for (const std::string& concept_name : {cfg.world.concept_name, cfg.world.second_concept_name})
        for (AttackVariant v : {AttackVariant::advi2i, AttackVariant::adaptive})
            for (world::Split split : {world::Split::eval_seen, world::Split::eval_unseen_image,
                                       world::Split::eval_unseen_prompt}) {
                ExperimentSpec s =
                    presetdetail::base_spec(cfg, model_key, v, concept_name, DefenseKind::none);
                s.split = split;
                s.n_eval = std::min(s.n_eval, 200);
                specs.push_back(std::move(s));
            }
    return specs;
}

// 2 methods x 3 noise bounds x 5 defenses
inline std::vector<ExperimentSpec> preset_epsilon_grid(const RunConfig& cfg, const std::string& model_key) {
    using attack::AttackVariant;
    std::vector<ExperimentSpec> specs;
    for (AttackVariant v : {AttackVariant::advi2i, AttackVariant::adaptive})
        for (double eps : {32.0 / 255.0, 64.0 / 255.0, 128.0 / 255.0})
            for (DefenseKind d : presetdetail::all_defenses()) {
                ExperimentSpec s =
                    presetdetail::base_spec(cfg, model_key, v, cfg.world.concept_name, d);
                s.attack.epsilon = eps;
                specs.push_back(std::move(s));
            }
    return specs;
}

// 2 methods x 3 strength coefficients x 5 defenses
inline std::vector<ExperimentSpec> preset_alpha_grid(const RunConfig& cfg, const std::string& model_key) {
    using attack::AttackVariant;
    std::vector<ExperimentSpec> specs;
    for (AttackVariant v : {AttackVariant::advi2i, AttackVariant::adaptive})
        for (double alpha : {2.2, 2.5, 2.8})
            for (DefenseKind d : presetdetail::all_defenses()) {
                ExperimentSpec s =
                    presetdetail::base_spec(cfg, model_key, v, cfg.world.concept_name, d);
                s.attack.alpha = alpha;
                specs.push_back(std::move(s));
            }
    return specs;
}

inline ReportTable run_preset(LabContext& ctx, const std::string& preset) {
    const RunConfig& cfg = ctx.config();
    if (preset == "table3") return run_grid(ctx, preset_method_defense_grid(cfg, "source@instruct"), preset);
    if (preset == "table4") return run_grid(ctx, preset_method_defense_grid(cfg, "source@inpaint"), preset);
    if (preset == "table5") return run_grid(ctx, preset_unseen_grid(cfg, "source"), preset);
    if (preset == "table6") return run_grid(ctx, preset_epsilon_grid(cfg, "source"), preset);
    if (preset == "table8") return run_grid(ctx, preset_alpha_grid(cfg, "source"), preset);
    if (preset == "transfer")
        return transfer_eval(ctx, {attack::AttackVariant::advi2i, attack::AttackVariant::adaptive},
                             {"source", "retrain", "alt_arch"}, cfg.world.concept_name);
    throw ConfigError("unknown preset: " + preset +
                      " (expected table3|table4|table5|table6|table8|transfer)");
}

}  // namespace evalh
}  // namespace advlab
