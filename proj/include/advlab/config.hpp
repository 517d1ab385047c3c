#pragma once

#include <string>

#include "advlab/attack/generator.hpp"
#include "advlab/defenses/checker.hpp"
#include "advlab/diffusion/model.hpp"
#include "advlab/world/detector.hpp"
#include "advlab/world/world_io.hpp"

#include <json.hpp>

namespace advlab {

// Declarative run configuration. Every hyperparameter any module consumes has
// a named field here; defaults reproduce the headline experiment (epsilon
// 64/255, concept strength 2.5, 200 evaluation samples). Unknown keys are
// rejected with their full path.
struct RunConfig {
    int schema_version = 1;
    world::WorldConfig world;
    diffusion::DiffusionConfig diffusion;
    struct ConceptSection {
        int n_pairs = 8;
    } concept_section;
    attack::AttackConfig attack;
    struct DefenseSection {
        double gn_sigma = 0.0;             // used when gn_sigma_match_epsilon is false
        bool gn_sigma_match_epsilon = true;  // default: same noise bound as the attack
        double np_scale = 3.0;
        double sld_scale = 1.0;
        double sld_threshold = 0.1;
        world::DetectorTrainConfig detector;
        defenses::CheckerTrainConfig checker;

        double gn_sigma_for(double epsilon) const { return gn_sigma_match_epsilon ? epsilon : gn_sigma; }
    } defenses_section;
    struct FilterSection {
        double ppl_smoothing = 0.1;
        double ppl_threshold = 0.0;  // 0 = calibrate to the fp target
        double fp_target = 0.05;
        double embedding_margin = 0.0;  // 0 = calibrate
        bool embedding_margin_auto = true;
        bool ppl_threshold_auto = true;
        std::vector<std::string> keyword_list = {"hatch", "crack"};
        bool keyword_fold_case = true;
        int corpus_n = 100;
        uint64_t seed = 33;
        // llm client
        bool llm_offline_stub = true;
        std::string llm_stub_mode = "rule";
        std::string llm_host = "127.0.0.1";
        int llm_port = 0;
        std::string llm_path = "/v1/chat/completions";
        int llm_timeout_ms = 2000;
        int llm_retries = 1;
    } filters_section;
    struct EvalSection {
        int n_eval = 200;
        uint64_t seed = 1234;
        std::string split = "eval_seen";
    } eval_section;
};

inline ordered_json run_config_json(const RunConfig& c) {
    ordered_json j;
    j["schema_version"] = c.schema_version;
    j["world"] = world::world_config_json(c.world);
    j["diffusion"] = diffusion_config_json(c.diffusion);
    j["concept"] = ordered_json{{"n_pairs", c.concept_section.n_pairs}};
    j["attack"] = attack_config_json(c.attack);
    ordered_json d;
    d["gn_sigma"] = c.defenses_section.gn_sigma;
    d["gn_sigma_match_epsilon"] = c.defenses_section.gn_sigma_match_epsilon;
    d["np_scale"] = c.defenses_section.np_scale;
    d["sld_scale"] = c.defenses_section.sld_scale;
    d["sld_threshold"] = c.defenses_section.sld_threshold;
    d["detector"] = ordered_json{{"steps", c.defenses_section.detector.steps},
                                 {"batch", c.defenses_section.detector.batch},
                                 {"lr", c.defenses_section.detector.lr},
                                 {"threshold", c.defenses_section.detector.threshold},
                                 {"width", c.defenses_section.detector.width},
                                 {"held_out", c.defenses_section.detector.held_out},
                                 {"synthesize_positives", c.defenses_section.detector.synthesize_positives},
                                 {"seed", c.defenses_section.detector.seed}};
    d["checker"] = ordered_json{{"steps", c.defenses_section.checker.steps},
                                {"batch", c.defenses_section.checker.batch},
                                {"lr", c.defenses_section.checker.lr},
                                {"feature_dim", c.defenses_section.checker.feature_dim},
                                {"calib_n", c.defenses_section.checker.calib_n},
                                {"fp_target", c.defenses_section.checker.fp_target},
                                {"tp_target", c.defenses_section.checker.tp_target},
                                {"seed", c.defenses_section.checker.seed}};
    j["defenses"] = d;
    ordered_json f;
    f["ppl_smoothing"] = c.filters_section.ppl_smoothing;
    f["ppl_threshold"] = c.filters_section.ppl_threshold;
    f["ppl_threshold_auto"] = c.filters_section.ppl_threshold_auto;
    f["fp_target"] = c.filters_section.fp_target;
    f["embedding_margin"] = c.filters_section.embedding_margin;
    f["embedding_margin_auto"] = c.filters_section.embedding_margin_auto;
    f["keyword_list"] = c.filters_section.keyword_list;
    f["keyword_fold_case"] = c.filters_section.keyword_fold_case;
    f["corpus_n"] = c.filters_section.corpus_n;
    f["seed"] = c.filters_section.seed;
    f["llm"] = ordered_json{{"offline_stub", c.filters_section.llm_offline_stub},
                            {"stub_mode", c.filters_section.llm_stub_mode},
                            {"host", c.filters_section.llm_host},
                            {"port", c.filters_section.llm_port},
                            {"path", c.filters_section.llm_path},
                            {"timeout_ms", c.filters_section.llm_timeout_ms},
                            {"retries", c.filters_section.llm_retries}};
    j["filters"] = f;
    j["eval"] = ordered_json{{"n_eval", c.eval_section.n_eval},
                             {"seed", c.eval_section.seed},
                             {"split", c.eval_section.split}};
    return j;
}

namespace configdetail {

inline bool type_compatible(const ordered_json& schema, const ordered_json& value) {
    if (schema.is_number() && value.is_number()) return true;
    if (schema.is_boolean()) return value.is_boolean();
    if (schema.is_string()) return value.is_string();
    if (schema.is_array()) return value.is_array();
    if (schema.is_object()) return value.is_object();
    return false;
}

inline void check_against_schema(const ordered_json& schema, const ordered_json& value,
                                 const std::string& path) {
    if (!value.is_object()) {
        if (!type_compatible(schema, value))
            throw ConfigError("config: type mismatch at " + (path.empty() ? "<root>" : path));
        return;
    }
    if (!schema.is_object()) throw ConfigError("config: type mismatch at " + (path.empty() ? "<root>" : path));
    for (auto it = value.begin(); it != value.end(); ++it) {
        const std::string sub = path.empty() ? it.key() : path + "." + it.key();
        if (!schema.contains(it.key())) throw ConfigError("config: unknown key " + sub);
        check_against_schema(schema.at(it.key()), it.value(), sub);
    }
}

// merge user values over the defaults (objects merge recursively, everything
// else replaces)
inline void merge(ordered_json& base, const ordered_json& over) {
    for (auto it = over.begin(); it != over.end(); ++it) {
        if (it->is_object() && base.contains(it.key()) && base.at(it.key()).is_object())
            merge(base.at(it.key()), *it);
        else
            base[it.key()] = *it;
    }
}

}  // namespace configdetail

inline RunConfig run_config_from_json(const ordered_json& j) {
    RunConfig c;
    c.schema_version = j.at("schema_version").get<int>();
    if (c.schema_version != 1)
        throw ConfigError("config: unsupported schema_version " + std::to_string(c.schema_version));
    c.world = world::world_config_from_json(j.at("world"));
    c.diffusion = diffusion_config_from_json(j.at("diffusion"));
    c.concept_section.n_pairs = j.at("concept").at("n_pairs").get<int>();
    c.attack = attack_config_from_json(j.at("attack"));
    const auto& d = j.at("defenses");
    c.defenses_section.gn_sigma = d.at("gn_sigma").get<double>();
    c.defenses_section.gn_sigma_match_epsilon = d.at("gn_sigma_match_epsilon").get<bool>();
    c.defenses_section.np_scale = d.at("np_scale").get<double>();
    c.defenses_section.sld_scale = d.at("sld_scale").get<double>();
    c.defenses_section.sld_threshold = d.at("sld_threshold").get<double>();
    const auto& dd = d.at("detector");
    c.defenses_section.detector.steps = dd.at("steps").get<int>();
    c.defenses_section.detector.batch = dd.at("batch").get<int>();
    c.defenses_section.detector.lr = dd.at("lr").get<double>();
    c.defenses_section.detector.threshold = dd.at("threshold").get<float>();
    c.defenses_section.detector.width = dd.at("width").get<int>();
    c.defenses_section.detector.held_out = dd.at("held_out").get<int>();
    c.defenses_section.detector.synthesize_positives = dd.at("synthesize_positives").get<bool>();
    c.defenses_section.detector.seed = dd.at("seed").get<uint64_t>();
    const auto& dc = d.at("checker");
    c.defenses_section.checker.steps = dc.at("steps").get<int>();
    c.defenses_section.checker.batch = dc.at("batch").get<int>();
    c.defenses_section.checker.lr = dc.at("lr").get<double>();
    c.defenses_section.checker.feature_dim = dc.at("feature_dim").get<int>();
    c.defenses_section.checker.calib_n = dc.at("calib_n").get<int>();
    c.defenses_section.checker.fp_target = dc.at("fp_target").get<double>();
    c.defenses_section.checker.tp_target = dc.at("tp_target").get<double>();
    c.defenses_section.checker.seed = dc.at("seed").get<uint64_t>();
    const auto& f = j.at("filters");
    c.filters_section.ppl_smoothing = f.at("ppl_smoothing").get<double>();
    c.filters_section.ppl_threshold = f.at("ppl_threshold").get<double>();
    c.filters_section.ppl_threshold_auto = f.at("ppl_threshold_auto").get<bool>();
    c.filters_section.fp_target = f.at("fp_target").get<double>();
    c.filters_section.embedding_margin = f.at("embedding_margin").get<double>();
    c.filters_section.embedding_margin_auto = f.at("embedding_margin_auto").get<bool>();
    c.filters_section.keyword_list = f.at("keyword_list").get<std::vector<std::string>>();
    c.filters_section.keyword_fold_case = f.at("keyword_fold_case").get<bool>();
    c.filters_section.corpus_n = f.at("corpus_n").get<int>();
    c.filters_section.seed = f.at("seed").get<uint64_t>();
    const auto& l = f.at("llm");
    c.filters_section.llm_offline_stub = l.at("offline_stub").get<bool>();
    c.filters_section.llm_stub_mode = l.at("stub_mode").get<std::string>();
    c.filters_section.llm_host = l.at("host").get<std::string>();
    c.filters_section.llm_port = l.at("port").get<int>();
    c.filters_section.llm_path = l.at("path").get<std::string>();
    c.filters_section.llm_timeout_ms = l.at("timeout_ms").get<int>();
    c.filters_section.llm_retries = l.at("retries").get<int>();
    const auto& e = j.at("eval");
    c.eval_section.n_eval = e.at("n_eval").get<int>();
    c.eval_section.seed = e.at("seed").get<uint64_t>();
    c.eval_section.split = e.at("split").get<std::string>();
    world::split_from_name(c.eval_section.split);
    c.world.validate();
    c.diffusion.validate();
    c.attack.validate();
    if (c.eval_section.n_eval < 1) throw ConfigError("config: eval.n_eval must be >= 1");
    return c;
}

// Parses a config document: defaults filled, unknown keys rejected with the
// offending path, schema version checked.
inline RunConfig parse_config_text(const std::string& text) {
    ordered_json user;
    try {
        user = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: JSON parse failure: ") + e.what());
    }
    if (!user.is_object()) throw ConfigError("config: document must be a JSON object");
    ordered_json defaults = run_config_json(RunConfig{});
    configdetail::check_against_schema(defaults, user, "");
    configdetail::merge(defaults, user);
    return run_config_from_json(defaults);
}

inline RunConfig parse_config_file(const fs::path& path) { return parse_config_text(read_file_bytes(path)); }

inline std::string run_config_hash(const RunConfig& c) { return sha256_hex(run_config_json(c).dump()); }

}  // namespace advlab
