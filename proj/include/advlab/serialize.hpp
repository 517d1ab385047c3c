#pragma once

#include "advlab/attack/train.hpp"
#include "advlab/defenses/checker.hpp"
#include "advlab/diffusion/model.hpp"
#include "advlab/filters/filters.hpp"
#include "advlab/store.hpp"
#include "advlab/world/detector.hpp"

namespace advlab {

// ---------------------------------------------------------------------------
// diffusion model
// ---------------------------------------------------------------------------

inline ordered_json diffusion_config_json(const diffusion::DiffusionConfig& c) {
    ordered_json j;
    j["arch"] = c.arch;
    j["mode"] = c.mode;
    j["image_size"] = c.image_size;
    j["latent_channels"] = c.latent_channels;
    j["downsample"] = c.downsample;
    j["vae_width"] = c.vae_width;
    j["denoiser_width"] = c.denoiser_width;
    j["text_dim"] = c.text_dim;
    j["text_len"] = c.text_len;
    j["t_train"] = c.t_train;
    j["k_infer"] = c.k_infer;
    j["vae_steps"] = c.vae_steps;
    j["vae_batch"] = c.vae_batch;
    j["vae_lr"] = c.vae_lr;
    j["steps"] = c.steps;
    j["batch"] = c.batch;
    j["lr"] = c.lr;
    j["snapshot_every"] = c.snapshot_every;
    j["seed"] = c.seed;
    return j;
}

inline diffusion::DiffusionConfig diffusion_config_from_json(const ordered_json& j) {
    diffusion::DiffusionConfig c;
    c.arch = j.at("arch").get<std::string>();
    c.mode = j.at("mode").get<std::string>();
    c.image_size = j.at("image_size").get<int>();
    c.latent_channels = j.at("latent_channels").get<int>();
    c.downsample = j.at("downsample").get<int>();
    c.vae_width = j.at("vae_width").get<int>();
    c.denoiser_width = j.at("denoiser_width").get<int>();
    c.text_dim = j.at("text_dim").get<int>();
    c.text_len = j.at("text_len").get<int>();
    c.t_train = j.at("t_train").get<int>();
    c.k_infer = j.at("k_infer").get<int>();
    c.vae_steps = j.at("vae_steps").get<int>();
    c.vae_batch = j.at("vae_batch").get<int>();
    c.vae_lr = j.at("vae_lr").get<double>();
    c.steps = j.at("steps").get<int>();
    c.batch = j.at("batch").get<int>();
    c.lr = j.at("lr").get<double>();
    c.snapshot_every = j.at("snapshot_every").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

inline Payload model_to_payload(const diffusion::DiffusionModel& m) {
    Payload p;
    p.meta["kind"] = "diffusion_model";
    p.meta["config"] = diffusion_config_json(m.cfg);
    p.meta["vocab"] = m.vocab;
    p.meta["latent_scale"] = m.latent_scale;
    p.meta["seed"] = m.seed;
    p.meta["alpha_bar"] = m.scheduler.alpha_bar;
    for (auto& [name, t] : diffusion::model_state_dict(m)) p.arrays.emplace_back(name, t);
    return p;
}

inline diffusion::DiffusionModel model_from_payload(const Payload& p) {
    if (p.meta.value("kind", "") != "diffusion_model") throw IntegrityError("payload is not a diffusion model");
    auto cfg = diffusion_config_from_json(p.meta.at("config"));
    auto vocab = p.meta.at("vocab").get<std::vector<std::string>>();
    diffusion::DiffusionModel m = diffusion::make_diffusion_model(cfg, vocab);
    m.latent_scale = p.meta.at("latent_scale").get<float>();
    m.seed = p.meta.at("seed").get<uint64_t>();
    m.scheduler.alpha_bar = p.meta.at("alpha_bar").get<std::vector<double>>();
    m.scheduler.validate();
    nn::StateDict sd;
    for (auto& [name, t] : p.arrays) sd[name] = t;
    diffusion::load_model_state(m, sd);
    return m;
}

// ---------------------------------------------------------------------------
// attack artifacts
// ---------------------------------------------------------------------------

inline ordered_json attack_config_json(const attack::AttackConfig& c) {
    ordered_json j;
    j["variant"] = attack::variant_name(c.variant);
    j["epsilon"] = c.epsilon;
    j["alpha"] = c.alpha;
    j["mu"] = c.mu;
    j["sigma_g"] = c.sigma_g;
    j["sigma_g_is_variance"] = c.sigma_g_is_variance;
    j["t_target"] = c.t_target;
    j["steps"] = c.steps;
    j["lr"] = c.lr;
    j["batch"] = c.batch;
    j["seed"] = c.seed;
    return j;
}

inline attack::AttackConfig attack_config_from_json(const ordered_json& j) {
    attack::AttackConfig c;
    c.variant = attack::variant_from_name(j.at("variant").get<std::string>());
    c.epsilon = j.at("epsilon").get<double>();
    c.alpha = j.at("alpha").get<double>();
    c.mu = j.at("mu").get<double>();
    c.sigma_g = j.at("sigma_g").get<double>();
    c.sigma_g_is_variance = j.at("sigma_g_is_variance").get<bool>();
    c.t_target = j.at("t_target").get<int>();
    c.steps = j.at("steps").get<int>();
    c.lr = j.at("lr").get<double>();
    c.batch = j.at("batch").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

inline Tensor trace_to_tensor(const std::vector<attack::TraceRow>& trace) {
    Tensor t({static_cast<int>(trace.size()), 4});
    for (size_t i = 0; i < trace.size(); ++i) {
        t.at2(static_cast<int>(i), 0) = static_cast<float>(trace[i].step);
        t.at2(static_cast<int>(i), 1) = static_cast<float>(trace[i].l_adv);
        t.at2(static_cast<int>(i), 2) = static_cast<float>(trace[i].l_sc);
        t.at2(static_cast<int>(i), 3) = static_cast<float>(trace[i].total);
    }
    return t;
}

inline std::vector<attack::TraceRow> trace_from_tensor(const Tensor& t) {
    std::vector<attack::TraceRow> out;
    for (int i = 0; i < t.dim(0); ++i)
        out.push_back({static_cast<int>(t.at2(i, 0)), t.at2(i, 1), t.at2(i, 2), t.at2(i, 3)});
    return out;
}

inline std::string trace_to_csv(const std::vector<attack::TraceRow>& trace) {
    std::string s = "step,L_adv,L_sc,total\n";
    char buf[128];
    for (const auto& r : trace) {
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g\n", r.step, r.l_adv, r.l_sc, r.total);
        s += buf;
    }
    return s;
}

inline ordered_json vae_config_json(const diffusion::VaeConfig& c) {
    ordered_json j;
    j["width"] = c.width;
    j["z_channels"] = c.z_channels;
    j["downsample"] = c.downsample;
    j["image_channels"] = c.image_channels;
    return j;
}

inline diffusion::VaeConfig vae_config_from_json(const ordered_json& j) {
    diffusion::VaeConfig c;
    c.width = j.at("width").get<int>();
    c.z_channels = j.at("z_channels").get<int>();
    c.downsample = j.at("downsample").get<int>();
    c.image_channels = j.at("image_channels").get<int>();
    return c;
}

inline Payload generator_to_payload(const attack::GeneratorTrainResult& r) {
    Payload p;
    p.meta["kind"] = "adv_generator";
    p.meta["attack"] = attack_config_json(r.cfg);
    p.meta["concept_hash"] = r.concept_hash;
    p.meta["vae_config"] = vae_config_json(r.gen.cfg);
    p.meta["audit"] = {{"steps_audited", r.audit.steps_audited},
                       {"violations", r.audit.violations},
                       {"max_linf_dev", r.audit.max_linf_dev},
                       {"all_in_range", r.audit.all_in_range}};
    for (auto& [name, t] : r.gen.net.state_dict()) p.arrays.emplace_back("psi." + name, t);
    p.arrays.emplace_back("trace", trace_to_tensor(r.trace));
    return p;
}

inline attack::GeneratorTrainResult generator_from_payload(const Payload& p) {
    if (p.meta.value("kind", "") != "adv_generator") throw IntegrityError("payload is not a generator");
    attack::GeneratorTrainResult r;
    r.cfg = attack_config_from_json(p.meta.at("attack"));
    r.concept_hash = p.meta.value("concept_hash", "");
    r.gen.cfg = vae_config_from_json(p.meta.at("vae_config"));
    Rng rng(1);
    r.gen.net = diffusion::ImageVae(r.gen.cfg, rng);
    nn::StateDict sd;
    for (auto& [name, t] : p.arrays) {
        if (name.rfind("psi.", 0) == 0) sd[name.substr(4)] = t;
    }
    r.gen.net.load_state_dict(sd);
    r.trace = trace_from_tensor(p.array("trace"));
    const auto& a = p.meta.at("audit");
    r.audit.steps_audited = a.at("steps_audited").get<int64_t>();
    r.audit.violations = a.at("violations").get<int64_t>();
    r.audit.max_linf_dev = a.at("max_linf_dev").get<double>();
    r.audit.all_in_range = a.at("all_in_range").get<bool>();
    return r;
}

inline Payload delta_to_payload(const attack::DirectPerturbationResult& r) {
    Payload p;
    p.meta["kind"] = "direct_delta";
    p.meta["attack"] = attack_config_json(r.cfg);
    p.meta["concept_hash"] = r.concept_hash;
    p.arrays.emplace_back("delta", r.delta);
    p.arrays.emplace_back("trace", trace_to_tensor(r.trace));
    return p;
}

inline attack::DirectPerturbationResult delta_from_payload(const Payload& p) {
    if (p.meta.value("kind", "") != "direct_delta") throw IntegrityError("payload is not a perturbation");
    attack::DirectPerturbationResult r;
    r.cfg = attack_config_from_json(p.meta.at("attack"));
    r.concept_hash = p.meta.value("concept_hash", "");
    r.delta = p.array("delta");
    r.trace = trace_from_tensor(p.array("trace"));
    return r;
}

// ---------------------------------------------------------------------------
// detector / checker / concept vector
// ---------------------------------------------------------------------------

inline Payload detector_to_payload(const world::Detector& d, int width) {
    Payload p;
    p.meta["kind"] = "detector";
    p.meta["labels"] = d.labels;
    p.meta["label_list"] = d.label_list;
    p.meta["threshold"] = d.threshold;
    p.meta["width"] = width;
    p.meta["seed"] = d.seed;
    for (auto& [name, t] : d.net.state_dict()) p.arrays.emplace_back(name, t);
    return p;
}

inline world::Detector detector_from_payload(const Payload& p) {
    if (p.meta.value("kind", "") != "detector") throw IntegrityError("payload is not a detector");
    world::Detector d;
    Rng rng(1);
    d.net = world::DetectorNet(rng, p.meta.at("width").get<int>());
    nn::StateDict sd;
    for (auto& [name, t] : p.arrays) sd[name] = t;
    d.net.load_state_dict(sd);
    d.labels = p.meta.at("labels").get<std::vector<std::string>>();
    d.label_list = p.meta.at("label_list").get<std::vector<std::string>>();
    d.threshold = p.meta.at("threshold").get<float>();
    d.seed = p.meta.at("seed").get<uint64_t>();
    return d;
}

inline Payload checker_to_payload(const defenses::SafetyChecker& c, int feature_dim) {
    Payload p;
    p.meta["kind"] = "safety_checker";
    p.meta["concept"] = c.concept_name;
    p.meta["thresholds"] = c.thresholds;
    p.meta["feature_dim"] = feature_dim;
    p.meta["seed"] = c.seed;
    for (auto& [name, t] : c.net.state_dict()) p.arrays.emplace_back("phi." + name, t);
    for (size_t i = 0; i < c.concepts.size(); ++i)
        p.arrays.emplace_back("concept" + std::to_string(i), c.concepts[i]);
    return p;
}

inline defenses::SafetyChecker checker_from_payload(const Payload& p) {
    if (p.meta.value("kind", "") != "safety_checker") throw IntegrityError("payload is not a safety checker");
    defenses::SafetyChecker c;
    Rng rng(1);
    c.net = defenses::CheckerNet(rng, p.meta.at("feature_dim").get<int>());
    nn::StateDict sd;
    for (auto& [name, t] : p.arrays)
        if (name.rfind("phi.", 0) == 0) sd[name.substr(4)] = t;
    c.net.load_state_dict(sd);
    c.concept_name = p.meta.at("concept").get<std::string>();
    c.thresholds = p.meta.at("thresholds").get<std::vector<float>>();
    c.seed = p.meta.at("seed").get<uint64_t>();
    for (size_t i = 0; p.has_array("concept" + std::to_string(i)); ++i)
        c.concepts.push_back(p.array("concept" + std::to_string(i)));
    if (c.concepts.size() != c.thresholds.size())
        throw IntegrityError("checker payload: concepts/thresholds arity mismatch");
    return c;
}

inline Payload concept_to_payload(const ConceptVector& c) {
    Payload p;
    p.meta["kind"] = "concept_vector";
    p.meta["concept"] = c.concept_name;
    p.meta["n_pairs"] = c.n_pairs;
    p.meta["source_hash"] = c.source_hash;
    p.arrays.emplace_back("values", c.values);
    return p;
}

inline ConceptVector concept_from_payload(const Payload& p) {
    if (p.meta.value("kind", "") != "concept_vector") throw IntegrityError("payload is not a concept vector");
    ConceptVector c;
    c.concept_name = p.meta.at("concept").get<std::string>();
    c.n_pairs = p.meta.at("n_pairs").get<int>();
    c.source_hash = p.meta.at("source_hash").get<std::string>();
    c.values = p.array("values");
    return c;
}

}  // namespace advlab
