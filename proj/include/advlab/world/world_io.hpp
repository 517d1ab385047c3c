#pragma once

#include <filesystem>

#include "advlab/core/io.hpp"
#include "advlab/core/png.hpp"
#include "advlab/core/sha256.hpp"
#include "advlab/world/world.hpp"

#include <json.hpp>

namespace advlab {
namespace world {

using ordered_json = nlohmann::ordered_json;

// Dataset directory layout:
//   manifest.json            config, prompts, records (with split + labels)
//   images/img_<id>.png      8-bit PNG per pool image (records reference them)
// Rendered pixels are quantized to the 8-bit grid, so PNG storage is exactly
// lossless and reload is bit-identical.

inline ordered_json scene_json(const SceneParams& s) {
    ordered_json j;
    j["image_size"] = s.image_size;
    j["bg_color_id"] = s.bg_color_id;
    j["shape"] = static_cast<int>(s.shape);
    j["fg_color_id"] = s.fg_color_id;
    j["cx"] = s.cx;
    j["cy"] = s.cy;
    j["radius"] = s.radius;
    j["texture"] = texture_name(s.texture);
    j["texture_variant"] = s.texture_variant;
    return j;
}

inline SceneParams scene_from_json(const ordered_json& j) {
    SceneParams s;
    s.image_size = j.at("image_size").get<int>();
    s.bg_color_id = j.at("bg_color_id").get<int>();
    s.shape = static_cast<Shape>(j.at("shape").get<int>());
    s.fg_color_id = j.at("fg_color_id").get<int>();
    s.cx = j.at("cx").get<float>();
    s.cy = j.at("cy").get<float>();
    s.radius = j.at("radius").get<float>();
    s.texture = texture_from_name(j.at("texture").get<std::string>());
    s.texture_variant = j.at("texture_variant").get<int>();
    return s;
}

inline ordered_json world_config_json(const WorldConfig& c) {
    ordered_json j;
    j["image_size"] = c.image_size;
    j["channels"] = c.channels;
    j["n_images"] = c.n_images;
    j["n_prompts"] = c.n_prompts;
    j["n_unseen_images"] = c.n_unseen_images;
    j["n_unseen_prompts"] = c.n_unseen_prompts;
    j["concept_name"] = c.concept_name;
    j["second_concept_name"] = c.second_concept_name;
    j["vocab"] = c.vocab;
    j["eval_fraction"] = c.eval_fraction;
    j["concept_image_fraction"] = c.concept_image_fraction;
    j["benign_texture_fraction"] = c.benign_texture_fraction;
    j["latent_downsample"] = c.latent_downsample;
    j["seed"] = c.seed;
    return j;
}

inline WorldConfig world_config_from_json(const ordered_json& j) {
    WorldConfig c;
    c.image_size = j.at("image_size").get<int>();
    c.channels = j.at("channels").get<int>();
    c.n_images = j.at("n_images").get<int>();
    c.n_prompts = j.at("n_prompts").get<int>();
    c.n_unseen_images = j.at("n_unseen_images").get<int>();
    c.n_unseen_prompts = j.at("n_unseen_prompts").get<int>();
    c.concept_name = j.at("concept_name").get<std::string>();
    c.second_concept_name = j.at("second_concept_name").get<std::string>();
    c.vocab = j.at("vocab").get<std::vector<std::string>>();
    c.eval_fraction = j.at("eval_fraction").get<double>();
    c.concept_image_fraction = j.at("concept_image_fraction").get<double>();
    c.benign_texture_fraction = j.at("benign_texture_fraction").get<double>();
    c.latent_downsample = j.at("latent_downsample").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

inline ordered_json edit_json(const EditOp& e) {
    ordered_json j;
    j["kind"] = static_cast<int>(e.kind);
    j["color_id"] = e.color_id;
    j["texture"] = texture_name(e.texture);
    return j;
}

inline EditOp edit_from_json(const ordered_json& j) {
    EditOp e;
    e.kind = static_cast<EditKind>(j.at("kind").get<int>());
    e.color_id = j.at("color_id").get<int>();
    e.texture = texture_from_name(j.at("texture").get<std::string>());
    return e;
}

inline void save_dataset(const Dataset& ds, const fs::path& dir) {
    fs::create_directories(dir / "images");
    ordered_json m;
    m["schema_version"] = "advlab.dataset/1";
    m["image_format"] = "png8";
    m["config"] = world_config_json(ds.cfg);
    m["images"] = ordered_json::array();
    for (const auto& img : ds.images) {
        const std::string file = "images/img_" + std::to_string(img.id) + ".png";
        const std::string png = image_to_png(img.image);
        write_file_atomic(dir / file, png);
        ordered_json e;
        e["id"] = img.id;
        e["file"] = file;
        e["sha256"] = sha256_hex(png);
        e["unseen"] = img.unseen;
        e["scene"] = scene_json(img.scene);
        ordered_json labels;
        labels[ds.cfg.concept_name] = texture_name(img.scene.texture) == ds.cfg.concept_name;
        labels[ds.cfg.second_concept_name] = texture_name(img.scene.texture) == ds.cfg.second_concept_name;
        e["has_concept"] = labels;
        m["images"].push_back(e);
    }
    m["prompts"] = ordered_json::array();
    for (const auto& p : ds.prompts) {
        ordered_json e;
        e["id"] = p.id;
        e["tokens"] = p.tokens;
        e["edit"] = edit_json(p.edit);
        e["unseen"] = p.unseen;
        m["prompts"].push_back(e);
    }
    m["records"] = ordered_json::array();
    for (const auto& r : ds.records) {
        ordered_json e;
        e["id"] = r.id;
        e["image_id"] = r.image_id;
        e["prompt_id"] = r.prompt_id;
        e["image_file"] = "images/img_" + std::to_string(r.image_id) + ".png";
        e["split"] = split_name(r.split);
        m["records"].push_back(e);
    }
    write_file_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

inline Dataset load_dataset(const fs::path& dir) {
    ordered_json m;
    try {
        m = ordered_json::parse(read_file_bytes(dir / "manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError("dataset manifest parse failure: " + std::string(e.what()));
    }
    if (m.value("schema_version", "") != "advlab.dataset/1")
        throw IntegrityError("unsupported dataset schema in " + dir.string());
    if (m.value("image_format", "") != "png8")
        throw IntegrityError("unsupported dataset image format");
    Dataset ds;
    ds.cfg = world_config_from_json(m.at("config"));
    for (const auto& e : m.at("images")) {
        ImageEntry img;
        img.id = e.at("id").get<int>();
        img.unseen = e.at("unseen").get<bool>();
        img.scene = scene_from_json(e.at("scene"));
        const std::string bytes = read_file_bytes(dir / e.at("file").get<std::string>());
        if (sha256_hex(bytes) != e.at("sha256").get<std::string>())
            throw IntegrityError("dataset image " + std::to_string(img.id) + " failed its hash check");
        img.image = png_to_image(bytes);
        ds.images.push_back(std::move(img));
    }
    for (const auto& e : m.at("prompts")) {
        PromptEntry p;
        p.id = e.at("id").get<int>();
        p.tokens = e.at("tokens").get<std::vector<std::string>>();
        p.edit = edit_from_json(e.at("edit"));
        p.unseen = e.at("unseen").get<bool>();
        ds.prompts.push_back(std::move(p));
    }
    for (const auto& e : m.at("records")) {
        SampleRecord r;
        r.id = e.at("id").get<int>();
        r.image_id = e.at("image_id").get<int>();
        r.prompt_id = e.at("prompt_id").get<int>();
        r.split = split_from_name(e.at("split").get<std::string>());
        ds.records.push_back(r);
    }
    return ds;
}

}  // namespace world
}  // namespace advlab
