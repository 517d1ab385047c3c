#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "advlab/core/tensor.hpp"

namespace advlab {
namespace world {

enum class Shape { circle = 0, square = 1, triangle = 2, diamond = 3 };

enum class TextureKind { none = 0, hatch = 1, crack = 2, spots = 3, rings = 4 };

inline const char* texture_name(TextureKind t) {
    switch (t) {
        case TextureKind::hatch: return "hatch";
        case TextureKind::crack: return "crack";
        case TextureKind::spots: return "spots";
        case TextureKind::rings: return "rings";
        default: return "none";
    }
}

inline TextureKind texture_from_name(const std::string& s) {
    if (s == "hatch") return TextureKind::hatch;
    if (s == "crack") return TextureKind::crack;
    if (s == "spots") return TextureKind::spots;
    if (s == "rings") return TextureKind::rings;
    if (s == "none") return TextureKind::none;
    throw ConfigError("unknown texture name: " + s);
}

inline const std::vector<std::string>& color_names() {
    static const std::vector<std::string> names = {"red",    "green",   "blue",  "yellow", "purple",
                                                   "orange", "cyan",    "magenta", "white", "gray"};
    return names;
}

inline std::array<float, 3> color_value(int id) {
    static const std::array<float, 3> vals[] = {
        {0.85f, 0.10f, 0.10f}, {0.10f, 0.70f, 0.15f}, {0.12f, 0.25f, 0.85f}, {0.90f, 0.85f, 0.10f},
        {0.55f, 0.15f, 0.75f}, {0.95f, 0.55f, 0.05f}, {0.05f, 0.75f, 0.80f}, {0.85f, 0.10f, 0.70f},
        {0.95f, 0.95f, 0.95f}, {0.50f, 0.50f, 0.50f}};
    return vals[static_cast<size_t>(id)];
}

// One object over a flat background; the full ground truth for an image.
struct SceneParams {
    int image_size = 64;
    int bg_color_id = 0;
    Shape shape = Shape::circle;
    int fg_color_id = 2;
    float cx = 32.0f, cy = 32.0f, radius = 14.0f;
    TextureKind texture = TextureKind::none;
    int texture_variant = 0;  // orientation / phase flavor
};

namespace renderdetail {

inline float shape_sdf(const SceneParams& s, float x, float y) {
    const float dx = x - s.cx, dy = y - s.cy;
    switch (s.shape) {
        case Shape::circle: return std::sqrt(dx * dx + dy * dy) - s.radius;
        case Shape::square: return std::max(std::fabs(dx), std::fabs(dy)) - s.radius;
        case Shape::diamond: return (std::fabs(dx) + std::fabs(dy)) * 0.70710678f - s.radius * 0.92f;
        case Shape::triangle: {
            // upward equilateral triangle inscribed in the radius
            const float k = 1.7320508f;  // sqrt(3)
            float px = std::fabs(dx);
            float py = dy + s.radius * 0.5f;
            float d1 = (k * px + py - s.radius) * 0.5f;  // slanted edges
            float d2 = -py - s.radius * 0.2f;            // lifted base
            return std::max(d1, d2);
        }
    }
    return 1e9f;
}

inline bool texture_hit(const SceneParams& s, int xi, int yi) {
    switch (s.texture) {
        case TextureKind::none: return false;
        case TextureKind::hatch: {
            const int v = s.texture_variant == 0 ? xi + yi : xi - yi + 4 * s.image_size;
            return v % 8 < 4;
        }
        case TextureKind::crack: {
            const int p = s.texture_variant == 0 ? 7 : 9;
            const int a = (xi + yi) % p, b = (xi - yi + 4 * s.image_size) % p;
            return a < 2 || b < 2;
        }
        case TextureKind::spots: {
            const int ph = s.texture_variant == 0 ? 0 : 4;
            const int mx = (xi + ph) % 8 - 4, my = (yi + ph) % 8 - 4;
            return mx * mx + my * my <= 4;
        }
        case TextureKind::rings: {
            const float p = s.texture_variant == 0 ? 7.0f : 9.0f;
            const float d = std::sqrt((xi - s.cx) * (xi - s.cx) + (yi - s.cy) * (yi - s.cy));
            return std::fmod(d, p) < 2.0f;
        }
    }
    return false;
}

}  // namespace renderdetail

// Renders the scene to a [3,H,W] image in [0,1]. Values are quantized to the
// 8-bit grid so PNG persistence is exactly lossless.
inline Tensor render_scene(const SceneParams& s) {
    const int n = s.image_size;
    Tensor img({3, n, n});
    auto fg = color_value(s.fg_color_id);
    auto bgc = color_value(s.bg_color_id);
    std::array<float, 3> bg = {bgc[0] * 0.30f + 0.05f, bgc[1] * 0.30f + 0.05f, bgc[2] * 0.30f + 0.05f};
    const bool dark_texture = s.texture == TextureKind::hatch || s.texture == TextureKind::crack;
    const float tex_level = dark_texture ? 0.02f : 0.98f;
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            const float sdf = renderdetail::shape_sdf(s, static_cast<float>(x) + 0.5f, static_cast<float>(y) + 0.5f);
            float cov = std::min(std::max(0.5f - sdf, 0.0f), 1.0f);
            const bool tex = cov > 0.5f && renderdetail::texture_hit(s, x, y);
            for (int c = 0; c < 3; ++c) {
                float obj = tex ? tex_level : fg[c];
                float v = bg[c] * (1.0f - cov) + obj * cov;
                img.at3(c, y, x) = std::round(v * 255.0f) / 255.0f;
            }
        }
    }
    return img;
}

// Binary [H,W] mask of the editable region: bounding box of the object
// dilated by 2 px for object edits, its complement (with a 2 px protective
// margin around the object) for background edits.
inline Tensor editable_mask(const SceneParams& s, bool background_edit, int dilate_px = 2) {
    const int n = s.image_size;
    Tensor mask({n, n});
    const float r = s.radius + static_cast<float>(dilate_px);
    const float rp = s.radius - static_cast<float>(dilate_px);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const bool in_box = std::fabs(x + 0.5f - s.cx) <= r && std::fabs(y + 0.5f - s.cy) <= r;
            const bool in_protect = std::fabs(x + 0.5f - s.cx) <= rp && std::fabs(y + 0.5f - s.cy) <= rp;
            mask.at2(y, x) = background_edit ? (in_protect ? 0.0f : 1.0f) : (in_box ? 1.0f : 0.0f);
        }
    return mask;
}

enum class EditKind { recolor = 0, recolor_bg = 1, add_texture = 2, recolor_and_texture = 3 };

struct EditOp {
    EditKind kind = EditKind::recolor;
    int color_id = -1;                           // target color for recolor variants
    TextureKind texture = TextureKind::none;     // texture for texture variants
};

// Texture orientation is a deterministic function of the scene, so an editor
// conditioned on the input image can predict it.
inline int edit_texture_variant(const SceneParams& s) {
    return (static_cast<int>(s.shape) + s.fg_color_id) % 2;
}

inline SceneParams apply_edit(const SceneParams& s, const EditOp& e) {
    SceneParams out = s;
    switch (e.kind) {
        case EditKind::recolor:
            out.fg_color_id = e.color_id;
            break;
        case EditKind::recolor_bg:
            out.bg_color_id = e.color_id;
            break;
        case EditKind::add_texture:
            out.texture = e.texture;
            out.texture_variant = edit_texture_variant(s);
            break;
        case EditKind::recolor_and_texture:
            out.fg_color_id = e.color_id;
            out.texture = e.texture;
            out.texture_variant = edit_texture_variant(s);
            break;
    }
    return out;
}

}  // namespace world
}  // namespace advlab
