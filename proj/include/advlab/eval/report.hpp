#pragma once

#include <string>
#include <vector>

#include "advlab/core/io.hpp"
#include "advlab/core/png.hpp"

#include <json.hpp>

namespace advlab {
namespace evalh {

using ordered_json = nlohmann::ordered_json;

// exact attack-success count; the float value is derived, never stored alone
struct Ratio {
    int64_t num = 0;
    int64_t den = 0;
    double value() const { return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den); }
};

struct ReportRow {
    std::string method;
    std::string defense;
    std::string concept_name;
    std::string params;  // canonical "k=v;k=v" string, no commas
    Ratio asr;
    bool failed = false;
    std::string error;
};

struct ReportTable {
    std::string name;
    std::vector<ReportRow> rows;
    ordered_json metadata;  // seeds, config/artifact hashes, version
};

inline std::string format_asr(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

inline std::string report_to_csv(const ReportTable& t) {
    std::string s = "method,defense,concept,params,flagged,n,asr,failed,error\n";
    for (const auto& r : t.rows) {
        s += r.method + "," + r.defense + "," + r.concept_name + "," + r.params + "," +
             std::to_string(r.asr.num) + "," + std::to_string(r.asr.den) + "," + format_asr(r.asr.value()) +
             "," + (r.failed ? "1" : "0") + "," + r.error + "\n";
    }
    return s;
}

inline ordered_json report_to_json(const ReportTable& t) {
    ordered_json j;
    j["schema_version"] = "advlab.report/1";
    j["name"] = t.name;
    j["metadata"] = t.metadata;
    j["rows"] = ordered_json::array();
    for (const auto& r : t.rows) {
        ordered_json e;
        e["method"] = r.method;
        e["defense"] = r.defense;
        e["concept"] = r.concept_name;
        e["params"] = r.params;
        e["flagged"] = r.asr.num;
        e["n"] = r.asr.den;
        e["asr"] = r.asr.value();
        e["failed"] = r.failed;
        e["error"] = r.error;
        j["rows"].push_back(e);
    }
    return j;
}

inline ReportTable report_from_json(const ordered_json& j) {
    if (j.value("schema_version", "") != "advlab.report/1") throw IntegrityError("unsupported report schema");
    ReportTable t;
    t.name = j.at("name").get<std::string>();
    t.metadata = j.at("metadata");
    for (const auto& e : j.at("rows")) {
        ReportRow r;
        r.method = e.at("method").get<std::string>();
        r.defense = e.at("defense").get<std::string>();
        r.concept_name = e.at("concept").get<std::string>();
        r.params = e.at("params").get<std::string>();
        r.asr.num = e.at("flagged").get<int64_t>();
        r.asr.den = e.at("n").get<int64_t>();
        r.failed = e.at("failed").get<bool>();
        r.error = e.at("error").get<std::string>();
        t.rows.push_back(std::move(r));
    }
    return t;
}

// ---------------------------------------------------------------------------
// bar chart rendering (3x5 pixel font, deterministic bytes)
// ---------------------------------------------------------------------------

namespace plotdetail {

inline uint16_t glyph_bits(char c) {
    auto g = [](int r0, int r1, int r2, int r3, int r4) {
        return static_cast<uint16_t>((r0 << 12) | (r1 << 9) | (r2 << 6) | (r3 << 3) | r4);
    };
    switch (std::tolower(static_cast<unsigned char>(c))) {
        case '0': return g(7, 5, 5, 5, 7);
        case '1': return g(2, 6, 2, 2, 7);
        case '2': return g(7, 1, 7, 4, 7);
        case '3': return g(7, 1, 7, 1, 7);
        case '4': return g(5, 5, 7, 1, 1);
        case '5': return g(7, 4, 7, 1, 7);
        case '6': return g(7, 4, 7, 5, 7);
        case '7': return g(7, 1, 1, 2, 2);
        case '8': return g(7, 5, 7, 5, 7);
        case '9': return g(7, 5, 7, 1, 7);
        case 'a': return g(2, 5, 7, 5, 5);
        case 'b': return g(6, 5, 6, 5, 6);
        case 'c': return g(3, 4, 4, 4, 3);
        case 'd': return g(6, 5, 5, 5, 6);
        case 'e': return g(7, 4, 6, 4, 7);
        case 'f': return g(7, 4, 6, 4, 4);
        case 'g': return g(3, 4, 5, 5, 3);
        case 'h': return g(5, 5, 7, 5, 5);
        case 'i': return g(7, 2, 2, 2, 7);
        case 'j': return g(1, 1, 1, 5, 2);
        case 'k': return g(5, 6, 4, 6, 5);
        case 'l': return g(4, 4, 4, 4, 7);
        case 'm': return g(5, 7, 7, 5, 5);
        case 'n': return g(6, 5, 5, 5, 5);
        case 'o': return g(2, 5, 5, 5, 2);
        case 'p': return g(6, 5, 6, 4, 4);
        case 'q': return g(2, 5, 5, 6, 3);
        case 'r': return g(6, 5, 6, 6, 5);
        case 's': return g(3, 4, 2, 1, 6);
        case 't': return g(7, 2, 2, 2, 2);
        case 'u': return g(5, 5, 5, 5, 7);
        case 'v': return g(5, 5, 5, 5, 2);
        case 'w': return g(5, 5, 7, 7, 5);
        case 'x': return g(5, 5, 2, 5, 5);
        case 'y': return g(5, 5, 2, 2, 2);
        case 'z': return g(7, 1, 2, 4, 7);
        case '_': return g(0, 0, 0, 0, 7);
        case '-': return g(0, 0, 7, 0, 0);
        case '.': return g(0, 0, 0, 0, 2);
        case '/': return g(1, 1, 2, 4, 4);
        case '=': return g(0, 7, 0, 7, 0);
        case ':': return g(0, 2, 0, 2, 0);
        case '%': return g(5, 1, 2, 4, 5);
        default: return 0;
    }
}

struct Canvas {
    int w, h;
    std::vector<uint8_t> px;  // RGB
    Canvas(int width, int height) : w(width), h(height), px(static_cast<size_t>(width) * height * 3, 255) {}

    void set(int x, int y, uint8_t r, uint8_t g, uint8_t b) {
        if (x < 0 || x >= w || y < 0 || y >= h) return;
        const size_t i = (static_cast<size_t>(y) * w + x) * 3;
        px[i] = r;
        px[i + 1] = g;
        px[i + 2] = b;
    }

    void fill_rect(int x0, int y0, int x1, int y1, uint8_t r, uint8_t g, uint8_t b) {
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) set(x, y, r, g, b);
    }

    void text(int x, int y, const std::string& s, uint8_t r = 20, uint8_t g = 20, uint8_t b = 20) {
        int cx = x;
        for (char c : s) {
            const uint16_t bits = glyph_bits(c);
            for (int row = 0; row < 5; ++row) {
                const int rowbits = (bits >> (12 - 3 * row)) & 7;
                for (int col = 0; col < 3; ++col)
                    if (rowbits & (4 >> col)) set(cx + col, y + row, r, g, b);
            }
            cx += 4;
        }
    }
};

}  // namespace plotdetail

// one horizontal bar per row: label | bar scaled to ASR | value
inline std::string render_report_chart(const ReportTable& t) {
    const int label_w = 300, bar_w = 260, row_h = 9;
    const int w = label_w + bar_w + 60;
    const int h = 18 + row_h * std::max<int>(1, static_cast<int>(t.rows.size())) + 8;
    plotdetail::Canvas cv(w, h);
    cv.text(4, 4, t.name);
    cv.fill_rect(0, 12, w, 13, 160, 160, 160);
    int y = 16;
    for (const auto& r : t.rows) {
        std::string label = r.method + "/" + r.defense + "/" + r.concept_name;
        if (!r.params.empty()) label += "/" + r.params;
        if (label.size() > 72) label = label.substr(0, 72);
        cv.text(4, y + 1, label);
        if (r.failed) {
            cv.text(label_w + 4, y + 1, "failed", 200, 30, 30);
        } else {
            const int len = static_cast<int>(r.asr.value() * bar_w);
            cv.fill_rect(label_w, y, label_w + len, y + row_h - 2, 70, 110, 200);
            cv.text(label_w + bar_w + 6, y + 1, format_asr(r.asr.value()));
        }
        y += row_h;
    }
    return encode_png(cv.w, cv.h, 3, cv.px);
}

// report.csv + report.json + plots/<name>.png + provenance.json; bytes are a
// pure function of the table contents
inline void emit_report(const ReportTable& t, const fs::path& dir) {
    fs::create_directories(dir / "plots");
    write_file_atomic(dir / "report.csv", report_to_csv(t));
    write_file_atomic(dir / "report.json", report_to_json(t).dump(2) + "\n");
    write_file_atomic(dir / "plots" / (t.name + ".png"), render_report_chart(t));
    ordered_json prov;
    prov["schema_version"] = "advlab.provenance/1";
    prov["table"] = t.name;
    prov["metadata"] = t.metadata;
    write_file_atomic(dir / "provenance.json", prov.dump(2) + "\n");
}

}  // namespace evalh
}  // namespace advlab
