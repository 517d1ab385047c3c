#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "advlab/core/io.hpp"
#include "advlab/core/sha256.hpp"
#include "advlab/core/tensor.hpp"

#include <json.hpp>

namespace advlab {

using ordered_json = nlohmann::ordered_json;

// A serialized artifact: a JSON manifest body plus named float32 arrays.
// Checkpoint directories on disk and store objects share this layout:
//   manifest.json  { schema_version, meta, params: [{name, shape, file, sha256}], content_hash }
//   p###_<name>.f32  raw little-endian float32, row-major
struct Payload {
    ordered_json meta;
    std::vector<std::pair<std::string, Tensor>> arrays;

    const Tensor& array(const std::string& name) const {
        for (auto& [n, t] : arrays)
            if (n == name) return t;
        throw IntegrityError("payload missing array " + name);
    }
    bool has_array(const std::string& name) const {
        for (auto& [n, t] : arrays)
            if (n == name) return true;
        return false;
    }
};

namespace storedetail {

inline std::string sanitize(const std::string& name) {
    std::string out;
    for (char c : name) out += (std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
    return out;
}

inline std::string array_file_name(size_t index, const std::string& name) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "p%03zu_", index);
    return buf + sanitize(name) + ".f32";
}

}  // namespace storedetail

inline std::string payload_content_hash(const Payload& p) {
    Sha256 h;
    h.update("advlab-object\n");
    h.update(p.meta.dump());
    h.update("\n");
    for (const auto& [name, t] : p.arrays) {
        h.update(name);
        h.update("\0", 1);
        for (int d : t.shape) {
            uint32_t v = static_cast<uint32_t>(d);
            h.update(&v, sizeof(v));
        }
        h.update(t.data.data(), t.data.size() * sizeof(float));
    }
    return h.hex_digest();
}

// Writes a payload as a checkpoint directory. All files land under a temp
// sibling first and the directory is renamed into place, so a torn write
// never leaves a loadable-but-corrupt entry.
inline std::string write_payload_dir(const fs::path& dir, const Payload& p) {
    const std::string content_hash = payload_content_hash(p);
    ordered_json manifest;
    manifest["schema_version"] = "advlab.checkpoint/1";
    manifest["meta"] = p.meta;
    manifest["params"] = ordered_json::array();
    for (size_t i = 0; i < p.arrays.size(); ++i) {
        const auto& [name, t] = p.arrays[i];
        ordered_json e;
        e["name"] = name;
        e["shape"] = t.shape;
        e["file"] = storedetail::array_file_name(i, name);
        e["sha256"] = sha256_hex(tensor_to_f32le(t));
        manifest["params"].push_back(e);
    }
    manifest["content_hash"] = content_hash;

    fs::path tmp = dir;
    tmp += ".tmp" + std::to_string(::getpid());
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    write_file_bytes(tmp / "manifest.json", manifest.dump(2) + "\n");
    for (size_t i = 0; i < p.arrays.size(); ++i)
        write_file_bytes(tmp / storedetail::array_file_name(i, p.arrays[i].first),
                         tensor_to_f32le(p.arrays[i].second));
    fs::remove_all(dir);
    fs::rename(tmp, dir);
    return content_hash;
}

inline Payload read_payload_dir(const fs::path& dir) {
    ordered_json manifest;
    try {
        manifest = ordered_json::parse(read_file_bytes(dir / "manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError("corrupt manifest in " + dir.string() + ": " + e.what());
    }
    if (manifest.value("schema_version", "") != "advlab.checkpoint/1")
        throw IntegrityError("unsupported checkpoint schema in " + dir.string());
    Payload p;
    p.meta = manifest.at("meta");
    for (const auto& e : manifest.at("params")) {
        const std::string name = e.at("name").get<std::string>();
        const std::vector<int> shape = e.at("shape").get<std::vector<int>>();
        const std::string bytes = read_file_bytes(dir / e.at("file").get<std::string>());
        if (sha256_hex(bytes) != e.at("sha256").get<std::string>())
            throw IntegrityError("array " + name + " failed its hash check in " + dir.string());
        p.arrays.emplace_back(name, f32le_to_tensor(bytes, shape));
    }
    const std::string expect = manifest.at("content_hash").get<std::string>();
    if (payload_content_hash(p) != expect)
        throw IntegrityError("content hash mismatch in " + dir.string());
    return p;
}

// Content-addressed artifact store: objects/<hash>/ holds payload dirs,
// refs/<key> maps derivation keys to hashes. Writes are atomic renames.
class ArtifactStore {
public:
    explicit ArtifactStore(fs::path root) : root_(std::move(root)) {
        fs::create_directories(root_ / "objects");
        fs::create_directories(root_ / "refs");
    }

    const fs::path& root() const { return root_; }

    std::string put(const Payload& p) {
        const std::string hash = payload_content_hash(p);
        const fs::path dir = root_ / "objects" / hash;
        if (!fs::exists(dir)) write_payload_dir(dir, p);
        return hash;
    }

    bool has(const std::string& hash) const { return fs::exists(root_ / "objects" / hash / "manifest.json"); }

    Payload get(const std::string& hash) const {
        const fs::path dir = root_ / "objects" / hash;
        if (!fs::exists(dir)) throw IntegrityError("store has no object " + hash);
        Payload p = read_payload_dir(dir);
        if (payload_content_hash(p) != hash) throw IntegrityError("object " + hash + " failed verification");
        return p;
    }

    void put_ref(const std::string& key, const std::string& hash) {
        write_file_atomic(root_ / "refs" / storedetail::sanitize(key), hash);
    }

    std::optional<std::string> get_ref(const std::string& key) const {
        const fs::path p = root_ / "refs" / storedetail::sanitize(key);
        if (!fs::exists(p)) return std::nullopt;
        return read_file_bytes(p);
    }

private:
    fs::path root_;
};

inline std::string save_checkpoint(ArtifactStore& store, const Payload& p) { return store.put(p); }
inline Payload load_checkpoint(const ArtifactStore& store, const std::string& hash) { return store.get(hash); }

}  // namespace advlab
