#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "advlab/core/error.hpp"
#include "advlab/core/rng.hpp"
#include "advlab/core/tensor.hpp"

namespace advlab {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little,
              "array files are little-endian; big-endian hosts are not supported");

inline std::string read_file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed for " + path.string());
    return data;
}

inline void write_file_bytes(const fs::path& path, std::string_view data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create " + path.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

// write via a temp file in the same directory then rename, so readers never
// observe a partially written file
inline void write_file_atomic(const fs::path& path, std::string_view data) {
    static uint64_t counter = 0;
    fs::path tmp = path;
    tmp += ".tmp" + std::to_string(++counter) + "." + std::to_string(::getpid());
    write_file_bytes(tmp, data);
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw IoError("atomic rename to " + path.string() + " failed: " + ec.message());
    }
}

inline std::string tensor_to_f32le(const Tensor& t) {
    std::string out(t.data.size() * sizeof(float), '\0');
    std::memcpy(out.data(), t.data.data(), out.size());
    return out;
}

inline Tensor f32le_to_tensor(std::string_view bytes, std::vector<int> shape) {
    Tensor t(std::move(shape));
    if (bytes.size() != t.data.size() * sizeof(float))
        throw IntegrityError("array byte length " + std::to_string(bytes.size()) + " does not match shape " +
                             t.shape_str());
    std::memcpy(t.data.data(), bytes.data(), bytes.size());
    return t;
}

}  // namespace advlab
