#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "clfa/error.hpp"
#include "clfa/util.hpp"

// Single-file tensor container shared by checkpoints, rendered-image stores
// and backbone weight dumps:
//
//   bytes 0..3   magic "CLFB"
//   bytes 4..7   u32 LE manifest length
//   manifest     JSON: {"meta": {...}, "tensors": [{name, shape, offset}]}
//   blob         flat little-endian float32 data; offsets are byte positions
//                into the blob

namespace clfa {

constexpr char kContainerMagic[4] = {'C', 'L', 'F', 'B'};

struct TensorRecord {
    std::string name;
    std::vector<int> shape;
    std::vector<double> data;  // held as doubles, stored as float32

    std::size_t element_count() const {
        std::size_t n = 1;
        for (int e : shape) n *= static_cast<std::size_t>(e);
        return n;
    }
};

struct Container {
    nlohmann::json meta;
    std::vector<TensorRecord> tensors;

    const TensorRecord& find(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return t;
        raise(ErrorCode::ManifestMismatch, "tensor '" + name + "' not in container");
    }

    bool contains(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return true;
        return false;
    }
};

inline std::string write_container(const Container& c) {
    std::string blob;
    nlohmann::json manifest;
    manifest["meta"] = c.meta;
    manifest["tensors"] = nlohmann::json::array();
    for (const auto& t : c.tensors) {
        if (t.data.size() != t.element_count())
            raise(ErrorCode::ManifestMismatch, "tensor '" + t.name + "' data does not match shape");
        manifest["tensors"].push_back({{"name", t.name}, {"shape", t.shape}, {"offset", blob.size()}});
        for (double v : t.data) append_f32_le(blob, static_cast<float>(v));
    }
    std::string manifest_str = manifest.dump();
    std::string out;
    out.reserve(8 + manifest_str.size() + blob.size());
    out.append(kContainerMagic, 4);
    append_u32_le(out, static_cast<std::uint32_t>(manifest_str.size()));
    out += manifest_str;
    out += blob;
    return out;
}

inline Container read_container(const std::string& bytes) {
    if (bytes.size() < 8 || std::string_view(bytes.data(), 4) != std::string_view(kContainerMagic, 4))
        raise(ErrorCode::ManifestMismatch, "bad container magic");
    std::uint32_t mlen = read_u32_le(reinterpret_cast<const unsigned char*>(bytes.data()) + 4);
    if (bytes.size() < 8ull + mlen) raise(ErrorCode::TruncatedBlob, "container shorter than manifest length");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.substr(8, mlen));
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorCode::ManifestMismatch, "container manifest parse failure: " + std::string(e.what()));
    }
    const std::size_t blob_off = 8ull + mlen;
    const std::size_t blob_len = bytes.size() - blob_off;

    Container c;
    if (manifest.contains("meta")) c.meta = manifest["meta"];
    for (const auto& tj : manifest.at("tensors")) {
        TensorRecord t;
        t.name = tj.at("name").get<std::string>();
        t.shape = tj.at("shape").get<std::vector<int>>();
        std::size_t offset = tj.at("offset").get<std::size_t>();
        std::size_t count = t.element_count();
        if (offset + 4ull * count > blob_len)
            raise(ErrorCode::TruncatedBlob, "tensor '" + t.name + "' extends past end of blob");
        t.data.resize(count);
        const unsigned char* base = reinterpret_cast<const unsigned char*>(bytes.data()) + blob_off + offset;
        for (std::size_t i = 0; i < count; ++i) t.data[i] = read_f32_le(base + 4 * i);
        c.tensors.push_back(std::move(t));
    }
    return c;
}

inline void write_container_file(const Container& c, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCode::IoError, "cannot write " + path.string());
    std::string bytes = write_container(c);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Container read_container_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCode::MissingFile, "cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return read_container(bytes);
}

}  // namespace clfa
