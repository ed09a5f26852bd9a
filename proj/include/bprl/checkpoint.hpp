#pragma once
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "bprl/error.hpp"
#include "bprl/nn.hpp"

namespace bprl {

// On-disk model format, little-endian regardless of host:
//   magic "BPRL" | version u32 | arch tag u8 (0 classifier, 1 qra-generator)
//   | layer count u32 | widths u32 each | params f32 each (canonical order)
// A JSON sidecar at <path>.json carries seed, config hash, role label and a
// parameter checksum; the binary itself holds nothing non-reproducible.

enum class CkptKind : std::uint8_t { classifier = 0, qra_generator = 1 };

constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
    std::uint64_t seed = 0;
    std::string config_hash;
    std::string role;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
    out.push_back(static_cast<char>((v >> 16) & 0xFF));
    out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

inline void put_f32(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof(bits));
    put_u32(out, bits);
}

inline std::uint32_t get_u32(const std::string& in, std::size_t& off) {
    if (off + 4 > in.size()) throw InvalidInput("checkpoint: truncated file");
    const auto b = [&](int i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(in[off + i])); };
    const std::uint32_t v = b(0) | (b(1) << 8) | (b(2) << 16) | (b(3) << 24);
    off += 4;
    return v;
}

inline float get_f32(const std::string& in, std::size_t& off) {
    const std::uint32_t bits = get_u32(in, off);
    float f;
    std::memcpy(&f, &bits, sizeof(f));
    return f;
}

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xCBF29CE484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[i] = digits[v & 0xF];
        v >>= 4;
    }
    return s;
}

} // namespace detail

inline std::string fnv1a_hex(const std::string& bytes) {
    return detail::hex64(detail::fnv1a(bytes.data(), bytes.size()));
}

inline std::string encode_checkpoint(const Model& model, CkptKind kind) {
    model.validate();
    std::string out;
    out.reserve(16 + model.params.size() * 4);
    out += "BPRL";
    detail::put_u32(out, kCheckpointVersion);
    out.push_back(static_cast<char>(kind));
    detail::put_u32(out, static_cast<std::uint32_t>(model.arch.widths.size()));
    for (int w : model.arch.widths) detail::put_u32(out, static_cast<std::uint32_t>(w));
    for (float p : model.params.values) detail::put_f32(out, p);
    return out;
}

struct LoadedCheckpoint {
    Model model;
    CkptKind kind = CkptKind::classifier;
    CheckpointMeta meta;
};

inline LoadedCheckpoint decode_checkpoint(const std::string& bytes) {
    if (bytes.size() < 13 || bytes.compare(0, 4, "BPRL") != 0) {
        throw InvalidInput("checkpoint: bad magic");
    }
    std::size_t off = 4;
    const std::uint32_t version = detail::get_u32(bytes, off);
    if (version != kCheckpointVersion) {
        throw InvalidInput("checkpoint: unsupported version " + std::to_string(version));
    }
    const auto kind = static_cast<CkptKind>(static_cast<unsigned char>(bytes[off++]));
    if (kind != CkptKind::classifier && kind != CkptKind::qra_generator) {
        throw InvalidInput("checkpoint: unknown arch tag");
    }
    const std::uint32_t layers = detail::get_u32(bytes, off);
    if (layers < 2 || layers > 64) throw InvalidInput("checkpoint: implausible layer count");
    LoadedCheckpoint out;
    out.kind = kind;
    out.model.arch.widths.resize(layers);
    for (auto& w : out.model.arch.widths) w = static_cast<int>(detail::get_u32(bytes, off));
    out.model.arch.validate();
    const std::size_t n = out.model.arch.param_count();
    if (bytes.size() - off != n * 4) throw InvalidInput("checkpoint: parameter payload size mismatch");
    out.model.params = ParamVector(n);
    for (std::size_t i = 0; i < n; ++i) out.model.params[i] = detail::get_f32(bytes, off);
    return out;
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw InvalidInput("cannot open for writing: " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw InvalidInput("write failed: " + path);
}

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InvalidInput("cannot open: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return bytes;
}

inline void save_checkpoint(const std::string& path, const Model& model, CkptKind kind,
                            const CheckpointMeta& meta, const std::string& timestamp = "") {
    const std::string bytes = encode_checkpoint(model, kind);
    write_file_bytes(path, bytes);
    nlohmann::json sidecar;
    sidecar["seed"] = meta.seed;
    sidecar["config_hash"] = meta.config_hash;
    sidecar["role"] = meta.role;
    sidecar["param_checksum"] = fnv1a_hex(bytes);
    if (!timestamp.empty()) sidecar["created_at"] = timestamp;
    write_file_bytes(path + ".json", sidecar.dump(2) + "\n");
}

// Loads and integrity-checks a checkpoint. If expect_config_hash is
// non-empty and a sidecar is present, the recorded hash must match; this is
// how the CLI refuses checkpoints produced under a different experiment.
inline LoadedCheckpoint load_checkpoint(const std::string& path,
                                        const std::string& expect_config_hash = "") {
    const std::string bytes = read_file_bytes(path);
    LoadedCheckpoint out = decode_checkpoint(bytes);
    std::ifstream side(path + ".json");
    if (side) {
        nlohmann::json sidecar;
        try {
            side >> sidecar;
        } catch (const nlohmann::json::exception& e) {
            throw InvalidInput("checkpoint sidecar unreadable: " + path + ".json: " + e.what());
        }
        out.meta.seed = sidecar.value("seed", std::uint64_t{0});
        out.meta.config_hash = sidecar.value("config_hash", std::string{});
        out.meta.role = sidecar.value("role", std::string{});
        const std::string recorded = sidecar.value("param_checksum", std::string{});
        if (!recorded.empty() && recorded != fnv1a_hex(bytes)) {
            throw InvalidInput("checkpoint: parameter checksum mismatch in " + path);
        }
        if (!expect_config_hash.empty() && !out.meta.config_hash.empty() &&
            out.meta.config_hash != expect_config_hash) {
            throw InvalidInput("checkpoint: config hash mismatch for " + path +
                               " (checkpoint " + out.meta.config_hash + ", config " +
                               expect_config_hash + ")");
        }
    }
    return out;
}

} // namespace bprl
