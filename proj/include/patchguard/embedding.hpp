#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "patchguard/binary_io.hpp"
#include "patchguard/error.hpp"
#include "patchguard/mask.hpp"

namespace patchguard {

inline constexpr std::uint32_t kDefaultGridSide = 16;
inline constexpr std::uint32_t kDefaultDim = 384;
inline constexpr std::uint32_t kDefaultPatchPx = 14;
inline constexpr std::size_t kGridHeaderBytes = 13;
inline constexpr const char* kResidualLabel = "residual";

// Pixel geometry shared by a grid, its instance masks, and its GT mask.
struct FrameGeometry {
    std::uint32_t grid_h = kDefaultGridSide;
    std::uint32_t grid_w = kDefaultGridSide;
    std::uint32_t patch_px = kDefaultPatchPx;

    std::uint32_t pixel_height() const noexcept { return grid_h * patch_px; }
    std::uint32_t pixel_width() const noexcept { return grid_w * patch_px; }
    std::size_t patch_count() const noexcept { return std::size_t{grid_h} * grid_w; }
    friend bool operator==(const FrameGeometry&, const FrameGeometry&) = default;
};

inline double l2_norm(std::span<const float> v) {
    double s = 0.0;
    for (float x : v) s += double{x} * double{x};
    return std::sqrt(s);
}

// Throws ValidationError if v has a non-finite entry or zero norm.
inline void validate_vector(std::span<const float> v, const std::string& what) {
    for (float x : v)
        if (!std::isfinite(x)) throw ValidationError(what + " has a non-finite entry");
    if (l2_norm(v) == 0.0) throw ValidationError(what + " has zero L2 norm");
}

// One frame's h x w patch embeddings, each of length dim, stored patch-major.
struct PatchEmbeddingGrid {
    std::string frame_id;
    FrameGeometry geometry;
    std::uint32_t dim = kDefaultDim;
    std::vector<float> data;

    std::size_t patch_count() const noexcept { return geometry.patch_count(); }
    std::span<const float> patch(std::size_t j) const { return {data.data() + j * dim, dim}; }
    std::span<float> patch(std::size_t j) { return {data.data() + j * dim, dim}; }

    void validate() const {
        if (geometry.grid_h == 0 || geometry.grid_w == 0 || dim == 0 || geometry.patch_px == 0)
            throw ValidationError("grid " + frame_id + ": dimensions must be positive");
        if (data.size() != patch_count() * dim)
            throw ValidationError("grid " + frame_id + ": data length " + std::to_string(data.size()) +
                                  " != grid_h*grid_w*dim = " + std::to_string(patch_count() * dim));
        for (std::size_t j = 0; j < patch_count(); ++j)
            validate_vector(patch(j), "grid " + frame_id + " patch " + std::to_string(j));
    }

    friend bool operator==(const PatchEmbeddingGrid&, const PatchEmbeddingGrid&) = default;
};

inline std::vector<std::uint8_t> encode_grid(const PatchEmbeddingGrid& g) {
    g.validate();
    if (g.geometry.grid_h > 0xFFFF || g.geometry.grid_w > 0xFFFF || g.dim > 0xFFFF || g.geometry.patch_px > 0xFF)
        throw ValidationError("grid " + g.frame_id + ": dimensions exceed header field widths");
    ByteWriter w;
    w.reserve(kGridHeaderBytes + g.data.size() * 4);
    w.bytes("PEMB");
    w.u8(1);  // version
    w.u8(0);  // dtype float32
    w.u16(static_cast<std::uint16_t>(g.geometry.grid_h));
    w.u16(static_cast<std::uint16_t>(g.geometry.grid_w));
    w.u16(static_cast<std::uint16_t>(g.dim));
    w.u8(static_cast<std::uint8_t>(g.geometry.patch_px));
    for (float x : g.data) w.f32(x);
    return w.take();
}

inline PatchEmbeddingGrid decode_grid(std::span<const std::uint8_t> bytes, const std::string& source,
                                      std::string frame_id) {
    ByteReader r(bytes, source);
    if (bytes.size() < 4 || r.bytes(4) != "PEMB") throw FormatError(source + ": bad magic (expected PEMB)");
    const auto version = r.u8();
    if (version != 1) throw FormatError(source + ": unsupported version " + std::to_string(version));
    const auto dtype = r.u8();
    if (dtype != 0) throw FormatError(source + ": unsupported dtype " + std::to_string(dtype));
    PatchEmbeddingGrid g;
    g.frame_id = std::move(frame_id);
    g.geometry.grid_h = r.u16();
    g.geometry.grid_w = r.u16();
    g.dim = r.u16();
    g.geometry.patch_px = r.u8();
    if (g.geometry.grid_h == 0 || g.geometry.grid_w == 0 || g.dim == 0 || g.geometry.patch_px == 0)
        throw FormatError(source + ": header has a zero dimension");
    const std::size_t n = g.patch_count() * g.dim;
    if (r.remaining() != n * 4)
        throw CorruptFileError(source + ": payload is " + std::to_string(r.remaining()) + " bytes, header implies " +
                               std::to_string(n * 4));
    g.data.resize(n);
    for (auto& x : g.data) x = r.f32();
    g.validate();
    return g;
}

inline PatchEmbeddingGrid load_grid(const fs::path& path, std::optional<std::string> frame_id = std::nullopt) {
    return decode_grid(read_file_bytes(path), path.string(), frame_id.value_or(path.stem().string()));
}

// Validates before touching the filesystem, so an invalid grid never produces a file.
inline void save_grid(const PatchEmbeddingGrid& g, const fs::path& path) { write_file_bytes(path, encode_grid(g)); }

// ---- instances ------------------------------------------------------------

struct Instance {
    BinaryMask mask;
    std::vector<float> embedding;
    std::optional<std::string> label;
    friend bool operator==(const Instance&, const Instance&) = default;
};

struct InstanceSet {
    std::string frame_id;
    FrameGeometry geometry;
    std::uint32_t dim = kDefaultDim;
    std::vector<Instance> instances;
    bool includes_residual = false;

    void validate() const {
        for (std::size_t k = 0; k < instances.size(); ++k) {
            const auto& inst = instances[k];
            const auto what = "instances " + frame_id + " #" + std::to_string(k);
            if (inst.embedding.size() != dim)
                throw ValidationError(what + ": embedding length " + std::to_string(inst.embedding.size()) +
                                      " != dim " + std::to_string(dim));
            validate_vector(inst.embedding, what);
            if (inst.mask.height() != geometry.pixel_height() || inst.mask.width() != geometry.pixel_width())
                throw ValidationError(what + ": mask shape does not match the frame's pixel dimensions");
        }
    }

    friend bool operator==(const InstanceSet&, const InstanceSet&) = default;
};

inline std::vector<std::uint8_t> encode_instances(const InstanceSet& s) {
    s.validate();
    if (s.dim > 0xFFFF) throw ValidationError("instances " + s.frame_id + ": dim exceeds u16");
    ByteWriter w;
    w.bytes("IEMB");
    w.u8(1);
    w.u16(static_cast<std::uint16_t>(s.dim));
    w.u32(static_cast<std::uint32_t>(s.instances.size()));
    for (const auto& inst : s.instances) {
        const std::string label = inst.label.value_or("");
        if (label.size() > 0xFFFF) throw ValidationError("instance label too long");
        w.u16(static_cast<std::uint16_t>(label.size()));
        w.bytes(label);
        const auto rle = mask_to_rle(inst.mask);
        w.u32(static_cast<std::uint32_t>(rle.runs.size()));
        for (const auto& run : rle.runs) {
            w.u32(run.start);
            w.u32(run.length);
        }
        for (float x : inst.embedding) w.f32(x);
    }
    return w.take();
}

// Instance files carry no pixel dimensions; the caller supplies the frame geometry
// (normally read from the companion grid file).
inline InstanceSet decode_instances(std::span<const std::uint8_t> bytes, const std::string& source,
                                    std::string frame_id, const FrameGeometry& geometry) {
    ByteReader r(bytes, source);
    if (bytes.size() < 4 || r.bytes(4) != "IEMB") throw FormatError(source + ": bad magic (expected IEMB)");
    const auto version = r.u8();
    if (version != 1) throw FormatError(source + ": unsupported version " + std::to_string(version));
    InstanceSet s;
    s.frame_id = std::move(frame_id);
    s.geometry = geometry;
    s.dim = r.u16();
    if (s.dim == 0) throw FormatError(source + ": dim is zero");
    const auto count = r.u32();
    for (std::uint32_t k = 0; k < count; ++k) {
        Instance inst;
        const auto label_len = r.u16();
        auto label = r.bytes(label_len);
        if (!label.empty()) inst.label = std::move(label);
        RleMask rle{geometry.pixel_height(), geometry.pixel_width(), {}};
        const auto runs = r.u32();
        r.need(std::size_t{runs} * 8);
        rle.runs.reserve(runs);
        for (std::uint32_t i = 0; i < runs; ++i) {
            const auto start = r.u32();
            const auto length = r.u32();
            rle.runs.push_back({start, length});
        }
        inst.mask = rle_to_mask(rle, source + " instance " + std::to_string(k));
        r.need(std::size_t{s.dim} * 4);
        inst.embedding.resize(s.dim);
        for (auto& x : inst.embedding) x = r.f32();
        if (inst.label && *inst.label == kResidualLabel) s.includes_residual = true;
        s.instances.push_back(std::move(inst));
    }
    if (r.remaining() != 0)
        throw CorruptFileError(source + ": " + std::to_string(r.remaining()) + " trailing bytes");
    s.validate();
    return s;
}

inline InstanceSet load_instances(const fs::path& path, const FrameGeometry& geometry,
                                  std::optional<std::string> frame_id = std::nullopt) {
    return decode_instances(read_file_bytes(path), path.string(), frame_id.value_or(path.stem().string()), geometry);
}

inline void save_instances(const InstanceSet& s, const fs::path& path) {
    write_file_bytes(path, encode_instances(s));
}

}  // namespace patchguard
