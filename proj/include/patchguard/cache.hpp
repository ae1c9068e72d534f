#pragma once

#include <cmath>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "patchguard/binary_io.hpp"
#include "patchguard/embedding.hpp"
#include "patchguard/error.hpp"
#include "patchguard/manifest.hpp"
#include "patchguard/similarity.hpp"

namespace patchguard {

enum class EmbeddingMode { grid, instance };

inline std::string_view to_string(EmbeddingMode m) { return m == EmbeddingMode::grid ? "grid" : "instance"; }

inline EmbeddingMode parse_mode(std::string_view s) {
    if (s == "grid") return EmbeddingMode::grid;
    if (s == "instance") return EmbeddingMode::instance;
    throw UsageError("unknown mode '" + std::string(s) + "' (expected grid|instance)");
}

// Copies v into out scaled to unit L2 norm. The norm is accumulated in double.
inline void normalize_into(std::span<const float> v, std::span<float> out) {
    const double n = l2_norm(v);
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(double{v[i]} / n);
}

inline std::vector<float> normalized(std::span<const float> v) {
    std::vector<float> out(v.size());
    normalize_into(v, out);
    return out;
}

struct CacheEntry {
    std::string frame_id;
    std::string experiment_id;
    FrameGeometry geometry;  // informational in instance mode
    std::size_t row_begin = 0;
    std::size_t row_count = 0;
    friend bool operator==(const CacheEntry&, const CacheEntry&) = default;
};

// The nominal embedding database. All vectors live in one row-major matrix so
// the similarity search can stream it; entries record which rows came from
// which frame and experiment.
class NominalCache {
public:
    NominalCache() = default;
    NominalCache(EmbeddingMode mode, std::uint32_t dim) : mode_(mode), dim_(dim) {}

    EmbeddingMode mode() const noexcept { return mode_; }
    std::uint32_t dim() const noexcept { return dim_; }
    bool normalized() const noexcept { return normalized_; }
    bool empty() const noexcept { return rows_.empty(); }
    std::size_t row_count() const noexcept { return dim_ == 0 ? 0 : rows_.size() / dim_; }
    const std::vector<CacheEntry>& entries() const noexcept { return entries_; }
    std::span<const float> matrix() const noexcept { return rows_; }
    std::span<const float> row(std::size_t i) const { return {rows_.data() + i * dim_, dim_}; }

    // Appends one frame's vectors (row-major, count x dim), L2-normalizing each.
    void add_entry(std::string frame_id, std::string experiment_id, const FrameGeometry& geometry,
                   std::span<const float> vectors) {
        if (experiment_id.empty()) throw ValidationError("cache entry " + frame_id + " has empty experiment_id");
        if (dim_ == 0 || vectors.size() % dim_ != 0)
            throw IncompatibleError("frame " + frame_id + ": vector block is not a multiple of cache dim " +
                                    std::to_string(dim_));
        CacheEntry e{std::move(frame_id), std::move(experiment_id), geometry, row_count(), vectors.size() / dim_};
        rows_.resize(rows_.size() + vectors.size());
        for (std::size_t k = 0; k < e.row_count; ++k) {
            auto src = vectors.subspan(k * dim_, dim_);
            validate_vector(src, "cache entry " + e.frame_id + " vector " + std::to_string(k));
            normalize_into(src, {rows_.data() + (e.row_begin + k) * dim_, dim_});
        }
        entries_.push_back(std::move(e));
    }

    // A new cache holding only the entries accepted by keep. Rows are copied verbatim.
    NominalCache subset(const std::function<bool(const CacheEntry&)>& keep) const {
        NominalCache out(mode_, dim_);
        out.normalized_ = normalized_;
        for (const auto& e : entries_) {
            if (!keep(e)) continue;
            CacheEntry copy = e;
            copy.row_begin = out.row_count();
            out.rows_.insert(out.rows_.end(), rows_.begin() + static_cast<std::ptrdiff_t>(e.row_begin * dim_),
                             rows_.begin() + static_cast<std::ptrdiff_t>((e.row_begin + e.row_count) * dim_));
            out.entries_.push_back(std::move(copy));
        }
        return out;
    }

    std::set<std::string> experiments() const {
        std::set<std::string> s;
        for (const auto& e : entries_) s.insert(e.experiment_id);
        return s;
    }

    void validate() const {
        std::size_t expect = 0;
        for (const auto& e : entries_) {
            if (e.experiment_id.empty()) throw ValidationError("cache entry " + e.frame_id + " has empty experiment_id");
            if (e.row_begin != expect) throw ValidationError("cache entry " + e.frame_id + " rows are not contiguous");
            expect += e.row_count;
        }
        if (expect * dim_ != rows_.size()) throw ValidationError("cache row count disagrees with entries");
        for (std::size_t i = 0; i < row_count(); ++i) {
            validate_vector(row(i), "cache row " + std::to_string(i));
            if (normalized_ && std::abs(l2_norm(row(i)) - 1.0) > 1e-5)
                throw ValidationError("cache row " + std::to_string(i) + " is not unit norm");
        }
    }

    friend bool operator==(const NominalCache&, const NominalCache&) = default;

private:
    friend std::vector<std::uint8_t> encode_cache(const NominalCache&);
    friend NominalCache decode_cache(std::span<const std::uint8_t>, const std::string&);

    EmbeddingMode mode_ = EmbeddingMode::grid;
    std::uint32_t dim_ = 0;
    bool normalized_ = true;
    std::vector<CacheEntry> entries_;
    std::vector<float> rows_;
};

// Vectors a frame contributes in the given mode (grid patches or instance embeddings).
inline std::vector<float> frame_vectors(const LoadedFrame& f, EmbeddingMode mode) {
    if (mode == EmbeddingMode::grid) return f.grid.data;
    std::vector<float> out;
    for (const auto& inst : f.instances->instances) out.insert(out.end(), inst.embedding.begin(), inst.embedding.end());
    return out;
}

inline std::uint32_t frame_dim(const LoadedFrame& f, EmbeddingMode mode) {
    return mode == EmbeddingMode::grid ? f.grid.dim : f.instances->dim;
}

inline NominalCache build_cache(std::span<const LoadedFrame> frames, EmbeddingMode mode) {
    if (frames.empty()) throw EmptyCacheError("no frames admitted");
    NominalCache cache(mode, frame_dim(frames.front(), mode));
    for (const auto& f : frames) {
        const auto d = frame_dim(f, mode);
        if (d != cache.dim())
            throw IncompatibleError("frame " + f.record->frame_id + " has dim " + std::to_string(d) +
                                    ", cache has dim " + std::to_string(cache.dim()));
        cache.add_entry(f.record->frame_id, f.record->experiment_id, f.grid.geometry, frame_vectors(f, mode));
    }
    if (cache.empty()) throw EmptyCacheError("admitted frames contribute no vectors");
    return cache;
}

inline std::vector<LoadedFrame> load_frames(const DatasetManifest& m, EmbeddingMode mode, bool nominal_only) {
    std::vector<LoadedFrame> out;
    for (const auto& f : m.frames) {
        if (nominal_only && f.is_anomalous) continue;
        out.push_back(load_frame(m, f, mode == EmbeddingMode::instance, false));
    }
    return out;
}

inline NominalCache build_cache(const DatasetManifest& m, EmbeddingMode mode, bool nominal_only) {
    const auto frames = load_frames(m, mode, nominal_only);
    if (frames.empty()) throw EmptyCacheError("manifest admits no frames" + std::string(nominal_only ? " (nominal only)" : ""));
    return build_cache(frames, mode);
}

// A read-only selection of cache entries. Leave-one-out scoring uses views that
// drop every entry of one experiment instead of copying the matrix.
class CacheView {
public:
    explicit CacheView(const NominalCache& cache) : cache_(&cache) {
        entry_ids_.resize(cache.entries().size());
        for (std::size_t i = 0; i < entry_ids_.size(); ++i) entry_ids_[i] = i;
    }
    CacheView(const NominalCache& cache, std::vector<std::size_t> entry_ids)
        : cache_(&cache), entry_ids_(std::move(entry_ids)) {}

    static CacheView excluding_experiment(const NominalCache& cache, std::string_view experiment_id) {
        std::vector<std::size_t> ids;
        for (std::size_t i = 0; i < cache.entries().size(); ++i)
            if (cache.entries()[i].experiment_id != experiment_id) ids.push_back(i);
        return {cache, std::move(ids)};
    }

    const NominalCache& cache() const noexcept { return *cache_; }
    const std::vector<std::size_t>& entry_ids() const noexcept { return entry_ids_; }
    const CacheEntry& entry(std::size_t k) const { return cache_->entries()[entry_ids_[k]]; }
    std::size_t size() const noexcept { return entry_ids_.size(); }

    std::size_t row_count() const {
        std::size_t n = 0;
        for (auto id : entry_ids_) n += cache_->entries()[id].row_count;
        return n;
    }

    // Row ranges of the selected entries, adjacent ranges merged.
    std::vector<RowRange> ranges() const {
        std::vector<RowRange> out;
        for (auto id : entry_ids_) {
            const auto& e = cache_->entries()[id];
            if (e.row_count == 0) continue;
            if (!out.empty() && out.back().end == e.row_begin)
                out.back().end += e.row_count;
            else
                out.push_back({e.row_begin, e.row_begin + e.row_count});
        }
        return out;
    }

private:
    const NominalCache* cache_;
    std::vector<std::size_t> entry_ids_;
};

// ---- cache file (".pcache") -------------------------------------------------
// magic "PCCH", version u8 = 1, mode u8, normalized u8, dim u16, entry count u32,
// then per entry: frame_id (u16 len + bytes), experiment_id (u16 len + bytes),
// grid_h u16, grid_w u16, patch_px u8, row count u32; then all rows as LE float32.

inline std::vector<std::uint8_t> encode_cache(const NominalCache& c) {
    ByteWriter w;
    w.bytes("PCCH");
    w.u8(1);
    w.u8(c.mode_ == EmbeddingMode::grid ? 0 : 1);
    w.u8(c.normalized_ ? 1 : 0);
    w.u16(static_cast<std::uint16_t>(c.dim_));
    w.u32(static_cast<std::uint32_t>(c.entries_.size()));
    for (const auto& e : c.entries_) {
        w.u16(static_cast<std::uint16_t>(e.frame_id.size()));
        w.bytes(e.frame_id);
        w.u16(static_cast<std::uint16_t>(e.experiment_id.size()));
        w.bytes(e.experiment_id);
        w.u16(static_cast<std::uint16_t>(e.geometry.grid_h));
        w.u16(static_cast<std::uint16_t>(e.geometry.grid_w));
        w.u8(static_cast<std::uint8_t>(e.geometry.patch_px));
        w.u32(static_cast<std::uint32_t>(e.row_count));
    }
    for (float x : c.rows_) w.f32(x);
    return w.take();
}

inline NominalCache decode_cache(std::span<const std::uint8_t> bytes, const std::string& source) {
    ByteReader r(bytes, source);
    if (bytes.size() < 4 || r.bytes(4) != "PCCH") throw FormatError(source + ": bad magic (expected PCCH)");
    if (r.u8() != 1) throw FormatError(source + ": unsupported cache version");
    const auto mode = r.u8();
    if (mode > 1) throw FormatError(source + ": bad mode byte");
    NominalCache c(mode == 0 ? EmbeddingMode::grid : EmbeddingMode::instance, 0);
    c.normalized_ = r.u8() != 0;
    c.dim_ = r.u16();
    if (c.dim_ == 0) throw FormatError(source + ": dim is zero");
    const auto n = r.u32();
    std::size_t rows = 0;
    for (std::uint32_t k = 0; k < n; ++k) {
        CacheEntry e;
        e.frame_id = r.bytes(r.u16());
        e.experiment_id = r.bytes(r.u16());
        e.geometry.grid_h = r.u16();
        e.geometry.grid_w = r.u16();
        e.geometry.patch_px = r.u8();
        e.row_begin = rows;
        e.row_count = r.u32();
        rows += e.row_count;
        c.entries_.push_back(std::move(e));
    }
    if (r.remaining() != rows * c.dim_ * 4)
        throw CorruptFileError(source + ": payload size disagrees with entry table");
    c.rows_.resize(rows * c.dim_);
    for (auto& x : c.rows_) x = r.f32();
    c.validate();
    return c;
}

inline NominalCache load_cache(const fs::path& path) { return decode_cache(read_file_bytes(path), path.string()); }
inline void save_cache(const NominalCache& c, const fs::path& path) { write_file_bytes(path, encode_cache(c)); }

}  // namespace patchguard
