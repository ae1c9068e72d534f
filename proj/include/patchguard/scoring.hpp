#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "patchguard/cache.hpp"
#include "patchguard/embedding.hpp"
#include "patchguard/error.hpp"
#include "patchguard/manifest.hpp"
#include "patchguard/mask.hpp"
#include "patchguard/parallel.hpp"
#include "patchguard/similarity.hpp"

namespace patchguard {

// How element scores collapse into one frame score.
//   per_patch_max: max over elements of the per-element nearest-neighbour dissimilarity.
//   eq1_literal:   negated best similarity over all (query, cache) pairs, i.e. the min element score.
enum class FrameScoreRule { per_patch_max, eq1_literal };

inline std::string_view to_string(FrameScoreRule r) {
    return r == FrameScoreRule::per_patch_max ? "per-patch-max" : "eq1-literal";
}

inline FrameScoreRule parse_frame_score_rule(std::string_view s) {
    if (s == "per-patch-max") return FrameScoreRule::per_patch_max;
    if (s == "eq1-literal") return FrameScoreRule::eq1_literal;
    throw UsageError("unknown frame score rule '" + std::string(s) + "'");
}

struct ScoreMap {
    std::string frame_id;
    EmbeddingMode mode = EmbeddingMode::grid;
    FrameGeometry geometry;
    std::vector<float> scores;  // row-major grid scores, or one per instance
    float frame_score = -1.0f;
    std::vector<std::string> warnings;

    friend bool operator==(const ScoreMap&, const ScoreMap&) = default;
};

inline float collapse_frame_score(std::span<const float> scores, FrameScoreRule rule) {
    if (scores.empty()) return -1.0f;
    return rule == FrameScoreRule::per_patch_max ? *std::max_element(scores.begin(), scores.end())
                                                 : *std::min_element(scores.begin(), scores.end());
}

struct ScoreOptions {
    unsigned workers = 1;
    FrameScoreRule rule = FrameScoreRule::per_patch_max;
};

namespace detail {

inline void check_cache(const CacheView& view, EmbeddingMode mode, std::uint32_t dim, const std::string& frame_id) {
    const auto& c = view.cache();
    if (c.mode() != mode)
        throw IncompatibleError("frame " + frame_id + ": cache mode is " + std::string(to_string(c.mode())) +
                                ", expected " + std::string(to_string(mode)));
    if (c.dim() != dim)
        throw IncompatibleError("frame " + frame_id + ": query dim " + std::to_string(dim) + " != cache dim " +
                                std::to_string(c.dim()));
    if (!c.normalized()) throw ValidationError("cache is not normalized");
    if (view.row_count() == 0) throw EmptyCacheError("no cache vectors available to score frame " + frame_id);
}

// Scores = -(best cosine), clamped to [-1, 1] against float rounding at the ends.
inline std::vector<float> dissimilarities(std::vector<float> unit_queries, std::uint32_t dim, const CacheView& view,
                                          unsigned workers) {
    const auto ranges = view.ranges();
    auto best = max_cosine(unit_queries, view.cache().matrix(), dim, ranges, workers);
    for (auto& b : best) b = std::clamp(-b, -1.0f, 1.0f);
    return best;
}

}  // namespace detail

inline ScoreMap score_patches(const PatchEmbeddingGrid& query, const CacheView& view, const ScoreOptions& opt = {}) {
    detail::check_cache(view, EmbeddingMode::grid, query.dim, query.frame_id);
    std::vector<float> unit(query.data.size());
    for (std::size_t j = 0; j < query.patch_count(); ++j) {
        validate_vector(query.patch(j), "grid " + query.frame_id + " patch " + std::to_string(j));
        normalize_into(query.patch(j), {unit.data() + j * query.dim, query.dim});
    }
    ScoreMap sm;
    sm.frame_id = query.frame_id;
    sm.mode = EmbeddingMode::grid;
    sm.geometry = query.geometry;
    sm.scores = detail::dissimilarities(std::move(unit), query.dim, view, opt.workers);
    sm.frame_score = collapse_frame_score(sm.scores, opt.rule);
    return sm;
}

inline ScoreMap score_patches(const PatchEmbeddingGrid& query, const NominalCache& cache, const ScoreOptions& opt = {}) {
    return score_patches(query, CacheView(cache), opt);
}

inline ScoreMap score_instances(const InstanceSet& query, const CacheView& view, const ScoreOptions& opt = {}) {
    ScoreMap sm;
    sm.frame_id = query.frame_id;
    sm.mode = EmbeddingMode::instance;
    sm.geometry = query.geometry;
    if (query.instances.empty()) {
        // No objects means no anomaly evidence; surfaced so segmentation failures stay auditable.
        sm.frame_score = -1.0f;
        sm.warnings.push_back("frame " + query.frame_id + " has no instances; scored as nominal (-1)");
        return sm;
    }
    detail::check_cache(view, EmbeddingMode::instance, query.dim, query.frame_id);
    std::vector<float> unit(query.instances.size() * query.dim);
    for (std::size_t k = 0; k < query.instances.size(); ++k) {
        const auto& e = query.instances[k].embedding;
        validate_vector(e, "instance " + std::to_string(k) + " of " + query.frame_id);
        normalize_into(e, {unit.data() + k * query.dim, query.dim});
    }
    sm.scores = detail::dissimilarities(std::move(unit), query.dim, view, opt.workers);
    sm.frame_score = collapse_frame_score(sm.scores, opt.rule);
    return sm;
}

inline ScoreMap score_instances(const InstanceSet& query, const NominalCache& cache, const ScoreOptions& opt = {}) {
    return score_instances(query, CacheView(cache), opt);
}

inline ScoreMap score_frame(const LoadedFrame& f, const CacheView& view, EmbeddingMode mode, const ScoreOptions& opt) {
    return mode == EmbeddingMode::grid ? score_patches(f.grid, view, opt) : score_instances(*f.instances, view, opt);
}

// ---- instance aggregation -------------------------------------------------

struct AggregationResult {
    InstanceSet instances;
    std::vector<std::string> warnings;  // one per dropped mask
};

// Patches owned by a mask: at least half of the patch's pixels are foreground.
// A mask that owns no patch falls back to the patch holding its centroid pixel,
// provided that patch overlaps the mask at all; otherwise the mask is dropped.
inline std::vector<std::size_t> assign_patches(const BinaryMask& mask, const FrameGeometry& g) {
    const std::uint32_t px = g.patch_px;
    std::vector<std::size_t> owned;
    std::vector<std::uint32_t> overlap(g.patch_count(), 0);
    double sum_r = 0.0, sum_c = 0.0;
    std::size_t fg = 0;
    for (std::uint32_t r = 0; r < mask.height(); ++r)
        for (std::uint32_t c = 0; c < mask.width(); ++c)
            if (mask.at(r, c)) {
                ++overlap[std::size_t{r / px} * g.grid_w + c / px];
                sum_r += r;
                sum_c += c;
                ++fg;
            }
    for (std::size_t j = 0; j < overlap.size(); ++j)
        if (2 * std::size_t{overlap[j]} >= std::size_t{px} * px) owned.push_back(j);
    if (owned.empty() && fg > 0) {
        const auto cr = static_cast<std::uint32_t>(std::floor(sum_r / static_cast<double>(fg)));
        const auto cc = static_cast<std::uint32_t>(std::floor(sum_c / static_cast<double>(fg)));
        const std::size_t j = std::size_t{cr / px} * g.grid_w + cc / px;
        if (overlap[j] > 0) owned.push_back(j);
    }
    return owned;
}

inline std::optional<std::vector<float>> mean_embedding(const PatchEmbeddingGrid& grid,
                                                        const std::vector<std::size_t>& patches) {
    std::vector<double> acc(grid.dim, 0.0);
    for (auto j : patches) {
        const auto p = grid.patch(j);
        for (std::size_t k = 0; k < grid.dim; ++k) acc[k] += p[k];
    }
    double norm = 0.0;
    for (auto& a : acc) {
        a /= static_cast<double>(patches.size());
        norm += a * a;
    }
    norm = std::sqrt(norm);
    if (!(norm > 0.0) || !std::isfinite(norm)) return std::nullopt;
    std::vector<float> out(grid.dim);
    for (std::size_t k = 0; k < grid.dim; ++k) out[k] = static_cast<float>(acc[k] / norm);
    return out;
}

inline AggregationResult aggregate_instance_embeddings(const PatchEmbeddingGrid& grid,
                                                       const std::vector<BinaryMask>& masks,
                                                       bool include_residual = true,
                                                       const std::vector<std::optional<std::string>>& labels = {}) {
    const auto& g = grid.geometry;
    AggregationResult res;
    res.instances.frame_id = grid.frame_id;
    res.instances.geometry = g;
    res.instances.dim = grid.dim;
    std::vector<bool> covered(g.patch_count(), false);
    for (std::size_t m = 0; m < masks.size(); ++m) {
        const auto& mask = masks[m];
        if (mask.height() != g.pixel_height() || mask.width() != g.pixel_width())
            throw GeometryError("mask " + std::to_string(m) + " of frame " + grid.frame_id +
                                " does not match the frame's pixel dimensions");
        const auto owned = assign_patches(mask, g);
        if (owned.empty()) {
            res.warnings.push_back("frame " + grid.frame_id + ": mask " + std::to_string(m) +
                                   " covers no patch; instance dropped");
            continue;
        }
        auto emb = mean_embedding(grid, owned);
        if (!emb) {
            res.warnings.push_back("frame " + grid.frame_id + ": mask " + std::to_string(m) +
                                   " averages to a zero vector; instance dropped");
            continue;
        }
        for (auto j : owned) covered[j] = true;
        Instance inst{mask, std::move(*emb), m < labels.size() ? labels[m] : std::nullopt};
        res.instances.instances.push_back(std::move(inst));
    }
    if (include_residual) {
        std::vector<std::size_t> rest;
        for (std::size_t j = 0; j < covered.size(); ++j)
            if (!covered[j]) rest.push_back(j);
        if (!rest.empty()) {
            BinaryMask mask(g.pixel_height(), g.pixel_width());
            for (auto j : rest)
                mask.fill_rect(static_cast<std::uint32_t>(j / g.grid_w) * g.patch_px,
                               static_cast<std::uint32_t>(j % g.grid_w) * g.patch_px, g.patch_px, g.patch_px);
            if (auto emb = mean_embedding(grid, rest)) {
                res.instances.instances.push_back({std::move(mask), std::move(*emb), std::string(kResidualLabel)});
                res.instances.includes_residual = true;
            } else {
                res.warnings.push_back("frame " + grid.frame_id + ": residual averages to a zero vector; dropped");
            }
        }
    }
    return res;
}

// ---- batch scoring --------------------------------------------------------

struct FrameFailure {
    std::string frame_id;
    std::string message;
};

struct BatchResult {
    std::vector<std::optional<ScoreMap>> maps;  // manifest order
    std::vector<FrameFailure> failures;
};

struct BatchError : DataError {
    explicit BatchError(const std::vector<FrameFailure>& failures) : DataError(describe(failures)) {}
    static std::string describe(const std::vector<FrameFailure>& failures) {
        std::string s = std::to_string(failures.size()) + " frame(s) failed:";
        for (const auto& f : failures) s += "\n  " + f.frame_id + ": " + f.message;
        return s;
    }
};

struct BatchOptions {
    unsigned workers = 1;
    FrameScoreRule rule = FrameScoreRule::per_patch_max;
    // Score each frame against the cache minus its own experiment.
    bool leave_experiment_out = false;
};

// Scores every manifest frame, one frame per task. Per-frame scoring runs
// single-threaded so output never depends on the worker count.
inline BatchResult batch_score_partial(const DatasetManifest& manifest, const NominalCache& cache, EmbeddingMode mode,
                                       const BatchOptions& opt = {}) {
    BatchResult out;
    const std::size_t n = manifest.frames.size();
    out.maps.resize(n);
    std::vector<std::optional<std::string>> errors(n);
    const ScoreOptions sopt{1, opt.rule};
    parallel_for(n, opt.workers, [&](std::size_t i) {
        const auto& rec = manifest.frames[i];
        try {
            const auto frame = load_frame(manifest, rec, mode == EmbeddingMode::instance, false);
            const auto view = opt.leave_experiment_out ? CacheView::excluding_experiment(cache, rec.experiment_id)
                                                       : CacheView(cache);
            out.maps[i] = score_frame(frame, view, mode, sopt);
        } catch (const Error& e) {
            errors[i] = e.what();
        } catch (const std::exception& e) {
            errors[i] = std::string("internal: ") + e.what();
        }
    });
    for (std::size_t i = 0; i < n; ++i)
        if (errors[i]) out.failures.push_back({manifest.frames[i].frame_id, *errors[i]});
    return out;
}

inline std::vector<ScoreMap> batch_score(const DatasetManifest& manifest, const NominalCache& cache,
                                         EmbeddingMode mode, const BatchOptions& opt = {}) {
    auto res = batch_score_partial(manifest, cache, mode, opt);
    if (!res.failures.empty()) throw BatchError(res.failures);
    std::vector<ScoreMap> maps;
    maps.reserve(res.maps.size());
    for (auto& m : res.maps) maps.push_back(std::move(*m));
    return maps;
}

// ---- serialization --------------------------------------------------------

inline nlohmann::json score_map_to_json(const ScoreMap& sm) {
    nlohmann::json scores = nlohmann::json::array();
    for (float s : sm.scores) scores.push_back(s);
    nlohmann::json j{{"frame_id", sm.frame_id},
                     {"mode", to_string(sm.mode)},
                     {"frame_score", sm.frame_score},
                     {"scores", scores},
                     {"grid_h", sm.geometry.grid_h},
                     {"grid_w", sm.geometry.grid_w},
                     {"patch_px", sm.geometry.patch_px}};
    if (!sm.warnings.empty()) j["warnings"] = sm.warnings;
    return j;
}

inline ScoreMap score_map_from_json(const nlohmann::json& j) {
    try {
        ScoreMap sm;
        sm.frame_id = j.at("frame_id").get<std::string>();
        sm.mode = parse_mode(j.at("mode").get<std::string>());
        sm.frame_score = j.at("frame_score").get<float>();
        sm.scores = j.at("scores").get<std::vector<float>>();
        sm.geometry.grid_h = j.value("grid_h", kDefaultGridSide);
        sm.geometry.grid_w = j.value("grid_w", kDefaultGridSide);
        sm.geometry.patch_px = j.value("patch_px", kDefaultPatchPx);
        if (j.contains("warnings")) sm.warnings = j.at("warnings").get<std::vector<std::string>>();
        return sm;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("score map: ") + e.what());
    }
}

inline std::uint8_t score_to_gray(float s) {
    const double v = std::round((std::clamp(double{s}, -1.0, 1.0) + 1.0) / 2.0 * 255.0);
    return static_cast<std::uint8_t>(v);
}

// Pixel-resolution heatmap. Grid mode paints each patch block with its score;
// instance mode paints each pixel with the highest score of any instance covering it.
inline GrayImage heatmap(const ScoreMap& sm, const InstanceSet* instances = nullptr) {
    const auto& g = sm.geometry;
    GrayImage img{g.pixel_height(), g.pixel_width(), {}};
    if (sm.mode == EmbeddingMode::grid) {
        if (sm.scores.size() != g.patch_count()) throw GeometryError("score map size disagrees with grid geometry");
        img.pixels.resize(std::size_t{img.height} * img.width);
        for (std::uint32_t r = 0; r < img.height; ++r)
            for (std::uint32_t c = 0; c < img.width; ++c)
                img.pixels[std::size_t{r} * img.width + c] =
                    score_to_gray(sm.scores[std::size_t{r / g.patch_px} * g.grid_w + c / g.patch_px]);
        return img;
    }
    if (!instances || instances->instances.size() != sm.scores.size())
        throw GeometryError("instance heatmap needs the frame's instance set");
    std::vector<float> best(std::size_t{img.height} * img.width, -1.0f);
    for (std::size_t k = 0; k < sm.scores.size(); ++k) {
        const auto& m = instances->instances[k].mask;
        for (std::size_t i = 0; i < m.size(); ++i)
            if (m.flat(i)) best[i] = std::max(best[i], sm.scores[k]);
    }
    img.pixels.resize(best.size());
    for (std::size_t i = 0; i < best.size(); ++i) img.pixels[i] = score_to_gray(best[i]);
    return img;
}

}  // namespace patchguard
