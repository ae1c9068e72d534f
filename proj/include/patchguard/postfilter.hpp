#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "patchguard/embedding.hpp"
#include "patchguard/error.hpp"
#include "patchguard/mask.hpp"
#include "patchguard/scoring.hpp"

namespace patchguard {

enum class Connectivity { four = 4, eight = 8 };

inline Connectivity parse_connectivity(int v) {
    if (v == 4) return Connectivity::four;
    if (v == 8) return Connectivity::eight;
    throw UsageError("connectivity must be 4 or 8, got " + std::to_string(v));
}

struct FilterConfig {
    std::uint64_t min_component_px = 2ull * kDefaultPatchPx * kDefaultPatchPx;
    Connectivity connectivity = Connectivity::eight;

    // Two patch blocks: one isolated block is the noise we want gone.
    static FilterConfig defaults_for(std::uint32_t patch_px) {
        return {2ull * patch_px * patch_px, Connectivity::eight};
    }
};

// Grid mode sets the full pixel block of every patch scoring above tau;
// instance mode sets the union of the masks of instances scoring above tau.
inline BinaryMask rasterize(const ScoreMap& sm, float tau, const InstanceSet* instances = nullptr) {
    const auto& g = sm.geometry;
    BinaryMask out(g.pixel_height(), g.pixel_width());
    if (sm.mode == EmbeddingMode::grid) {
        if (sm.scores.size() != g.patch_count())
            throw GeometryError("frame " + sm.frame_id + ": " + std::to_string(sm.scores.size()) +
                                " scores for a " + std::to_string(g.grid_h) + "x" + std::to_string(g.grid_w) + " grid");
        for (std::size_t j = 0; j < sm.scores.size(); ++j)
            if (sm.scores[j] > tau)
                out.fill_rect(static_cast<std::uint32_t>(j / g.grid_w) * g.patch_px,
                              static_cast<std::uint32_t>(j % g.grid_w) * g.patch_px, g.patch_px, g.patch_px);
        return out;
    }
    if (sm.scores.empty()) return out;
    if (!instances || instances->instances.size() != sm.scores.size())
        throw GeometryError("frame " + sm.frame_id + ": instance scores do not align with the instance set");
    for (std::size_t k = 0; k < sm.scores.size(); ++k) {
        if (!(sm.scores[k] > tau)) continue;
        const auto& m = instances->instances[k].mask;
        if (!m.same_shape(out)) throw GeometryError("frame " + sm.frame_id + ": instance mask shape mismatch");
        out |= m;
    }
    return out;
}

struct ComponentLabels {
    std::vector<std::int32_t> label;  // -1 for background, else component index
    std::vector<std::size_t> sizes;   // pixel count per component
};

// Two-pass union-find labelling in raster order.
inline ComponentLabels label_components(const BinaryMask& m, Connectivity conn) {
    const auto h = m.height(), w = m.width();
    std::vector<std::uint32_t> parent;
    auto find = [&](std::uint32_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    };
    auto unite = [&](std::uint32_t a, std::uint32_t b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    };

    constexpr std::uint32_t none = 0xFFFFFFFFu;
    std::vector<std::uint32_t> provisional(m.size(), none);
    for (std::uint32_t r = 0; r < h; ++r) {
        for (std::uint32_t c = 0; c < w; ++c) {
            if (!m.at(r, c)) continue;
            const std::size_t i = std::size_t{r} * w + c;
            std::uint32_t cur = none;
            auto link = [&](std::size_t j) {
                const auto l = provisional[j];
                if (l == none) return;
                if (cur == none)
                    cur = l;
                else
                    unite(cur, l);
            };
            if (c > 0) link(i - 1);
            if (r > 0) {
                link(i - w);
                if (conn == Connectivity::eight) {
                    if (c > 0) link(i - w - 1);
                    if (c + 1 < w) link(i - w + 1);
                }
            }
            if (cur == none) {
                cur = static_cast<std::uint32_t>(parent.size());
                parent.push_back(cur);
            }
            provisional[i] = cur;
        }
    }

    ComponentLabels out;
    out.label.assign(m.size(), -1);
    std::vector<std::int32_t> dense(parent.size(), -1);
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (provisional[i] == none) continue;
        const auto root = find(provisional[i]);
        if (dense[root] < 0) {
            dense[root] = static_cast<std::int32_t>(out.sizes.size());
            out.sizes.push_back(0);
        }
        out.label[i] = dense[root];
        ++out.sizes[static_cast<std::size_t>(dense[root])];
    }
    return out;
}

// Clears every component smaller than min_component_px; components of exactly
// that size survive.
inline BinaryMask filter_small_components(const BinaryMask& m, const FilterConfig& cfg) {
    if (cfg.min_component_px == 0) return m;
    const auto labels = label_components(m, cfg.connectivity);
    BinaryMask out = m;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const auto l = labels.label[i];
        if (l >= 0 && labels.sizes[static_cast<std::size_t>(l)] < cfg.min_component_px) out.set_flat(i, false);
    }
    return out;
}

// Foreground pixels that touch the background (4-neighbourhood) or the image border.
inline BinaryMask mask_outline(const BinaryMask& m) {
    BinaryMask out(m.height(), m.width());
    for (std::uint32_t r = 0; r < m.height(); ++r)
        for (std::uint32_t c = 0; c < m.width(); ++c) {
            if (!m.at(r, c)) continue;
            const bool edge = r == 0 || c == 0 || r + 1 == m.height() || c + 1 == m.width() || !m.at(r - 1, c) ||
                              !m.at(r + 1, c) || !m.at(r, c - 1) || !m.at(r, c + 1);
            if (edge) out.set(r, c);
        }
    return out;
}

}  // namespace patchguard
