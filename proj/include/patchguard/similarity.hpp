#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "patchguard/parallel.hpp"

namespace patchguard {

namespace detail {

inline constexpr std::size_t kLanes = 8;
inline constexpr std::size_t kQueryTile = 8;
inline constexpr std::size_t kRowBlock = 256;

// Dot products accumulate in 8 independent lanes over the largest multiple of 8
// dimensions, the lanes are folded pairwise in a fixed tree, then the tail
// dimensions are added left to right. Every (query, row) pair goes through this
// exact sequence no matter how the rows are partitioned across threads.
inline float fold_lanes(const float* a) {
    return ((a[0] + a[1]) + (a[2] + a[3])) + ((a[4] + a[5]) + (a[6] + a[7]));
}

template <std::size_t R>
void tile_max(const float* queries, const float* rows, std::size_t row_count, std::size_t dim, float* best) {
    const std::size_t body = dim - dim % kLanes;
    for (std::size_t i = 0; i < row_count; ++i) {
        const float* row = rows + i * dim;
        float acc[R][kLanes] = {};
        for (std::size_t k = 0; k < body; k += kLanes)
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t l = 0; l < kLanes; ++l) acc[r][l] += queries[r * dim + k + l] * row[k + l];
        for (std::size_t r = 0; r < R; ++r) {
            float s = fold_lanes(acc[r]);
            for (std::size_t k = body; k < dim; ++k) s += queries[r * dim + k] * row[k];
            best[r] = std::max(best[r], s);
        }
    }
}

inline void tile_max_any(std::size_t tile_rows, const float* queries, const float* rows, std::size_t row_count,
                         std::size_t dim, float* best) {
    switch (tile_rows) {
        case 8: tile_max<8>(queries, rows, row_count, dim, best); break;
        case 7: tile_max<7>(queries, rows, row_count, dim, best); break;
        case 6: tile_max<6>(queries, rows, row_count, dim, best); break;
        case 5: tile_max<5>(queries, rows, row_count, dim, best); break;
        case 4: tile_max<4>(queries, rows, row_count, dim, best); break;
        case 3: tile_max<3>(queries, rows, row_count, dim, best); break;
        case 2: tile_max<2>(queries, rows, row_count, dim, best); break;
        default: tile_max<1>(queries, rows, row_count, dim, best); break;
    }
}

// best[j] = max over rows [row_begin, row_end) of dot(query j, row).
inline void block_max(std::span<const float> queries, std::span<const float> matrix, std::size_t dim,
                      std::size_t row_begin, std::size_t row_end, std::span<float> best) {
    const std::size_t nq = queries.size() / dim;
    for (std::size_t b = row_begin; b < row_end; b += kRowBlock) {
        const std::size_t bn = std::min(kRowBlock, row_end - b);
        for (std::size_t q = 0; q < nq; q += kQueryTile) {
            const std::size_t tn = std::min(kQueryTile, nq - q);
            tile_max_any(tn, queries.data() + q * dim, matrix.data() + b * dim, bn, dim, best.data() + q);
        }
    }
}

}  // namespace detail

struct RowRange {
    std::size_t begin = 0;
    std::size_t end = 0;
};

// For each unit-norm query row, the maximum dot product against the rows of a
// unit-norm matrix restricted to `ranges` (i.e. the exact top-1 cosine
// similarity). Ranges are cut into shards spread over `workers` threads; shard
// maxima are combined with max, which is exact, so the result does not depend
// on `workers`. Queries with no candidate rows get -inf.
inline std::vector<float> max_cosine(std::span<const float> queries, std::span<const float> matrix,
                                     std::size_t dim, std::span<const RowRange> ranges, unsigned workers = 1) {
    const std::size_t nq = dim == 0 ? 0 : queries.size() / dim;
    constexpr float lowest = -std::numeric_limits<float>::infinity();
    std::vector<float> best(nq, lowest);
    if (nq == 0) return best;

    std::size_t total = 0;
    for (const auto& r : ranges) total += r.end - r.begin;
    if (total == 0) return best;
    if (workers <= 1) {
        for (const auto& r : ranges) detail::block_max(queries, matrix, dim, r.begin, r.end, best);
        return best;
    }

    const std::size_t shard_rows =
        std::max<std::size_t>(4 * detail::kRowBlock, (total + workers * 4 - 1) / (workers * 4));
    std::vector<RowRange> shards;
    for (const auto& r : ranges)
        for (std::size_t b = r.begin; b < r.end; b += shard_rows) shards.push_back({b, std::min(r.end, b + shard_rows)});
    std::vector<std::vector<float>> partial(shards.size(), std::vector<float>(nq, lowest));
    parallel_for(shards.size(), workers, [&](std::size_t s) {
        detail::block_max(queries, matrix, dim, shards[s].begin, shards[s].end, partial[s]);
    });
    for (const auto& p : partial)
        for (std::size_t j = 0; j < nq; ++j) best[j] = std::max(best[j], p[j]);
    return best;
}

inline std::vector<float> max_cosine(std::span<const float> queries, std::span<const float> matrix,
                                     std::size_t dim, unsigned workers = 1) {
    const RowRange all{0, dim == 0 ? 0 : matrix.size() / dim};
    return max_cosine(queries, matrix, dim, std::span<const RowRange>(&all, 1), workers);
}

}  // namespace patchguard
