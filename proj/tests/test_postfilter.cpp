#include <gtest/gtest.h>

#include <queue>

#include "test_support.hpp"

namespace pg = patchguard;

namespace {

pg::ScoreMap grid_map(std::uint32_t h, std::uint32_t w, std::uint32_t px, std::vector<float> s) {
    pg::ScoreMap sm{"f", pg::EmbeddingMode::grid, {h, w, px}, std::move(s), 0.0f, {}};
    sm.frame_score = *std::max_element(sm.scores.begin(), sm.scores.end());
    return sm;
}

// Flood-fill reference: component sizes per pixel.
std::vector<std::size_t> flood_sizes(const pg::BinaryMask& m, int conn) {
    const int h = static_cast<int>(m.height()), w = static_cast<int>(m.width());
    std::vector<int> comp(m.size(), -1);
    std::vector<std::size_t> sizes;
    for (int s = 0; s < h * w; ++s) {
        if (!m.flat(s) || comp[s] >= 0) continue;
        const int id = static_cast<int>(sizes.size());
        sizes.push_back(0);
        std::queue<int> q;
        q.push(s);
        comp[s] = id;
        while (!q.empty()) {
            const int p = q.front();
            q.pop();
            ++sizes[id];
            for (int dr = -1; dr <= 1; ++dr)
                for (int dc = -1; dc <= 1; ++dc) {
                    if ((dr == 0 && dc == 0) || (conn == 4 && dr != 0 && dc != 0)) continue;
                    const int r = p / w + dr, c = p % w + dc;
                    if (r < 0 || c < 0 || r >= h || c >= w) continue;
                    const int n = r * w + c;
                    if (m.flat(n) && comp[n] < 0) {
                        comp[n] = id;
                        q.push(n);
                    }
                }
        }
    }
    std::vector<std::size_t> out(m.size(), 0);
    for (std::size_t i = 0; i < out.size(); ++i)
        if (comp[i] >= 0) out[i] = sizes[comp[i]];
    return out;
}

}  // namespace

TEST(Rasterize, GridBlocks) {
    const auto sm = grid_map(2, 2, 14, {0.5f, -1.0f, -1.0f, -1.0f});
    const auto m = pg::rasterize(sm, 0.0f);
    EXPECT_EQ(m.height(), 28u);
    EXPECT_EQ(m.count(), 196u);
    for (std::uint32_t r = 0; r < 28; ++r)
        for (std::uint32_t c = 0; c < 28; ++c) EXPECT_EQ(m.at(r, c), r < 14 && c < 14);
    EXPECT_FALSE(pg::rasterize(sm, 0.5f).any());
}

TEST(Rasterize, NonEmptyIffScoreAboveTau) {
    std::mt19937 rng(1);
    std::uniform_real_distribution<float> u(-1, 1);
    for (int t = 0; t < 100; ++t) {
        std::vector<float> s(12);
        for (auto& x : s) x = u(rng);
        const auto sm = grid_map(3, 4, 3, s);
        const float tau = u(rng);
        EXPECT_EQ(pg::rasterize(sm, tau).any(), pg::decide(sm, tau));
    }
}

TEST(Rasterize, InstanceUnion) {
    pg::InstanceSet inst{"f", {2, 2, 2}, 2, {}, false};
    pg::BinaryMask a(4, 4), b(4, 4), c(4, 4);
    a.set(0, 0);
    b.set(3, 3);
    c.set(1, 2);
    inst.instances = {{a, {1, 0}, {}}, {b, {1, 0}, {}}, {c, {1, 0}, {}}};
    pg::ScoreMap sm{"f", pg::EmbeddingMode::instance, {2, 2, 2}, {0.9f, -0.5f, 0.2f}, 0.9f, {}};
    const auto m = pg::rasterize(sm, 0.0f, &inst);
    pg::BinaryMask expect(4, 4);
    expect.set(0, 0);
    expect.set(1, 2);
    EXPECT_EQ(m, expect);
    EXPECT_THROW(pg::rasterize(sm, 0.0f), pg::GeometryError);
}

TEST(Filter, Examples) {
    pg::BinaryMask dot(5, 5);
    dot.set(2, 2);
    EXPECT_FALSE(pg::filter_small_components(dot, {2, pg::Connectivity::eight}).any());

    pg::BinaryMask five(5, 5);
    for (std::uint32_t c = 0; c < 5; ++c) five.set(1, c);
    EXPECT_EQ(pg::filter_small_components(five, {5, pg::Connectivity::eight}), five);
    EXPECT_FALSE(pg::filter_small_components(five, {6, pg::Connectivity::eight}).any());

    pg::BinaryMask diag(3, 3);
    diag.set(0, 0);
    diag.set(1, 1);
    EXPECT_EQ(pg::filter_small_components(diag, {2, pg::Connectivity::eight}), diag);
    EXPECT_FALSE(pg::filter_small_components(diag, {2, pg::Connectivity::four}).any());
}

TEST(Filter, DefaultsAndParsing) {
    EXPECT_EQ(pg::FilterConfig{}.min_component_px, 392u);
    EXPECT_EQ(pg::FilterConfig::defaults_for(2).min_component_px, 8u);
    EXPECT_EQ(pg::parse_connectivity(4), pg::Connectivity::four);
    EXPECT_THROW(pg::parse_connectivity(6), pg::UsageError);
}

TEST(Filter, PropertiesOnRandomMasks) {
    std::mt19937 rng(11);
    for (int t = 0; t < 200; ++t) {
        const auto h = 1 + rng() % 64, w = 1 + rng() % 64;
        const auto m = pgtest::random_mask(rng, h, w, 0.1 + 0.5 * (rng() % 100) / 100.0);
        const auto conn = t % 2 ? pg::Connectivity::four : pg::Connectivity::eight;
        const std::uint64_t min_px = rng() % 30;

        EXPECT_EQ(pg::filter_small_components(m, {0, conn}), m);

        const auto f = pg::filter_small_components(m, {min_px, conn});
        EXPECT_EQ(pg::filter_small_components(f, {min_px, conn}), f);

        const auto bigger = pg::filter_small_components(m, {min_px + 5, conn});
        for (std::size_t i = 0; i < m.size(); ++i) EXPECT_LE(bigger.flat(i), f.flat(i));

        const auto sizes = flood_sizes(m, static_cast<int>(conn));
        for (std::size_t i = 0; i < m.size(); ++i) ASSERT_EQ(f.flat(i), m.flat(i) && sizes[i] >= min_px) << t;

        const auto labels = pg::label_components(m, conn);
        for (std::size_t i = 0; i < m.size(); ++i)
            if (m.flat(i)) {
                ASSERT_EQ(labels.sizes[labels.label[i]], sizes[i]);
            }
    }
}

TEST(Filter, OutlineOfBlock) {
    pg::BinaryMask m(6, 6);
    m.fill_rect(1, 1, 4, 4);
    const auto o = pg::mask_outline(m);
    EXPECT_EQ(o.count(), 12u);
    EXPECT_FALSE(o.at(2, 2));
    EXPECT_TRUE(o.at(1, 1));
}
