#include <gtest/gtest.h>

#include <mutex>

#include "test_support.hpp"

namespace pg = patchguard;
using pgtest::TempDir;

TEST(Quantile, NearestRankExamples) {
    std::vector<float> tenths;
    for (int i = 1; i <= 10; ++i) tenths.push_back(static_cast<float>(i) / 10.0f);
    EXPECT_FLOAT_EQ(pg::nearest_rank_quantile(tenths, 0.9), 0.9f);
    EXPECT_FLOAT_EQ(pg::nearest_rank_quantile({1.0f, -1.0f, 0.0f}, 0.5), 0.0f);
    EXPECT_EQ(pg::nearest_rank(0.7, 10), 7u);
    EXPECT_EQ(pg::nearest_rank(0.71, 10), 8u);
    EXPECT_EQ(pg::nearest_rank(0.01, 10), 1u);
    EXPECT_EQ(pg::nearest_rank(0.999, 10), 10u);
}

TEST(Quantile, AlphaValidation) {
    EXPECT_THROW(pg::nearest_rank_quantile({1.0f}, 0.0), pg::UsageError);
    EXPECT_THROW(pg::nearest_rank_quantile({1.0f}, 1.0), pg::UsageError);
    EXPECT_THROW(pg::nearest_rank_quantile({}, 0.5), pg::CalibrationError);
}

TEST(Quantile, MonotoneInAlpha) {
    std::mt19937 rng(9);
    std::uniform_real_distribution<float> u(-1, 1);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<float> v(1 + rng() % 40);
        for (auto& x : v) x = u(rng);
        float prev = -2.0f;
        for (double a = 0.01; a < 1.0; a += 0.01) {
            const float t = pg::nearest_rank_quantile(v, a);
            EXPECT_GE(t, prev);
            prev = t;
        }
    }
}

TEST(Decide, StrictInequality) {
    pg::ScoreMap sm;
    sm.frame_score = 0.5f;
    EXPECT_FALSE(pg::decide(sm, 0.5f));
    sm.frame_score = 0.5001f;
    EXPECT_TRUE(pg::decide(sm, 0.5f));
    sm.frame_score = -1.0f;
    EXPECT_FALSE(pg::decide(sm, -1.0f));
    sm.frame_score = -0.999f;
    EXPECT_TRUE(pg::decide(sm, -1.0f));
}

namespace {

struct Fixture {
    std::vector<pg::FrameRecord> records;
    std::vector<pg::LoadedFrame> frames;

    void add(pg::PatchEmbeddingGrid g, std::string exp) {
        pg::FrameRecord r;
        r.frame_id = g.frame_id;
        r.experiment_id = std::move(exp);
        r.embedding_path = "unused";
        records.push_back(r);
        frames.push_back({nullptr, std::move(g), std::nullopt, std::nullopt});
    }
    // Records are stable only once all frames are added.
    std::span<const pg::LoadedFrame> finish() {
        for (std::size_t i = 0; i < frames.size(); ++i) frames[i].record = &records[i];
        return frames;
    }
};

}  // namespace

TEST(Calibrate, DuplicateFramesGiveMinusOne) {
    std::mt19937 rng(2);
    const auto g = pgtest::random_grid(rng, 3, 3, 8, "x");
    Fixture fx;
    for (int i = 0; i < 4; ++i) {
        auto copy = g;
        copy.frame_id = "f" + std::to_string(i);
        fx.add(copy, i % 2 ? "a" : "b");
    }
    const auto res = pg::calibrate(fx.finish(), pg::EmbeddingMode::grid, 0.99);
    EXPECT_FLOAT_EQ(res.tau, -1.0f);
    for (const auto& s : res.per_frame_scores) EXPECT_FLOAT_EQ(s.frame_score, -1.0f);
}

TEST(Calibrate, SingleExperimentIsDegenerate) {
    std::mt19937 rng(2);
    Fixture fx;
    fx.add(pgtest::random_grid(rng, 2, 2, 4, "a"), "only");
    fx.add(pgtest::random_grid(rng, 2, 2, 4, "b"), "only");
    try {
        pg::calibrate(fx.finish(), pg::EmbeddingMode::grid, 0.9);
        FAIL();
    } catch (const pg::CalibrationError& e) {
        EXPECT_NE(std::string(e.what()).find("leave-one-out degenerate"), std::string::npos);
    }
}

TEST(Calibrate, ObserverSeesNoSameExperimentRows) {
    std::mt19937 rng(4);
    Fixture fx;
    for (int i = 0; i < 12; ++i) fx.add(pgtest::random_grid(rng, 2, 3, 8, "f" + std::to_string(i)), "e" + std::to_string(i % 4));
    std::mutex mu;
    std::size_t calls = 0, violations = 0;
    const pg::CalibrationOptions opt{4, pg::CalibrationPool::frame, pg::FrameScoreRule::per_patch_max,
                                     [&](const pg::FrameRecord& rec, const pg::CacheView& view) {
                                         std::size_t bad = 0;
                                         for (std::size_t k = 0; k < view.size(); ++k)
                                             bad += view.entry(k).experiment_id == rec.experiment_id;
                                         // Row ranges must map back only to admitted entries.
                                         for (const auto& r : view.ranges())
                                             for (const auto& e : view.cache().entries())
                                                 if (e.row_begin < r.end && r.begin < e.row_begin + e.row_count)
                                                     bad += e.experiment_id == rec.experiment_id;
                                         std::lock_guard lk(mu);
                                         ++calls;
                                         violations += bad;
                                     }};
    const auto res = pg::calibrate(fx.finish(), pg::EmbeddingMode::grid, 0.9, opt);
    EXPECT_EQ(calls, 12u);
    EXPECT_EQ(violations, 0u);
    EXPECT_FLOAT_EQ(res.recompute_tau(), res.tau);
    for (std::size_t i = 1; i < res.per_frame_scores.size(); ++i)
        EXPECT_LE(res.per_frame_scores[i - 1].frame_score, res.per_frame_scores[i].frame_score);
}

TEST(Calibrate, MatchesManualLeaveOneOut) {
    std::mt19937 rng(6);
    Fixture fx;
    std::vector<pg::PatchEmbeddingGrid> grids;
    for (int i = 0; i < 9; ++i) {
        grids.push_back(pgtest::random_grid(rng, 2, 2, 6, "f" + std::to_string(i)));
        fx.add(grids.back(), "e" + std::to_string(i % 3));
    }
    const auto res = pg::calibrate(fx.finish(), pg::EmbeddingMode::grid, 0.5);
    std::vector<float> manual;
    for (int i = 0; i < 9; ++i) {
        std::vector<pg::PatchEmbeddingGrid> others;
        for (int k = 0; k < 9; ++k)
            if (k % 3 != i % 3) others.push_back(grids[k]);
        const auto s = pgtest::brute_force_scores(grids[i], others);
        manual.push_back(static_cast<float>(*std::max_element(s.begin(), s.end())));
    }
    std::sort(manual.begin(), manual.end());
    EXPECT_NEAR(res.tau, manual[pg::nearest_rank(0.5, 9) - 1], 1e-5);
}

TEST(Calibrate, DeterministicAcrossWorkersAndJsonRoundTrip) {
    std::mt19937 rng(8);
    Fixture fx;
    for (int i = 0; i < 10; ++i) fx.add(pgtest::random_grid(rng, 2, 2, 16, "f" + std::to_string(i)), "e" + std::to_string(i % 2));
    const auto frames = fx.finish();
    const auto a = pg::calibrate(frames, pg::EmbeddingMode::grid, 0.8, {1});
    const auto b = pg::calibrate(frames, pg::EmbeddingMode::grid, 0.8, {6});
    EXPECT_EQ(a.per_frame_scores, b.per_frame_scores);
    EXPECT_EQ(a.tau, b.tau);
    const auto back = pg::calibration_from_json(pg::calibration_to_json(a));
    EXPECT_EQ(back.tau, a.tau);
    EXPECT_EQ(back.per_frame_scores, a.per_frame_scores);
    EXPECT_EQ(back.alpha, a.alpha);

    const auto lo = pg::calibrate(frames, pg::EmbeddingMode::grid, 0.3);
    EXPECT_LE(lo.tau, a.tau);

    pg::CalibrationOptions pooled;
    pooled.pool = pg::CalibrationPool::patch;
    const auto p = pg::calibrate(frames, pg::EmbeddingMode::grid, 0.8, pooled);
    EXPECT_EQ(p.pooled_scores.size(), 40u);
    EXPECT_FLOAT_EQ(p.recompute_tau(), p.tau);
}
