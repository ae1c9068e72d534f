#include <gtest/gtest.h>

#include <numeric>

#include "test_support.hpp"

namespace pg = patchguard;

TEST(Iou, Examples) {
    pg::BinaryMask a(40, 20), b(40, 20), empty(40, 20);
    a.fill_rect(0, 0, 14, 14);
    EXPECT_DOUBLE_EQ(pg::iou(a, a), 1.0);
    b.fill_rect(20, 0, 14, 14);
    EXPECT_DOUBLE_EQ(pg::iou(a, b), 0.0);
    pg::BinaryMask s(40, 20);
    s.fill_rect(7, 0, 14, 14);
    EXPECT_DOUBLE_EQ(pg::iou(a, s), 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(pg::iou(s, a), pg::iou(a, s));
    EXPECT_DOUBLE_EQ(pg::iou(empty, empty), 1.0);
    EXPECT_DOUBLE_EQ(pg::iou(a, empty), 0.0);
    EXPECT_THROW(pg::iou(a, pg::BinaryMask(4, 4)), pg::GeometryError);
}

TEST(Judge, Examples) {
    pg::BinaryMask gt(10, 10), none(10, 10), one(10, 10);
    gt.fill_rect(2, 2, 4, 4);
    one.set(9, 9);
    EXPECT_EQ(pg::judge_frame(gt, gt, true).verdict, pg::Verdict::TP);
    const auto miss = pg::judge_frame(none, gt, true);
    EXPECT_EQ(miss.verdict, pg::Verdict::FN);
    EXPECT_EQ(miss.iou, 0.0);
    EXPECT_EQ(pg::judge_frame(one, std::nullopt, false).verdict, pg::Verdict::FP);
    EXPECT_EQ(pg::judge_frame(none, std::nullopt, false).verdict, pg::Verdict::TN);
    // A nonempty prediction that fails the gate is a single FN.
    EXPECT_EQ(pg::judge_frame(one, gt, true).verdict, pg::Verdict::FN);
    EXPECT_THROW(pg::judge_frame(gt, std::nullopt, true), pg::ValidationError);
}

namespace {

std::vector<pg::FrameOutcome> fixture_2_1_1_6() {
    std::vector<pg::FrameOutcome> o;
    auto push = [&](bool pred, bool gt, int n) {
        for (int i = 0; i < n; ++i) o.push_back(pg::judge_label(pred, gt, "f" + std::to_string(o.size())));
    };
    push(true, true, 2);
    push(true, false, 1);
    push(false, true, 1);
    push(false, false, 6);
    return o;
}

}  // namespace

TEST(Metrics, FixtureValues) {
    const auto rep = pg::compute_metrics(fixture_2_1_1_6());
    const auto& g = rep.overall;
    EXPECT_EQ(g.tp, 2u);
    EXPECT_EQ(g.fp, 1u);
    EXPECT_EQ(g.fn, 1u);
    EXPECT_EQ(g.tn, 6u);
    EXPECT_NEAR(*g.tpr, 0.667, 1e-3);
    EXPECT_NEAR(*g.fpr, 0.143, 1e-3);
    EXPECT_NEAR(*g.f1, 0.667, 1e-3);
    EXPECT_NEAR(*g.balanced_accuracy, 0.762, 1e-3);
}

TEST(Metrics, AllTrueNegatives) {
    std::vector<pg::FrameOutcome> o(5, pg::judge_label(false, false));
    const auto g = pg::compute_metrics(o).overall;
    EXPECT_FALSE(g.tpr.has_value());
    EXPECT_EQ(g.fpr, 0.0);
    EXPECT_FALSE(g.f1.has_value());
    EXPECT_FALSE(g.balanced_accuracy.has_value());
}

TEST(Metrics, CsvLayoutAndJsonRoundTrip) {
    auto o = fixture_2_1_1_6();
    o[0].scenario = pg::Scenario::stop_sign;
    const auto rep = pg::compute_metrics(o, "grid");
    const auto csv = pg::metrics_csv(rep);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "scope,method_label,TPR,FPR,F1,balanced_accuracy,TP,FP,FN,TN");
    EXPECT_NE(csv.find("\noverall,grid,0.666667,0.142857,0.666667,0.761905,2,1,1,6\n"), std::string::npos);
    EXPECT_NE(csv.find("\nstop_sign,grid,1.000000,,1.000000,,1,0,0,0"), std::string::npos);
    const auto back = pg::metrics_from_json(pg::metrics_to_json(rep));
    EXPECT_EQ(pg::metrics_csv(back), csv);
}

TEST(Metrics, ConservationPerScenario) {
    std::mt19937 rng(3);
    std::vector<pg::FrameOutcome> o;
    for (int i = 0; i < 300; ++i) {
        auto f = pg::judge_label(rng() % 2, rng() % 2);
        f.scenario = static_cast<pg::Scenario>(rng() % 4);
        o.push_back(f);
    }
    const auto rep = pg::compute_metrics(o);
    EXPECT_EQ(rep.overall.total(), 300u);
    std::size_t sum = 0;
    for (const auto& [_, g] : rep.per_scenario) sum += g.total();
    EXPECT_EQ(sum, 300u);
}

TEST(Metrics, TableRowLayout) {
    pg::GroupMetrics base, filtered;
    base.tpr = 0.37;
    base.fpr = 0.27;
    base.f1 = 0.40;
    filtered.tpr = 0.44;
    filtered.fpr = 0.17;
    filtered.f1 = 0.51;
    EXPECT_EQ(pg::format_table_row("Instance (F)", filtered, &base),
              "Instance (F) & 0.44 (+0.07) & 0.17 (–0.10) & 0.51 (+0.11) \\\\");
    EXPECT_EQ(pg::format_table_row("Grid", base), "Grid & 0.37 & 0.27 & 0.40 \\\\");
    EXPECT_EQ(pg::format_table_row("Empty", pg::GroupMetrics{}), "Empty & -- & -- & -- \\\\");
}

// ---- sweep and histograms ---------------------------------------------------

namespace {

// 2x2 grids, patch_px 2. Anomalous frames have a high-scoring patch 0 and GT on patch 0.
std::vector<pg::EvalFrame> sweep_frames(std::mt19937& rng, int n_nominal, int n_anom) {
    std::uniform_real_distribution<float> low(-1.0f, -0.5f), high(0.2f, 0.9f);
    std::vector<pg::EvalFrame> out;
    for (int i = 0; i < n_nominal + n_anom; ++i) {
        const bool anom = i >= n_nominal;
        pg::ScoreMap sm{"f" + std::to_string(i), pg::EmbeddingMode::grid, {2, 2, 2}, {}, 0.0f, {}};
        for (int k = 0; k < 4; ++k) sm.scores.push_back(low(rng));
        if (anom) sm.scores[0] = high(rng);
        sm.frame_score = *std::max_element(sm.scores.begin(), sm.scores.end());
        pg::EvalFrame f{sm, anom ? pg::Scenario::ood_object : pg::Scenario::nominal, anom, std::nullopt, std::nullopt};
        if (anom) {
            f.gt = pg::BinaryMask(4, 4);
            f.gt->fill_rect(0, 0, 2, 2);
        }
        out.push_back(std::move(f));
    }
    return out;
}

const pg::SweepRow& overall_row(const std::vector<pg::SweepRow>& rows, double tau) {
    for (const auto& r : rows)
        if (r.scenario == pg::kOverallScope && r.tau == tau) return r;
    throw std::runtime_error("no row");
}

}  // namespace

TEST(Sweep, SaturatingAndVacuousThresholds) {
    std::mt19937 rng(5);
    const auto frames = sweep_frames(rng, 6, 3);
    const pg::FilterConfig cfg{0, pg::Connectivity::eight};
    float lo = 2, hi = -2;
    for (const auto& f : frames)
        for (float s : f.score.scores) lo = std::min(lo, s), hi = std::max(hi, s);
    const double below = lo - 1e-3, top = hi;
    const auto rows = pg::threshold_sweep(frames, {below, top}, cfg);
    EXPECT_EQ(*overall_row(rows, below).fpr, 1.0);
    EXPECT_EQ(*overall_row(rows, below).tpr, 1.0);
    EXPECT_EQ(*overall_row(rows, top).tpr, 0.0);
    EXPECT_EQ(*overall_row(rows, top).fpr, 0.0);
    EXPECT_THROW(pg::threshold_sweep(frames, {}, cfg), pg::UsageError);
    EXPECT_THROW(pg::threshold_sweep(frames, {0.5, 0.1}, cfg), pg::UsageError);
}

TEST(Sweep, MonotoneAndSeparable) {
    std::mt19937 rng(6);
    const auto frames = sweep_frames(rng, 20, 8);
    const auto rows = pg::threshold_sweep(frames, pg::default_tau_grid(), {0, pg::Connectivity::eight}, 0.3, 3);
    EXPECT_EQ(rows.size(), 101u * 3u);  // overall, nominal, ood_object
    std::map<std::string, std::pair<double, double>> prev;
    bool separable = false;
    for (const auto& r : rows) {
        auto [it, fresh] = prev.try_emplace(r.scenario, 2.0, 2.0);
        if (r.tpr) {
            EXPECT_LE(*r.tpr, it->second.first);
            it->second.first = *r.tpr;
        }
        if (r.fpr) {
            EXPECT_LE(*r.fpr, it->second.second);
            it->second.second = *r.fpr;
        }
        if (r.scenario == pg::kOverallScope && r.tpr == 1.0 && r.fpr == 0.0) separable = true;
    }
    EXPECT_TRUE(separable);
    const auto serial = pg::threshold_sweep(frames, pg::default_tau_grid(), {0, pg::Connectivity::eight});
    EXPECT_EQ(pg::sweep_csv(serial), pg::sweep_csv(rows));
    EXPECT_EQ(pg::sweep_csv(rows).substr(0, pg::sweep_csv(rows).find('\n')),
              "tau,scenario,mean_iou,f1,tpr,fpr,f1_gated,tpr_gated");
}

TEST(Histogram, BinsAndConservation) {
    EXPECT_EQ(pg::histogram_bin(-1.0f), 0u);
    EXPECT_EQ(pg::histogram_bin(1.0f), 63u);
    EXPECT_EQ(pg::histogram_bin(0.0f), 32u);

    std::mt19937 rng(7);
    const auto frames = sweep_frames(rng, 5, 2);
    const auto h = pg::score_distributions(frames);
    const auto total = [](const std::vector<std::size_t>& v) { return std::accumulate(v.begin(), v.end(), std::size_t{0}); };
    EXPECT_EQ(total(h.anomalous.at("overall")) + total(h.nominal.at("overall")), 28u);
    EXPECT_EQ(total(h.anomalous.at("overall")), 2u);

    const auto nominal_only = sweep_frames(rng, 4, 0);
    const auto hn = pg::score_distributions(nominal_only);
    EXPECT_EQ(total(hn.anomalous.at("overall")), 0u);
    EXPECT_EQ(total(hn.nominal.at("overall")), 16u);

    const auto csv = pg::histogram_csv(h);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 3 * 2 * 64);
}
