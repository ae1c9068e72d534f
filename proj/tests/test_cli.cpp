#include <gtest/gtest.h>

#include "test_support.hpp"

namespace pg = patchguard;
using nlohmann::json;
using pgtest::run_cli;
using pgtest::TempDir;

namespace {

std::string q(const pg::fs::path& p) { return "\"" + p.string() + "\""; }

json read_json(const pg::fs::path& p) { return json::parse(pg::read_file_text(p)); }

std::map<std::string, std::string> tree_bytes(const pg::fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : pg::fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out[pg::fs::relative(e.path(), root).string()] = pg::read_file_text(e.path());
    return out;
}

const char* kSmallSynth = " --frames-per-experiment 4 --grid-h 6 --grid-w 6 --dim 32 --patch-px 4 --anomaly-frames 3";

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
    TempDir dir;
    EXPECT_EQ(run_cli(""), 1);
    EXPECT_EQ(run_cli("no-such-command"), 1);
    ASSERT_EQ(run_cli("synthgen --out " + q(dir / "d") + kSmallSynth), 0);
    EXPECT_EQ(run_cli("calibrate --manifest " + q(dir / "d/manifest.json") + " --alpha 1.5"), 1);
    EXPECT_EQ(run_cli("calibrate --manifest " + q(dir / "d/manifest.json") + " --alpha 0"), 1);
    EXPECT_EQ(run_cli("build-cache --manifest " + q(dir / "d/manifest.json") + " --out x --mode fancy"), 1);
    EXPECT_EQ(run_cli("build-cache --manifest " + q(dir / "d/manifest.json") + " --out " + q(dir / "c") +
                      " --connectivity 6"),
              1);
}

TEST(Cli, DataErrorsExitTwo) {
    TempDir dir;
    std::mt19937 rng(1);
    pgtest::FrameSpec anom{pgtest::random_grid(rng, 1, 1, 4, "a"), "e1", true, pg::Scenario::ood_object};
    anom.gt = pg::BinaryMask(14, 14);
    anom.gt->set(0, 0);
    pgtest::write_dataset(dir / "anom", {anom});
    EXPECT_EQ(run_cli("build-cache --manifest " + q(dir / "anom/manifest.json") + " --out " + q(dir / "c.pcache")), 2);

    pgtest::write_dataset(dir / "mixed", {{pgtest::random_grid(rng, 2, 2, 384, "a"), "e1"},
                                          {pgtest::random_grid(rng, 2, 2, 768, "b"), "e2"}});
    EXPECT_EQ(run_cli("build-cache --manifest " + q(dir / "mixed/manifest.json") + " --out " + q(dir / "c.pcache")), 2);
    EXPECT_EQ(run_cli("validate --manifest " + q(dir / "missing/manifest.json")), 2);

    pg::write_file_text(dir / "bad.pemb", "PEMB");
    EXPECT_EQ(run_cli("validate " + q(dir / "bad.pemb")), 2);
}

TEST(Cli, BuildCacheIsByteIdentical) {
    TempDir dir;
    ASSERT_EQ(run_cli("synthgen --out " + q(dir / "d") + kSmallSynth), 0);
    const auto m = q(dir / "d/manifest.json");
    ASSERT_EQ(run_cli("build-cache --manifest " + m + " --out " + q(dir / "a.pcache")), 0);
    ASSERT_EQ(run_cli("build-cache --manifest " + m + " --out " + q(dir / "b.pcache")), 0);
    EXPECT_EQ(pg::read_file_bytes(dir / "a.pcache"), pg::read_file_bytes(dir / "b.pcache"));
    EXPECT_EQ(run_cli("validate " + q(dir / "a.pcache")), 0);
    const auto cache = pg::load_cache(dir / "a.pcache");
    EXPECT_EQ(cache.entries().size(), 12u);
    const auto prov = read_json(dir / "a.pcache.json");
    EXPECT_EQ(prov["cache"]["experiments"].size(), 3u);
    EXPECT_FALSE(prov.contains("--workers"));
}

TEST(Cli, DuplicateFramesCalibrateToMinusOne) {
    TempDir dir;
    std::mt19937 rng(2);
    const auto g = pgtest::random_grid(rng, 2, 2, 8, "x");
    std::vector<pgtest::FrameSpec> specs;
    for (int i = 0; i < 4; ++i) {
        auto c = g;
        c.frame_id = "f" + std::to_string(i);
        specs.push_back({c, i % 2 ? "a" : "b"});
    }
    pgtest::write_dataset(dir.path(), specs);
    ASSERT_EQ(run_cli("calibrate --manifest " + q(dir / "manifest.json") + " --alpha 0.99 --out " + q(dir / "cal.json")),
              0);
    // Float32 self-cosine is 1 to within a few ulp.
    EXPECT_NEAR(read_json(dir / "cal.json")["tau"].get<double>(), -1.0, 1e-6);
}

TEST(Cli, PipelineConservationAndEq1Literal) {
    TempDir dir;
    ASSERT_EQ(run_cli("synthgen --out " + q(dir / "d") + kSmallSynth), 0);
    const auto m = q(dir / "d/manifest.json");
    ASSERT_EQ(run_cli("validate --manifest " + m), 0);
    ASSERT_EQ(run_cli("build-cache --manifest " + m + " --out " + q(dir / "c.pcache")), 0);
    ASSERT_EQ(run_cli("calibrate --manifest " + m + " --out " + q(dir / "cal.json")), 0);
    ASSERT_EQ(run_cli("detect --manifest " + m + " --cache " + q(dir / "c.pcache") + " --calibration " +
                      q(dir / "cal.json") + " --loo --min-component-px 32 --emit-heatmaps --out " + q(dir / "det")),
              0);
    const auto det = read_json(dir / "det/detections.json");
    EXPECT_EQ(det["tau_source"].get<std::string>().rfind("calibration", 0), 0u);
    EXPECT_EQ(det["frames"].size(), 15u);
    EXPECT_TRUE(pg::fs::exists(dir / "det/overlays/anom_000.heat.pgm"));

    ASSERT_EQ(run_cli("evaluate --manifest " + m + " --detections " + q(dir / "det") + " --out " + q(dir / "ev")), 0);
    const auto metrics = read_json(dir / "ev/metrics.json");
    const auto& o = metrics["overall"];
    EXPECT_EQ(o["TP"].get<int>() + o["FP"].get<int>() + o["FN"].get<int>() + o["TN"].get<int>(), 15);
    EXPECT_TRUE(pg::fs::exists(dir / "ev/metrics.csv.config.json"));

    ASSERT_EQ(run_cli("detect --manifest " + m + " --cache " + q(dir / "c.pcache") +
                      " --tau 0.5 --frame-score eq1-literal --out " + q(dir / "lit")),
              0);
    const auto lit = read_json(dir / "lit/detections.json");
    EXPECT_EQ(lit["tau_source"], "override");
    for (const auto& f : lit["frames"]) {
        const auto sm = pg::score_map_from_json(read_json(dir / "lit" / f["scoremap_path"].get<std::string>()));
        EXPECT_EQ(sm.frame_score, *std::min_element(sm.scores.begin(), sm.scores.end()));
    }
}

TEST(Cli, DetectIndependentOfWorkerCount) {
    TempDir dir;
    ASSERT_EQ(run_cli("synthgen --out " + q(dir / "d") + kSmallSynth), 0);
    const auto m = q(dir / "d/manifest.json");
    ASSERT_EQ(run_cli("build-cache --manifest " + m + " --out " + q(dir / "c.pcache")), 0);
    pg::fs::create_directories(dir / "w1");
    pg::fs::create_directories(dir / "w8");
    for (const char* w : {"1", "8"}) {
        // Same relative --out so the recorded config matches.
        const std::string cd = "cd " + q(dir / (std::string("w") + w)) + " && \"" PATCHGUARD_CLI "\"";
        const std::string cmd = cd + " detect --manifest " + m + " --cache " + q(dir / "c.pcache") +
                                " --alpha 0.9 --loo --emit-heatmaps --out out --workers " + w + " >/dev/null 2>&1";
        ASSERT_EQ(std::system(cmd.c_str()), 0);
    }
    const auto a = tree_bytes(dir / "w1/out"), b = tree_bytes(dir / "w8/out");
    EXPECT_GT(a.size(), 30u);
    EXPECT_EQ(a, b);
}
