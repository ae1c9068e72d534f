#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "patchguard/cache.hpp"
#include "patchguard/error.hpp"
#include "patchguard/manifest.hpp"
#include "patchguard/parallel.hpp"
#include "patchguard/scoring.hpp"

namespace patchguard {

inline constexpr double kDefaultAlpha = 0.99;

enum class CalibrationPool { frame, patch };

inline std::string_view to_string(CalibrationPool p) { return p == CalibrationPool::frame ? "frame" : "patch"; }

inline CalibrationPool parse_pool(std::string_view s) {
    if (s == "frame") return CalibrationPool::frame;
    if (s == "patch") return CalibrationPool::patch;
    throw UsageError("unknown calibration pool '" + std::string(s) + "' (expected frame|patch)");
}

inline void check_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("alpha must lie in (0, 1), got " + std::to_string(alpha));
}

// 1-based rank ceil(alpha * n). The product is nudged down by 1e-9 so that
// exact multiples (0.7 * 10 evaluates to 7.000000000000001) keep their rank.
inline std::size_t nearest_rank(double alpha, std::size_t n) {
    const auto r = static_cast<std::size_t>(std::ceil(alpha * static_cast<double>(n) - 1e-9));
    return std::clamp<std::size_t>(r, 1, n);
}

// Nearest-rank (upper) alpha-quantile: the ceil(alpha*n)-th smallest value.
inline float nearest_rank_quantile(std::vector<float> values, double alpha) {
    check_alpha(alpha);
    if (values.empty()) throw CalibrationError("quantile of an empty score list");
    std::sort(values.begin(), values.end());
    return values[nearest_rank(alpha, values.size()) - 1];
}

struct CalibrationScore {
    std::string frame_id;
    std::string experiment_id;
    float frame_score = 0.0f;
    friend bool operator==(const CalibrationScore&, const CalibrationScore&) = default;
};

struct CalibrationResult {
    float tau = 0.0f;
    double alpha = kDefaultAlpha;
    EmbeddingMode mode = EmbeddingMode::grid;
    CalibrationPool pool = CalibrationPool::frame;
    FrameScoreRule rule = FrameScoreRule::per_patch_max;
    std::vector<CalibrationScore> per_frame_scores;  // ascending score, ties by frame_id
    std::vector<float> pooled_scores;                // element scores, only for pool = patch

    // Recomputes tau from the stored scores.
    float recompute_tau() const {
        if (pool == CalibrationPool::patch) return nearest_rank_quantile(pooled_scores, alpha);
        std::vector<float> v;
        for (const auto& s : per_frame_scores) v.push_back(s.frame_score);
        return nearest_rank_quantile(std::move(v), alpha);
    }
};

// Called once per calibrated frame with the reduced cache it was scored
// against. May run concurrently from several workers.
using CalibrationObserver = std::function<void(const FrameRecord&, const CacheView&)>;

struct CalibrationOptions {
    unsigned workers = 1;
    CalibrationPool pool = CalibrationPool::frame;
    FrameScoreRule rule = FrameScoreRule::per_patch_max;
    CalibrationObserver observer;
};

// Leave-one-experiment-out calibration: every nominal frame is scored against
// the cache built from all other experiments, and tau is the nearest-rank
// alpha-quantile of those scores.
inline CalibrationResult calibrate(std::span<const LoadedFrame> nominal, EmbeddingMode mode, double alpha,
                                   const CalibrationOptions& opt = {}) {
    check_alpha(alpha);
    std::set<std::string> experiments;
    for (const auto& f : nominal) {
        if (f.record->is_anomalous) throw CalibrationError("frame " + f.record->frame_id + " is not nominal");
        experiments.insert(f.record->experiment_id);
    }
    if (experiments.size() < 2)
        throw CalibrationError("leave-one-out degenerate: need at least 2 experiments, found " +
                               std::to_string(experiments.size()));

    const auto cache = build_cache(nominal, mode);
    std::map<std::string, CacheView> views;
    for (const auto& exp : experiments) {
        auto view = CacheView::excluding_experiment(cache, exp);
        if (view.row_count() == 0)
            throw CalibrationError("reduced cache for experiment " + exp + " is empty");
        views.emplace(exp, std::move(view));
    }

    std::vector<ScoreMap> maps(nominal.size());
    const ScoreOptions sopt{1, opt.rule};
    parallel_for(nominal.size(), opt.workers, [&](std::size_t i) {
        const auto& f = nominal[i];
        const auto& view = views.at(f.record->experiment_id);
        if (opt.observer) opt.observer(*f.record, view);
        maps[i] = score_frame(f, view, mode, sopt);
    });

    CalibrationResult res;
    res.alpha = alpha;
    res.mode = mode;
    res.pool = opt.pool;
    res.rule = opt.rule;
    for (std::size_t i = 0; i < nominal.size(); ++i) {
        res.per_frame_scores.push_back({nominal[i].record->frame_id, nominal[i].record->experiment_id,
                                        maps[i].frame_score});
        if (opt.pool == CalibrationPool::patch)
            res.pooled_scores.insert(res.pooled_scores.end(), maps[i].scores.begin(), maps[i].scores.end());
    }
    std::sort(res.per_frame_scores.begin(), res.per_frame_scores.end(), [](const auto& a, const auto& b) {
        return a.frame_score != b.frame_score ? a.frame_score < b.frame_score : a.frame_id < b.frame_id;
    });
    std::sort(res.pooled_scores.begin(), res.pooled_scores.end());
    if (opt.pool == CalibrationPool::patch && res.pooled_scores.empty())
        throw CalibrationError("no element scores to pool");
    res.tau = res.recompute_tau();
    return res;
}

inline CalibrationResult calibrate(const DatasetManifest& manifest, EmbeddingMode mode, double alpha,
                                   const CalibrationOptions& opt = {}) {
    check_alpha(alpha);
    const auto nominal = load_frames(manifest, mode, /*nominal_only=*/true);
    return calibrate(nominal, mode, alpha, opt);
}

// Strict: a frame is anomalous only if its score exceeds tau.
inline bool decide(const ScoreMap& sm, float tau) { return sm.frame_score > tau; }

inline nlohmann::json calibration_to_json(const CalibrationResult& c) {
    nlohmann::json scores = nlohmann::json::array();
    for (const auto& s : c.per_frame_scores)
        scores.push_back({{"frame_id", s.frame_id}, {"experiment_id", s.experiment_id}, {"frame_score", s.frame_score}});
    nlohmann::json j{{"tau", c.tau},
                     {"alpha", c.alpha},
                     {"quantile_method", "nearest_rank_upper"},
                     {"mode", to_string(c.mode)},
                     {"pool", to_string(c.pool)},
                     {"frame_score_rule", to_string(c.rule)},
                     {"n", c.pool == CalibrationPool::frame ? c.per_frame_scores.size() : c.pooled_scores.size()},
                     {"per_frame_scores", scores}};
    return j;
}

inline CalibrationResult calibration_from_json(const nlohmann::json& j) {
    try {
        CalibrationResult c;
        c.tau = j.at("tau").get<float>();
        c.alpha = j.at("alpha").get<double>();
        if (j.at("quantile_method").get<std::string>() != "nearest_rank_upper")
            throw FormatError("calibration: unsupported quantile method");
        c.mode = parse_mode(j.at("mode").get<std::string>());
        c.pool = parse_pool(j.value("pool", "frame"));
        c.rule = parse_frame_score_rule(j.value("frame_score_rule", "per-patch-max"));
        for (const auto& s : j.at("per_frame_scores"))
            c.per_frame_scores.push_back({s.at("frame_id").get<std::string>(), s.at("experiment_id").get<std::string>(),
                                          s.at("frame_score").get<float>()});
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("calibration: ") + e.what());
    }
}

}  // namespace patchguard
