#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "patchguard/error.hpp"
#include "patchguard/manifest.hpp"
#include "patchguard/mask.hpp"
#include "patchguard/postfilter.hpp"
#include "patchguard/scoring.hpp"

namespace patchguard {

inline constexpr double kDefaultIouThreshold = 0.3;
inline constexpr std::size_t kHistogramBins = 64;
inline constexpr const char* kOverallScope = "overall";

// |a & b| / |a | b|; 1 when both are empty.
inline double iou(const BinaryMask& a, const BinaryMask& b) {
    if (!a.same_shape(b)) throw GeometryError("IoU of masks with different shapes");
    std::size_t inter = 0, uni = 0;
    const auto& x = a.bits();
    const auto& y = b.bits();
    for (std::size_t i = 0; i < x.size(); ++i) {
        inter += static_cast<std::size_t>(x[i] & y[i]);
        uni += static_cast<std::size_t>(x[i] | y[i]);
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

enum class Verdict { TP, FP, FN, TN };

inline std::string_view to_string(Verdict v) {
    switch (v) {
        case Verdict::TP: return "TP";
        case Verdict::FP: return "FP";
        case Verdict::FN: return "FN";
        case Verdict::TN: return "TN";
    }
    return "TN";
}

struct FrameOutcome {
    std::string frame_id;
    Scenario scenario = Scenario::nominal;
    bool gt_anomalous = false;
    bool predicted_mask_nonempty = false;
    std::optional<double> iou;
    Verdict verdict = Verdict::TN;
};

// An anomalous frame is TP only if its whole-frame prediction reaches the IoU
// gate; any other outcome there is a single FN. A nominal frame is FP as soon
// as anything is predicted.
inline FrameOutcome judge_frame(const BinaryMask& pred, const std::optional<BinaryMask>& gt, bool gt_anomalous,
                                double iou_threshold = kDefaultIouThreshold, std::string frame_id = {},
                                Scenario scenario = Scenario::nominal) {
    FrameOutcome o{std::move(frame_id), scenario, gt_anomalous, pred.any(), std::nullopt, Verdict::TN};
    if (gt_anomalous) {
        if (!gt) throw ValidationError("anomalous frame " + o.frame_id + " has no ground-truth mask");
        o.iou = iou(pred, *gt);
        o.verdict = *o.iou >= iou_threshold ? Verdict::TP : Verdict::FN;
    } else {
        o.verdict = o.predicted_mask_nonempty ? Verdict::FP : Verdict::TN;
    }
    return o;
}

// Frame-label judging without localization (IoU gate disabled), e.g. for
// verdicts produced outside this pipeline.
inline FrameOutcome judge_label(bool predicted_anomalous, bool gt_anomalous, std::string frame_id = {},
                                Scenario scenario = Scenario::nominal) {
    FrameOutcome o{std::move(frame_id), scenario, gt_anomalous, predicted_anomalous, std::nullopt, Verdict::TN};
    if (gt_anomalous)
        o.verdict = predicted_anomalous ? Verdict::TP : Verdict::FN;
    else
        o.verdict = predicted_anomalous ? Verdict::FP : Verdict::TN;
    return o;
}

struct GroupMetrics {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::optional<double> tpr, fpr, f1, balanced_accuracy;

    std::size_t total() const noexcept { return tp + fp + fn + tn; }

    void add(Verdict v) {
        switch (v) {
            case Verdict::TP: ++tp; break;
            case Verdict::FP: ++fp; break;
            case Verdict::FN: ++fn; break;
            case Verdict::TN: ++tn; break;
        }
    }

    // Ratios with a zero denominator stay absent.
    void finalize() {
        tpr = fpr = f1 = balanced_accuracy = std::nullopt;
        if (tp + fn > 0) tpr = static_cast<double>(tp) / static_cast<double>(tp + fn);
        if (fp + tn > 0) fpr = static_cast<double>(fp) / static_cast<double>(fp + tn);
        if (2 * tp + fp + fn > 0) f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
        if (tpr && fpr) balanced_accuracy = (*tpr + (1.0 - *fpr)) / 2.0;
    }
};

struct MetricsReport {
    std::string method_label = "embedding";
    double iou_threshold = kDefaultIouThreshold;
    bool iou_gate = true;
    GroupMetrics overall;
    std::map<std::string, GroupMetrics> per_scenario;  // sorted by scenario name
};

inline MetricsReport compute_metrics(const std::vector<FrameOutcome>& outcomes, std::string method_label = "embedding",
                                     double iou_threshold = kDefaultIouThreshold, bool iou_gate = true) {
    MetricsReport rep;
    rep.method_label = std::move(method_label);
    rep.iou_threshold = iou_threshold;
    rep.iou_gate = iou_gate;
    for (const auto& o : outcomes) {
        rep.overall.add(o.verdict);
        rep.per_scenario[std::string(to_string(o.scenario))].add(o.verdict);
    }
    rep.overall.finalize();
    for (auto& [_, g] : rep.per_scenario) g.finalize();
    return rep;
}

namespace detail {

inline std::string fmt_opt(const std::optional<double>& v, int precision = 6) {
    if (!v) return "";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, *v);
    return buf;
}

inline std::string fmt_real(double v, int precision = 6) { return fmt_opt(v, precision); }

}  // namespace detail

inline const char* kMetricsCsvHeader = "scope,method_label,TPR,FPR,F1,balanced_accuracy,TP,FP,FN,TN";

inline std::string metrics_csv(const MetricsReport& rep) {
    std::ostringstream out;
    out << kMetricsCsvHeader << "\n";
    auto row = [&](const std::string& scope, const GroupMetrics& g) {
        out << scope << "," << rep.method_label << "," << detail::fmt_opt(g.tpr) << "," << detail::fmt_opt(g.fpr)
            << "," << detail::fmt_opt(g.f1) << "," << detail::fmt_opt(g.balanced_accuracy) << "," << g.tp << ","
            << g.fp << "," << g.fn << "," << g.tn << "\n";
    };
    row(kOverallScope, rep.overall);
    for (const auto& [scope, g] : rep.per_scenario) row(scope, g);
    return out.str();
}

inline nlohmann::json group_to_json(const GroupMetrics& g) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"TP", g.tp}, {"FP", g.fp}, {"FN", g.fn}, {"TN", g.tn}, {"TPR", opt(g.tpr)},
            {"FPR", opt(g.fpr)}, {"F1", opt(g.f1)}, {"balanced_accuracy", opt(g.balanced_accuracy)}};
}

inline GroupMetrics group_from_json(const nlohmann::json& j) {
    GroupMetrics g;
    g.tp = j.at("TP").get<std::size_t>();
    g.fp = j.at("FP").get<std::size_t>();
    g.fn = j.at("FN").get<std::size_t>();
    g.tn = j.at("TN").get<std::size_t>();
    g.finalize();
    return g;
}

inline nlohmann::json metrics_to_json(const MetricsReport& rep) {
    nlohmann::json scen = nlohmann::json::object();
    for (const auto& [k, g] : rep.per_scenario) scen[k] = group_to_json(g);
    return {{"method_label", rep.method_label}, {"iou_threshold", rep.iou_threshold}, {"iou_gate", rep.iou_gate},
            {"overall", group_to_json(rep.overall)}, {"per_scenario", scen}};
}

inline MetricsReport metrics_from_json(const nlohmann::json& j) {
    try {
        MetricsReport rep;
        rep.method_label = j.at("method_label").get<std::string>();
        rep.iou_threshold = j.at("iou_threshold").get<double>();
        rep.iou_gate = j.at("iou_gate").get<bool>();
        rep.overall = group_from_json(j.at("overall"));
        for (const auto& [k, v] : j.at("per_scenario").items()) rep.per_scenario[k] = group_from_json(v);
        return rep;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("metrics report: ") + e.what());
    }
}

// One row of the comparison table: "Label & TPR & FPR & F1 \\". With a
// baseline (the unfiltered run), every cell also carries the change in
// brackets, computed from the two-decimal values; negative changes use an en dash.
inline std::string format_table_row(const std::string& label, const GroupMetrics& g,
                                    const GroupMetrics* baseline = nullptr) {
    auto round2 = [](double v) { return std::round(v * 100.0) / 100.0; };
    auto cell = [&](const std::optional<double>& v, const std::optional<double>& base) {
        if (!v) return std::string("--");
        std::string s = detail::fmt_real(round2(*v), 2);
        if (baseline && base) {
            const double d = round2(*v) - round2(*base);
            const double mag = std::abs(round2(d));
            s += " (" + std::string(d < -1e-9 ? "–" : "+") + detail::fmt_real(mag, 2) + ")";
        }
        return s;
    };
    const GroupMetrics none;
    const GroupMetrics& b = baseline ? *baseline : none;
    return label + " & " + cell(g.tpr, b.tpr) + " & " + cell(g.fpr, b.fpr) + " & " + cell(g.f1, b.f1) + " \\\\";
}

// ---- sweeps and histograms --------------------------------------------------

// A scored frame plus what evaluation needs to judge it.
struct EvalFrame {
    ScoreMap score;
    Scenario scenario = Scenario::nominal;
    bool anomalous = false;
    std::optional<BinaryMask> gt;
    std::optional<InstanceSet> instances;  // instance mode only
};

inline std::vector<double> default_tau_grid() {
    std::vector<double> g;
    for (int i = 0; i <= 100; ++i) g.push_back(-1.0 + 2.0 * i / 100.0);
    return g;
}

struct SweepRow {
    double tau = 0.0;
    std::string scenario;
    std::optional<double> mean_iou;  // over anomalous frames
    // Frame-level detection (filtered mask non-empty), no IoU gate.
    std::optional<double> f1, tpr, fpr;
    // Same counts with the IoU gate applied to anomalous frames.
    std::optional<double> f1_gated, tpr_gated;
};

inline const char* kSweepCsvHeader = "tau,scenario,mean_iou,f1,tpr,fpr,f1_gated,tpr_gated";

inline std::vector<SweepRow> threshold_sweep(const std::vector<EvalFrame>& frames, const std::vector<double>& tau_grid,
                                             const FilterConfig& cfg, double iou_threshold = kDefaultIouThreshold,
                                             unsigned workers = 1) {
    if (tau_grid.empty()) throw UsageError("tau grid is empty");
    if (!std::is_sorted(tau_grid.begin(), tau_grid.end())) throw UsageError("tau grid must be sorted ascending");

    std::vector<std::vector<SweepRow>> per_tau(tau_grid.size());
    parallel_for(tau_grid.size(), workers, [&](std::size_t t) {
        const auto tau = static_cast<float>(tau_grid[t]);
        struct Acc {
            GroupMetrics plain, gated;
            double iou_sum = 0.0;
            std::size_t iou_n = 0;
        };
        std::map<std::string, Acc> acc;
        for (const auto& f : frames) {
            const auto raw = rasterize(f.score, tau, f.instances ? &*f.instances : nullptr);
            const auto pred = filter_small_components(raw, cfg);
            const auto gated = judge_frame(pred, f.gt, f.anomalous, iou_threshold, f.score.frame_id, f.scenario);
            const auto plain = judge_label(pred.any(), f.anomalous);
            for (const auto& scope : {std::string(kOverallScope), std::string(to_string(f.scenario))}) {
                auto& a = acc[scope];
                a.plain.add(plain.verdict);
                a.gated.add(gated.verdict);
                if (gated.iou) {
                    a.iou_sum += *gated.iou;
                    ++a.iou_n;
                }
            }
        }
        for (auto& [scope, a] : acc) {
            a.plain.finalize();
            a.gated.finalize();
            SweepRow row;
            row.tau = tau_grid[t];
            row.scenario = scope;
            if (a.iou_n > 0) row.mean_iou = a.iou_sum / static_cast<double>(a.iou_n);
            row.f1 = a.plain.f1;
            row.tpr = a.plain.tpr;
            row.fpr = a.plain.fpr;
            row.f1_gated = a.gated.f1;
            row.tpr_gated = a.gated.tpr;
            per_tau[t].push_back(std::move(row));
        }
    });
    std::vector<SweepRow> rows;
    for (auto& v : per_tau)
        for (auto& r : v) rows.push_back(std::move(r));  // (tau, scenario) order: map keys are sorted
    return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream out;
    out << kSweepCsvHeader << "\n";
    for (const auto& r : rows)
        out << detail::fmt_real(r.tau) << "," << r.scenario << "," << detail::fmt_opt(r.mean_iou) << ","
            << detail::fmt_opt(r.f1) << "," << detail::fmt_opt(r.tpr) << "," << detail::fmt_opt(r.fpr) << ","
            << detail::fmt_opt(r.f1_gated) << "," << detail::fmt_opt(r.tpr_gated) << "\n";
    return out.str();
}

inline std::size_t histogram_bin(float s) {
    const double x = (std::clamp(double{s}, -1.0, 1.0) + 1.0) / 2.0 * static_cast<double>(kHistogramBins);
    return std::min(kHistogramBins - 1, static_cast<std::size_t>(std::floor(x)));
}

struct ScoreHistograms {
    // scope -> counts; "T" elements overlap the GT mask, "N" are all others
    std::map<std::string, std::vector<std::size_t>> anomalous, nominal;
};

// Whether each element's pixel footprint touches the GT mask.
inline std::vector<bool> elements_on_gt(const EvalFrame& f) {
    std::vector<bool> on(f.score.scores.size(), false);
    if (!f.gt) return on;
    const auto& g = f.score.geometry;
    if (f.score.mode == EmbeddingMode::grid) {
        for (std::uint32_t r = 0; r < f.gt->height(); ++r)
            for (std::uint32_t c = 0; c < f.gt->width(); ++c)
                if (f.gt->at(r, c)) on[std::size_t{r / g.patch_px} * g.grid_w + c / g.patch_px] = true;
        return on;
    }
    if (!f.instances) throw GeometryError("instance histogram needs instance masks");
    for (std::size_t k = 0; k < on.size(); ++k) {
        const auto& m = f.instances->instances[k].mask;
        for (std::size_t i = 0; i < m.size() && !on[k]; ++i) on[k] = m.flat(i) && f.gt->flat(i);
    }
    return on;
}

inline ScoreHistograms score_distributions(const std::vector<EvalFrame>& frames) {
    ScoreHistograms h;
    auto touch = [&](const std::string& scope) {
        h.anomalous.try_emplace(scope, kHistogramBins, 0);
        h.nominal.try_emplace(scope, kHistogramBins, 0);
    };
    touch(kOverallScope);
    for (const auto& f : frames) {
        const std::string scope(to_string(f.scenario));
        touch(scope);
        const auto on = elements_on_gt(f);
        for (std::size_t k = 0; k < f.score.scores.size(); ++k) {
            const auto bin = histogram_bin(f.score.scores[k]);
            auto& target = on[k] ? h.anomalous : h.nominal;
            ++target[kOverallScope][bin];
            ++target[scope][bin];
        }
    }
    return h;
}

inline std::string histogram_csv(const ScoreHistograms& h) {
    std::ostringstream out;
    out << "scenario,class,bin_low,bin_high,count\n";
    const double width = 2.0 / static_cast<double>(kHistogramBins);
    for (const auto& [scope, t_counts] : h.anomalous) {
        for (const char* cls : {"T", "N"}) {
            const auto& counts = cls[0] == 'T' ? t_counts : h.nominal.at(scope);
            for (std::size_t b = 0; b < kHistogramBins; ++b)
                out << scope << "," << cls << "," << detail::fmt_real(-1.0 + width * static_cast<double>(b)) << ","
                    << detail::fmt_real(-1.0 + width * static_cast<double>(b + 1)) << "," << counts[b] << "\n";
        }
    }
    return out.str();
}

}  // namespace patchguard
