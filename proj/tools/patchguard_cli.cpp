// patchguard command-line front end: build-cache, calibrate, detect, evaluate,
// sweep, hist, synthgen, validate, bench.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "patchguard/patchguard.hpp"

namespace pg = patchguard;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitInternal = 3;

// Options that never influence results; kept out of provenance so outputs stay
// byte-identical across worker counts.
bool excluded_from_provenance(const std::string& name) {
    return name == "--workers" || name == "--help" || name == "--config";
}

// Effective value of every option of a subcommand (flag > config file > default).
json effective_config(const CLI::App& sub) {
    json cfg = json::object();
    cfg["command"] = sub.get_name();
    for (const CLI::Option* opt : sub.get_options()) {
        const auto name = opt->get_name();
        if (name.empty() || excluded_from_provenance(name)) continue;
        const auto key = opt->get_lnames().empty() ? name : opt->get_lnames().front();
        if (opt->get_expected_max() == 0 && opt->get_type_size() == 0) {
            cfg[key] = opt->count() > 0;
            continue;
        }
        if (opt->count() > 0) {
            const auto& r = opt->results();
            cfg[key] = r.size() == 1 ? json(r.front()) : json(r);
        } else {
            cfg[key] = opt->get_default_str();
        }
    }
    return cfg;
}

std::string safe_name(std::string id) {
    for (auto& c : id)
        if (c == '/' || c == '\\' || c == ':') c = '_';
    return id;
}

void write_json(const pg::fs::path& path, const json& j) { pg::write_file_text(path, j.dump(2) + "\n"); }

// CSV outputs carry their config in a sibling file.
void write_with_provenance(const pg::fs::path& path, const std::string& text, const json& config) {
    pg::write_file_text(path, text);
    write_json(pg::fs::path(path.string() + ".config.json"), config);
}

struct FilterArgs {
    std::optional<std::uint64_t> min_component_px;
    int connectivity = 8;

    pg::FilterConfig resolve(std::uint32_t patch_px) const {
        auto cfg = pg::FilterConfig::defaults_for(patch_px);
        if (min_component_px) cfg.min_component_px = *min_component_px;
        cfg.connectivity = pg::parse_connectivity(connectivity);
        return cfg;
    }
};

void add_filter_options(CLI::App* sub, FilterArgs& f) {
    sub->add_option("--min-component-px", f.min_component_px,
                    "Remove connected components smaller than this many pixels (default 2*patch_px^2)");
    sub->add_option("--connectivity", f.connectivity, "Pixel connectivity for component filtering")
        ->check(CLI::IsMember({4, 8}))
        ->capture_default_str();
}

// Scores for sweep/hist: recomputed from a cache, or read back from a detect run.
std::vector<pg::ScoreMap> obtain_scores(const pg::DatasetManifest& manifest, const std::string& cache_path,
                                        const std::string& scores_dir, pg::EmbeddingMode mode,
                                        const pg::BatchOptions& bopt) {
    if (!scores_dir.empty()) {
        std::vector<pg::ScoreMap> maps;
        for (const auto& f : manifest.frames) {
            const auto p = pg::fs::path(scores_dir) / "scoremaps" / (safe_name(f.frame_id) + ".json");
            maps.push_back(pg::score_map_from_json(json::parse(pg::read_file_text(p))));
            if (maps.back().frame_id != f.frame_id) throw pg::ValidationError(p.string() + ": frame_id mismatch");
        }
        return maps;
    }
    if (cache_path.empty()) throw pg::UsageError("one of --cache or --scores is required");
    const auto cache = pg::load_cache(cache_path);
    return pg::batch_score(manifest, cache, mode, bopt);
}

std::vector<pg::EvalFrame> eval_frames(const pg::DatasetManifest& manifest, std::vector<pg::ScoreMap> maps,
                                       pg::EmbeddingMode mode) {
    std::vector<pg::EvalFrame> out;
    for (std::size_t i = 0; i < manifest.frames.size(); ++i) {
        const auto& rec = manifest.frames[i];
        pg::EvalFrame ef;
        ef.score = std::move(maps[i]);
        ef.scenario = rec.scenario;
        ef.anomalous = rec.is_anomalous;
        auto lf = pg::load_frame(manifest, rec, mode == pg::EmbeddingMode::instance, true);
        ef.gt = std::move(lf.gt_mask);
        ef.instances = std::move(lf.instances);
        if (ef.anomalous && !ef.gt) throw pg::ValidationError("anomalous frame " + rec.frame_id + " has no GT mask");
        out.push_back(std::move(ef));
    }
    return out;
}

std::vector<double> parse_tau_grid(const std::string& spec) {
    if (spec.empty()) return pg::default_tau_grid();
    std::vector<double> grid;
    // "lo:hi:n" or a comma-separated list
    if (spec.find(':') != std::string::npos) {
        double lo = 0, hi = 0;
        int n = 0;
        if (std::sscanf(spec.c_str(), "%lf:%lf:%d", &lo, &hi, &n) != 3 || n < 1 || hi < lo)
            throw pg::UsageError("--tau-grid expects lo:hi:n");
        for (int i = 0; i < n; ++i) grid.push_back(n == 1 ? lo : lo + (hi - lo) * i / (n - 1));
        return grid;
    }
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            grid.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw pg::UsageError("bad --tau-grid value '" + item + "'");
        }
    }
    return grid;
}

void print_score_summary(const pg::CalibrationResult& c) {
    std::vector<float> v;
    for (const auto& s : c.per_frame_scores) v.push_back(s.frame_score);
    std::sort(v.begin(), v.end());
    std::printf("tau = %.9g (alpha %.4g, nearest-rank upper, n = %zu)\n", static_cast<double>(c.tau), c.alpha,
                v.size());
    if (v.empty()) return;
    std::printf("frame scores: min %.6f  median %.6f  max %.6f\n", static_cast<double>(v.front()),
                static_cast<double>(v[v.size() / 2]), static_cast<double>(v.back()));
    constexpr int bins = 10;
    const double lo = v.front(), hi = v.back();
    std::vector<std::size_t> counts(bins, 0);
    for (float s : v) {
        int b = hi > lo ? static_cast<int>((s - lo) / (hi - lo) * bins) : 0;
        counts[static_cast<std::size_t>(std::clamp(b, 0, bins - 1))]++;
    }
    const std::size_t peak = *std::max_element(counts.begin(), counts.end());
    for (int b = 0; b < bins; ++b) {
        const double a = lo + (hi - lo) * b / bins;
        std::printf("  [%+.5f) %5zu %s\n", a, counts[static_cast<std::size_t>(b)],
                    std::string(peak ? counts[static_cast<std::size_t>(b)] * 40 / peak : 0, '#').c_str());
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"patchguard: semantic anomaly detection and localization from patch embeddings"};
    app.require_subcommand(1);
    app.set_config("--config", "", "TOML/INI file with option defaults (flags take precedence)");

    unsigned workers = pg::default_workers();
    std::string manifest_path, cache_path, out_path, mode_name = "grid", frame_score_name = "per-patch-max";
    double alpha = pg::kDefaultAlpha;
    double iou_threshold = pg::kDefaultIouThreshold;
    bool loo = false;
    FilterArgs filter;

    auto add_workers = [&](CLI::App* s) {
        s->add_option("--workers", workers, "Worker threads (results do not depend on this)")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
    };
    auto add_mode = [&](CLI::App* s) {
        s->add_option("--mode", mode_name, "Embedding mode")->check(CLI::IsMember({"grid", "instance"}))->capture_default_str();
    };
    auto add_frame_score = [&](CLI::App* s) {
        s->add_option("--frame-score", frame_score_name, "Frame score rule")
            ->check(CLI::IsMember({"per-patch-max", "eq1-literal"}))
            ->capture_default_str();
    };

    // build-cache
    auto* build = app.add_subcommand("build-cache", "Build the nominal embedding cache from a manifest");
    bool all_frames = false;
    build->add_option("--manifest", manifest_path, "Dataset manifest")->required();
    build->add_option("--out", out_path, "Cache file to write")->required();
    add_mode(build);
    build->add_flag("--all-frames", all_frames, "Admit anomalous frames too (default: nominal only)");

    // calibrate
    auto* calib = app.add_subcommand("calibrate", "Leave-one-experiment-out threshold calibration");
    std::string pool_name = "frame";
    calib->add_option("--manifest", manifest_path, "Dataset manifest (nominal frames are used)")->required();
    calib->add_option("--out", out_path, "Calibration JSON to write");
    calib->add_option("--alpha", alpha, "Quantile level in (0,1)")->capture_default_str();
    calib->add_option("--pool", pool_name, "Quantile over frame scores or pooled element scores")
        ->check(CLI::IsMember({"frame", "patch"}))
        ->capture_default_str();
    add_mode(calib);
    add_frame_score(calib);
    add_workers(calib);

    // detect
    auto* detect = app.add_subcommand("detect", "Score, threshold and filter frames; write masks and verdicts");
    std::optional<double> tau_override;
    std::string calibration_path;
    bool emit_heatmaps = false;
    detect->add_option("--manifest", manifest_path, "Frames to score")->required();
    detect->add_option("--cache", cache_path, "Nominal cache file")->required();
    detect->add_option("--out", out_path, "Output directory")->required();
    detect->add_option("--tau", tau_override, "Threshold override (wins over --calibration/--alpha)");
    detect->add_option("--calibration", calibration_path, "Calibration JSON providing tau");
    detect->add_option("--alpha", alpha, "Calibrate inline at this alpha when no tau is given")->capture_default_str();
    detect->add_flag("--loo", loo, "Score each frame against the cache minus its own experiment");
    detect->add_flag("--emit-heatmaps", emit_heatmaps, "Write heatmap/mask/outline PGM triplets");
    add_mode(detect);
    add_frame_score(detect);
    add_filter_options(detect, filter);
    add_workers(detect);

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "Frame-level metrics under the IoU gate");
    std::string detections_dir, verdicts_path, baseline_path, method_label = "embedding";
    bool no_iou_gate = false;
    evaluate->add_option("--manifest", manifest_path, "Dataset manifest with GT masks")->required();
    evaluate->add_option("--detections", detections_dir, "Output directory of a detect run");
    evaluate->add_option("--verdicts", verdicts_path, "External frame verdicts JSON (frame-level only)");
    evaluate->add_option("--out", out_path, "Output directory for metrics.csv/metrics.json")->required();
    evaluate->add_option("--iou-threshold", iou_threshold, "IoU needed for a true positive")->capture_default_str();
    evaluate->add_option("--method-label", method_label, "Label recorded in the report")->capture_default_str();
    evaluate->add_option("--baseline", baseline_path, "metrics.json of an unfiltered run, for table deltas");
    evaluate->add_flag("--no-iou-gate", no_iou_gate, "Judge frame labels only");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "Threshold sweep table");
    std::string scores_dir, tau_grid_spec;
    sweep->add_option("--manifest", manifest_path, "Dataset manifest")->required();
    sweep->add_option("--cache", cache_path, "Nominal cache (scores are recomputed)");
    sweep->add_option("--scores", scores_dir, "Reuse score maps from a detect output directory");
    sweep->add_option("--out", out_path, "CSV to write")->required();
    sweep->add_option("--tau-grid", tau_grid_spec, "lo:hi:n or comma list (default 101 values over [-1,1])");
    sweep->add_option("--iou-threshold", iou_threshold, "IoU gate for the gated columns")->capture_default_str();
    sweep->add_flag("--loo", loo, "Score each frame against the cache minus its own experiment");
    add_mode(sweep);
    add_frame_score(sweep);
    add_filter_options(sweep, filter);
    add_workers(sweep);

    // hist
    auto* hist = app.add_subcommand("hist", "Score histograms for GT-overlapping (T) vs other (N) elements");
    hist->add_option("--manifest", manifest_path, "Dataset manifest")->required();
    hist->add_option("--cache", cache_path, "Nominal cache (scores are recomputed)");
    hist->add_option("--scores", scores_dir, "Reuse score maps from a detect output directory");
    hist->add_option("--out", out_path, "CSV to write")->required();
    hist->add_flag("--loo", loo, "Score each frame against the cache minus its own experiment");
    add_mode(hist);
    add_workers(hist);

    // synthgen
    auto* synth = app.add_subcommand("synthgen", "Generate a synthetic dataset with planted anomalies");
    pg::SynthConfig scfg;
    synth->add_option("--out", out_path, "Output directory")->required();
    synth->add_option("--seed", scfg.seed, "Generator seed")->capture_default_str();
    synth->add_option("--experiments", scfg.n_experiments, "Number of experiments")->capture_default_str();
    synth->add_option("--frames-per-experiment", scfg.frames_per_experiment)->capture_default_str();
    synth->add_option("--clusters", scfg.n_clusters, "Nominal semantic clusters")->capture_default_str();
    synth->add_option("--cluster-spread", scfg.cluster_spread, "Angular spread (radians)")->capture_default_str();
    synth->add_option("--anomaly-frames", scfg.anomaly_frames)->capture_default_str();
    synth->add_option("--anomaly-patches", scfg.anomaly_patch_count, "Planted patches per anomalous frame")
        ->capture_default_str();
    synth->add_option("--anomaly-min-angle", scfg.anomaly_min_angle, "Radians from every cluster center")
        ->capture_default_str();
    synth->add_option("--grid-h", scfg.geometry.grid_h)->capture_default_str();
    synth->add_option("--grid-w", scfg.geometry.grid_w)->capture_default_str();
    synth->add_option("--dim", scfg.dim)->capture_default_str();
    synth->add_option("--patch-px", scfg.geometry.patch_px)->capture_default_str();

    // validate
    auto* validate = app.add_subcommand("validate", "Validate a manifest and its files, or individual files");
    std::vector<std::string> files;
    pg::FrameGeometry vgeom;
    validate->add_option("--manifest", manifest_path, "Manifest to validate with every referenced file");
    validate->add_option("files", files, ".pemb/.iemb/.pgm/.pcache files");
    validate->add_option("--grid-h", vgeom.grid_h, "Geometry for standalone .iemb files")->capture_default_str();
    validate->add_option("--grid-w", vgeom.grid_w)->capture_default_str();
    validate->add_option("--patch-px", vgeom.patch_px)->capture_default_str();

    // bench
    auto* bench = app.add_subcommand("bench", "Time one frame against a random normalized cache");
    std::size_t bench_patches = 256, bench_dim = 384, bench_cache = 100000, bench_repeats = 3;
    std::uint64_t bench_seed = 1;
    bench->add_option("--patches", bench_patches)->capture_default_str();
    bench->add_option("--dim", bench_dim)->capture_default_str();
    bench->add_option("--cache-patches", bench_cache)->capture_default_str();
    bench->add_option("--repeats", bench_repeats)->check(CLI::PositiveNumber)->capture_default_str();
    bench->add_option("--seed", bench_seed)->capture_default_str();
    add_workers(bench);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        const auto mode = pg::parse_mode(mode_name);
        const auto rule = pg::parse_frame_score_rule(frame_score_name);

        if (*build) {
            const auto manifest = pg::load_manifest(manifest_path);
            const auto cache = pg::build_cache(manifest, mode, !all_frames);
            pg::save_cache(cache, out_path);
            auto prov = effective_config(*build);
            json exps = json::array();
            for (const auto& e : cache.experiments()) exps.push_back(e);
            prov["cache"] = {{"entries", cache.entries().size()}, {"vectors", cache.row_count()},
                             {"dim", cache.dim()}, {"mode", pg::to_string(cache.mode())},
                             {"normalized", cache.normalized()}, {"experiments", exps}};
            write_json(out_path + ".json", prov);
            std::printf("cache: %zu entries, %zu vectors, dim %u -> %s\n", cache.entries().size(), cache.row_count(),
                        cache.dim(), out_path.c_str());
            return kExitOk;
        }

        if (*calib) {
            pg::check_alpha(alpha);
            const auto manifest = pg::load_manifest(manifest_path);
            pg::CalibrationOptions copt;
            copt.workers = workers;
            copt.pool = pg::parse_pool(pool_name);
            copt.rule = rule;
            const auto res = pg::calibrate(manifest, mode, alpha, copt);
            print_score_summary(res);
            if (!out_path.empty()) {
                auto j = pg::calibration_to_json(res);
                j["config"] = effective_config(*calib);
                write_json(out_path, j);
            }
            return kExitOk;
        }

        if (*detect) {
            const auto manifest = pg::load_manifest(manifest_path);
            const auto cache = pg::load_cache(cache_path);
            float tau = 0.0f;
            std::string tau_source;
            if (tau_override) {
                tau = static_cast<float>(*tau_override);
                tau_source = "override";
            } else if (!calibration_path.empty()) {
                tau = pg::calibration_from_json(json::parse(pg::read_file_text(calibration_path))).tau;
                tau_source = "calibration:" + calibration_path;
            } else {
                pg::check_alpha(alpha);
                pg::CalibrationOptions copt;
                copt.workers = workers;
                copt.rule = rule;
                tau = pg::calibrate(manifest, mode, alpha, copt).tau;
                tau_source = "alpha";
            }

            pg::BatchOptions bopt{workers, rule, loo};
            auto batch = pg::batch_score_partial(manifest, cache, mode, bopt);
            const pg::fs::path out_dir(out_path);
            json frames = json::array();
            for (std::size_t i = 0; i < manifest.frames.size(); ++i) {
                const auto& rec = manifest.frames[i];
                if (!batch.maps[i]) continue;
                const auto& sm = *batch.maps[i];
                std::optional<pg::InstanceSet> inst;
                if (mode == pg::EmbeddingMode::instance)
                    inst = pg::load_frame(manifest, rec, true, false).instances;
                const auto raw = pg::rasterize(sm, tau, inst ? &*inst : nullptr);
                const auto pred = pg::filter_small_components(raw, filter.resolve(sm.geometry.patch_px));
                const auto name = safe_name(rec.frame_id);
                const std::string mask_rel = "masks/" + name + ".pgm";
                const std::string score_rel = "scoremaps/" + name + ".json";
                pg::save_mask_pgm(pred, out_dir / mask_rel);
                write_json(out_dir / score_rel, pg::score_map_to_json(sm));
                if (emit_heatmaps) {
                    const auto heat = pg::heatmap(sm, inst ? &*inst : nullptr);
                    pg::write_file_bytes(out_dir / "overlays" / (name + ".heat.pgm"),
                                         pg::encode_pgm(heat.height, heat.width, heat.pixels));
                    pg::save_mask_pgm(pred, out_dir / "overlays" / (name + ".mask.pgm"));
                    pg::save_mask_pgm(pg::mask_outline(pred), out_dir / "overlays" / (name + ".outline.pgm"));
                }
                for (const auto& w : sm.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
                frames.push_back({{"frame_id", rec.frame_id},
                                  {"experiment_id", rec.experiment_id},
                                  {"scenario", pg::to_string(rec.scenario)},
                                  {"frame_score", sm.frame_score},
                                  {"decision", pg::decide(sm, tau)},
                                  {"raw_mask_pixels", raw.count()},
                                  {"mask_pixels", pred.count()},
                                  {"mask_nonempty", pred.any()},
                                  {"mask_path", mask_rel},
                                  {"scoremap_path", score_rel}});
            }
            json failures = json::array();
            for (const auto& f : batch.failures) failures.push_back({{"frame_id", f.frame_id}, {"error", f.message}});
            json report{{"config", effective_config(*detect)},
                        {"tau", tau},
                        {"tau_source", tau_source},
                        {"frames", frames},
                        {"failures", failures}};
            write_json(out_dir / "detections.json", report);
            std::size_t flagged = 0;
            for (const auto& f : frames) flagged += f["mask_nonempty"].get<bool>() ? 1 : 0;
            std::printf("tau = %.9g (%s); %zu/%zu frames with detections -> %s\n", static_cast<double>(tau),
                        tau_source.c_str(), flagged, frames.size(), out_dir.string().c_str());
            if (!batch.failures.empty()) {
                std::fprintf(stderr, "%s\n", pg::BatchError::describe(batch.failures).c_str());
                return kExitData;
            }
            return kExitOk;
        }

        if (*evaluate) {
            const auto manifest = pg::load_manifest(manifest_path);
            std::vector<pg::FrameOutcome> outcomes;
            bool gate = !no_iou_gate;
            if (!verdicts_path.empty()) {
                gate = false;  // external verdicts carry no masks
                const auto vj = json::parse(pg::read_file_text(verdicts_path));
                std::map<std::string, std::string> verdicts;
                for (const auto& v : vj) verdicts[v.at("frame_id").get<std::string>()] = v.at("verdict").get<std::string>();
                for (const auto& rec : manifest.frames) {
                    const auto it = verdicts.find(rec.frame_id);
                    if (it == verdicts.end()) {
                        std::fprintf(stderr, "notice: no verdict for %s; frame skipped\n", rec.frame_id.c_str());
                        continue;
                    }
                    if (it->second != "anomaly" && it->second != "nominal")
                        std::fprintf(stderr, "warning: verdict '%s' for %s counted as nominal\n", it->second.c_str(),
                                     rec.frame_id.c_str());
                    outcomes.push_back(pg::judge_label(it->second == "anomaly", rec.is_anomalous, rec.frame_id,
                                                       rec.scenario));
                }
            } else {
                if (detections_dir.empty()) throw pg::UsageError("one of --detections or --verdicts is required");
                const auto dj = json::parse(pg::read_file_text(pg::fs::path(detections_dir) / "detections.json"));
                std::map<std::string, std::string> mask_paths;
                for (const auto& f : dj.at("frames"))
                    mask_paths[f.at("frame_id").get<std::string>()] = f.at("mask_path").get<std::string>();
                for (const auto& rec : manifest.frames) {
                    const auto it = mask_paths.find(rec.frame_id);
                    if (it == mask_paths.end()) throw pg::ValidationError("no detection for frame " + rec.frame_id);
                    const auto pred = pg::load_mask_pgm(pg::fs::path(detections_dir) / it->second);
                    std::optional<pg::BinaryMask> gt;
                    if (rec.gt_mask_path) gt = pg::load_mask_pgm(manifest.resolve(*rec.gt_mask_path));
                    outcomes.push_back(gate ? pg::judge_frame(pred, gt, rec.is_anomalous, iou_threshold, rec.frame_id,
                                                              rec.scenario)
                                            : pg::judge_label(pred.any(), rec.is_anomalous, rec.frame_id, rec.scenario));
                }
            }
            if (outcomes.empty()) throw pg::ValidationError("no frames to evaluate");
            const auto rep = pg::compute_metrics(outcomes, method_label, iou_threshold, gate);
            const pg::fs::path out_dir(out_path);
            const auto cfg = effective_config(*evaluate);
            write_with_provenance(out_dir / "metrics.csv", pg::metrics_csv(rep), cfg);
            auto mj = pg::metrics_to_json(rep);
            json frames = json::array();
            for (const auto& o : outcomes)
                frames.push_back({{"frame_id", o.frame_id},
                                  {"scenario", pg::to_string(o.scenario)},
                                  {"gt_anomalous", o.gt_anomalous},
                                  {"predicted_mask_nonempty", o.predicted_mask_nonempty},
                                  {"iou", o.iou ? json(*o.iou) : json(nullptr)},
                                  {"verdict", pg::to_string(o.verdict)}});
            mj["frames"] = frames;
            mj["config"] = cfg;
            write_json(out_dir / "metrics.json", mj);

            std::optional<pg::MetricsReport> base;
            if (!baseline_path.empty()) base = pg::metrics_from_json(json::parse(pg::read_file_text(baseline_path)));
            std::string table;
            auto add_row = [&](const std::string& scope, const pg::GroupMetrics& g) {
                const pg::GroupMetrics* b = nullptr;
                if (base) {
                    if (scope == pg::kOverallScope)
                        b = &base->overall;
                    else if (auto it = base->per_scenario.find(scope); it != base->per_scenario.end())
                        b = &it->second;
                }
                table += "% " + scope + "\n" + pg::format_table_row(method_label, g, b) + "\n";
            };
            add_row(pg::kOverallScope, rep.overall);
            for (const auto& [scope, g] : rep.per_scenario) add_row(scope, g);
            pg::write_file_text(out_dir / "table.tex", table);
            std::fputs(pg::metrics_csv(rep).c_str(), stdout);
            return kExitOk;
        }

        if (*sweep || *hist) {
            const auto* sub = *sweep ? sweep : hist;
            const auto manifest = pg::load_manifest(manifest_path);
            pg::BatchOptions bopt{workers, rule, loo};
            auto frames = eval_frames(manifest, obtain_scores(manifest, cache_path, scores_dir, mode, bopt), mode);
            if (*sweep) {
                const auto patch_px = frames.empty() ? pg::kDefaultPatchPx : frames.front().score.geometry.patch_px;
                const auto rows = pg::threshold_sweep(frames, parse_tau_grid(tau_grid_spec), filter.resolve(patch_px),
                                                      iou_threshold, workers);
                write_with_provenance(out_path, pg::sweep_csv(rows), effective_config(*sub));
                std::printf("%zu sweep rows -> %s\n", rows.size(), out_path.c_str());
            } else {
                const auto h = pg::score_distributions(frames);
                write_with_provenance(out_path, pg::histogram_csv(h), effective_config(*sub));
                std::printf("histograms -> %s\n", out_path.c_str());
            }
            return kExitOk;
        }

        if (*synth) {
            const auto ds = pg::generate(scfg, out_path);
            write_json(pg::fs::path(out_path) / "synthgen.config.json", effective_config(*synth));
            std::printf("%s\n", (pg::fs::path(out_path) / "manifest.json").string().c_str());
            return kExitOk;
        }

        if (*validate) {
            if (manifest_path.empty() && files.empty()) throw pg::UsageError("nothing to validate");
            std::size_t bad = 0;
            if (!manifest_path.empty()) {
                const auto rep = pg::validate_dataset(pg::load_manifest(manifest_path));
                for (const auto& e : rep.errors) std::fprintf(stderr, "invalid: %s\n", e.c_str());
                std::printf("%s: %zu frames (%zu anomalous, %zu with instances), %zu invalid\n", manifest_path.c_str(),
                            rep.frames, rep.anomalous, rep.with_instances, rep.errors.size());
                bad += rep.errors.size();
            }
            for (const auto& f : files) {
                try {
                    const pg::fs::path p(f);
                    const auto ext = p.extension().string();
                    if (ext == ".pemb") {
                        const auto g = pg::load_grid(p);
                        std::printf("%s: ok (%ux%u patches, dim %u, patch_px %u)\n", f.c_str(), g.geometry.grid_h,
                                    g.geometry.grid_w, g.dim, g.geometry.patch_px);
                    } else if (ext == ".iemb") {
                        const auto s = pg::load_instances(p, vgeom);
                        std::printf("%s: ok (%zu instances, dim %u)\n", f.c_str(), s.instances.size(), s.dim);
                    } else if (ext == ".pgm") {
                        const auto m = pg::load_mask_pgm(p);
                        std::printf("%s: ok (%ux%u, %zu foreground)\n", f.c_str(), m.width(), m.height(), m.count());
                    } else if (ext == ".pcache") {
                        const auto c = pg::load_cache(p);
                        std::printf("%s: ok (%zu entries, %zu vectors)\n", f.c_str(), c.entries().size(), c.row_count());
                    } else {
                        throw pg::UsageError(f + ": unknown file type");
                    }
                } catch (const pg::DataError& e) {
                    std::fprintf(stderr, "invalid: %s\n", e.what());
                    ++bad;
                }
            }
            return bad == 0 ? kExitOk : kExitData;
        }

        if (*bench) {
            std::mt19937_64 rng(bench_seed);
            std::normal_distribution<float> normal;
            pg::PatchEmbeddingGrid query;
            query.frame_id = "bench";
            query.geometry = {static_cast<std::uint32_t>(bench_patches), 1, pg::kDefaultPatchPx};
            query.dim = static_cast<std::uint32_t>(bench_dim);
            query.data.resize(bench_patches * bench_dim);
            for (auto& x : query.data) x = normal(rng);
            pg::NominalCache cache(pg::EmbeddingMode::grid, query.dim);
            std::vector<float> block(bench_cache * bench_dim);
            for (auto& x : block) x = normal(rng);
            cache.add_entry("bench-cache", "bench", query.geometry, block);
            std::vector<double> ms;
            for (std::size_t r = 0; r < bench_repeats; ++r) {
                const auto t0 = std::chrono::steady_clock::now();
                const auto sm = pg::score_patches(query, cache, {workers, pg::FrameScoreRule::per_patch_max});
                const auto t1 = std::chrono::steady_clock::now();
                ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
                if (sm.scores.size() != bench_patches) return kExitInternal;
            }
            const double best = *std::min_element(ms.begin(), ms.end());
            json j{{"patches", bench_patches}, {"dim", bench_dim}, {"cache_patches", bench_cache},
                   {"workers", workers},        {"best_ms", best}, {"runs_ms", ms}};
            std::printf("%s\n", j.dump().c_str());
            return kExitOk;
        }
    } catch (const pg::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return e.error_class() == pg::ErrorClass::usage ? kExitUsage : kExitData;
    } catch (const json::exception& e) {
        std::fprintf(stderr, "error: malformed JSON: %s\n", e.what());
        return kExitData;
    } catch (const std::filesystem::filesystem_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return kExitInternal;
    }
    return kExitInternal;
}
