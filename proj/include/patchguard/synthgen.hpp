#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "patchguard/embedding.hpp"
#include "patchguard/error.hpp"
#include "patchguard/manifest.hpp"
#include "patchguard/mask.hpp"
#include "patchguard/scoring.hpp"

namespace patchguard {

// Reproducible draws on top of std::mt19937_64, whose output sequence is fixed
// by the standard. Distributions are derived here rather than through
// std::*_distribution, whose algorithms vary between standard libraries.
class SynthRng {
public:
    explicit SynthRng(std::uint64_t seed) : engine_(seed) {}

    // Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Standard normal by Box-Muller; one draw per call.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    std::uint64_t below(std::uint64_t n) { return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)); }

private:
    std::mt19937_64 engine_;
};

struct SynthConfig {
    std::uint64_t seed = 7;
    std::uint32_t n_experiments = 3;
    std::uint32_t frames_per_experiment = 20;
    FrameGeometry geometry;
    std::uint32_t dim = kDefaultDim;
    std::uint32_t n_clusters = 5;
    double cluster_spread = 0.05;     // radians
    std::uint32_t anomaly_frames = 10;
    std::uint32_t anomaly_patch_count = 4;
    double anomaly_min_angle = 0.8;   // radians, against every cluster center
    std::uint32_t max_rejections = 100000;

    void validate() const {
        if (n_experiments == 0 || frames_per_experiment == 0) throw UsageError("synthgen: need at least one nominal frame");
        if (n_clusters == 0) throw UsageError("synthgen: n_clusters must be positive");
        if (dim < 2) throw UsageError("synthgen: dim must be at least 2");
        if (geometry.grid_h == 0 || geometry.grid_w == 0 || geometry.patch_px == 0)
            throw UsageError("synthgen: grid dimensions must be positive");
        if (!(cluster_spread >= 0.0)) throw UsageError("synthgen: cluster_spread must be non-negative");
        if (!(anomaly_min_angle > 3.0 * cluster_spread))
            throw UsageError("synthgen: anomaly_min_angle must exceed 3 * cluster_spread");
        if (anomaly_patch_count == 0 || anomaly_patch_count > geometry.patch_count())
            throw UsageError("synthgen: anomaly_patch_count must be in [1, grid_h*grid_w]");
    }
};

namespace detail {

inline std::vector<double> random_unit(SynthRng& rng, std::size_t dim) {
    std::vector<double> v(dim);
    double n = 0.0;
    while (n == 0.0) {
        n = 0.0;
        for (auto& x : v) {
            x = rng.normal();
            n += x * x;
        }
    }
    n = std::sqrt(n);
    for (auto& x : v) x /= n;
    return v;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Rotates `center` by an angle |N(0, spread)| (redrawn above 3*spread) towards a
// uniformly random orthogonal direction.
inline std::vector<double> perturb(SynthRng& rng, const std::vector<double>& center, double spread) {
    double theta = std::abs(rng.normal() * spread);
    while (theta > 3.0 * spread) theta = std::abs(rng.normal() * spread);
    std::vector<double> u;
    double un = 0.0;
    while (un < 1e-12) {
        u = random_unit(rng, center.size());
        const double c = dot(u, center);
        for (std::size_t i = 0; i < u.size(); ++i) u[i] -= c * center[i];
        un = std::sqrt(dot(u, u));
    }
    std::vector<double> v(center.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::cos(theta) * center[i] + std::sin(theta) * u[i] / un;
    return v;
}

inline double min_angle_to(const std::vector<double>& v, const std::vector<std::vector<double>>& centers) {
    double best = std::numbers::pi;
    for (const auto& c : centers) best = std::min(best, std::acos(std::clamp(dot(v, c), -1.0, 1.0)));
    return best;
}

// Patch indices of an n-patch block: ceil(sqrt(n)) wide, filled row-major, at a random offset.
inline std::vector<std::size_t> place_block(SynthRng& rng, const FrameGeometry& g, std::uint32_t n) {
    auto bw = static_cast<std::uint32_t>(std::ceil(std::sqrt(static_cast<double>(n))));
    bw = std::min(bw, g.grid_w);
    const std::uint32_t bh = (n + bw - 1) / bw;
    if (bh > g.grid_h) throw UsageError("synthgen: anomaly block does not fit the grid");
    const auto r0 = static_cast<std::uint32_t>(rng.below(g.grid_h - bh + 1));
    const auto c0 = static_cast<std::uint32_t>(rng.below(g.grid_w - bw + 1));
    std::vector<std::size_t> out;
    for (std::uint32_t k = 0; k < n; ++k) out.push_back(std::size_t{r0 + k / bw} * g.grid_w + c0 + k % bw);
    return out;
}

inline BinaryMask patch_mask(const FrameGeometry& g, const std::vector<std::size_t>& patches) {
    BinaryMask m(g.pixel_height(), g.pixel_width());
    for (auto j : patches)
        m.fill_rect(static_cast<std::uint32_t>(j / g.grid_w) * g.patch_px,
                    static_cast<std::uint32_t>(j % g.grid_w) * g.patch_px, g.patch_px, g.patch_px);
    return m;
}

// Rounds through float32 and renormalizes, so checks made here see exactly the
// vectors that end up on disk.
inline std::vector<double> as_stored(const std::vector<double>& v) {
    std::vector<double> out(v.size());
    double n = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = static_cast<double>(static_cast<float>(v[i]));
        n += out[i] * out[i];
    }
    n = std::sqrt(n);
    for (auto& x : out) x /= n;
    return out;
}

inline void store(std::span<float> dst, const std::vector<double>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) dst[i] = static_cast<float>(v[i]);
}

}  // namespace detail

struct SynthDataset {
    DatasetManifest manifest;
    std::vector<std::vector<float>> centers;  // unit cluster centers, for post-hoc checks
};

// Writes grids/, instances/, masks/ and manifest.json under out_dir.
//
// Nominal frames: patch rows are split into horizontal bands, one cluster per
// band, and one block of patches is re-drawn from a random other cluster as a
// nominal "object". Anomalous frames replace the object with
// anomaly_patch_count patches drawn around a direction at least
// anomaly_min_angle from every center (each planted patch is rechecked). Each
// frame's instance file holds the object/anomaly block and a residual.
inline SynthDataset generate(const SynthConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    SynthRng rng(cfg.seed);
    const auto& g = cfg.geometry;
    SynthDataset ds;
    ds.manifest.base_dir = out_dir;

    std::vector<std::vector<double>> centers;
    for (std::uint32_t k = 0; k < cfg.n_clusters; ++k)
        centers.push_back(detail::as_stored(detail::random_unit(rng, cfg.dim)));
    for (const auto& c : centers) ds.centers.emplace_back(c.begin(), c.end());

    auto band_of = [&](std::size_t patch) {
        return static_cast<std::uint32_t>((patch / g.grid_w) * cfg.n_clusters / g.grid_h);
    };
    auto experiment_name = [](std::uint32_t e) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "exp%02u", e);
        return std::string(buf);
    };

    auto emit = [&](const std::string& frame_id, const std::string& experiment, Scenario scenario, bool anomalous,
                    PatchEmbeddingGrid& grid, const std::vector<std::size_t>& block, const char* block_label) {
        grid.frame_id = frame_id;
        const auto block_mask = detail::patch_mask(g, block);
        auto agg = aggregate_instance_embeddings(grid, {block_mask}, true, {std::string(block_label)});
        agg.instances.frame_id = frame_id;

        FrameRecord rec;
        rec.frame_id = frame_id;
        rec.experiment_id = experiment;
        rec.scenario = scenario;
        rec.is_anomalous = anomalous;
        rec.embedding_path = "grids/" + frame_id + ".pemb";
        rec.instance_path = "instances/" + frame_id + ".iemb";
        save_grid(grid, out_dir / rec.embedding_path);
        save_instances(agg.instances, out_dir / *rec.instance_path);
        if (anomalous) {
            rec.gt_mask_path = "masks/" + frame_id + ".pgm";
            save_mask_pgm(block_mask, out_dir / *rec.gt_mask_path);
        }
        ds.manifest.frames.push_back(std::move(rec));
    };

    auto nominal_grid = [&]() {
        PatchEmbeddingGrid grid{"", g, cfg.dim, std::vector<float>(g.patch_count() * cfg.dim)};
        for (std::size_t j = 0; j < g.patch_count(); ++j)
            detail::store(grid.patch(j), detail::perturb(rng, centers[band_of(j)], cfg.cluster_spread));
        return grid;
    };

    for (std::uint32_t e = 0; e < cfg.n_experiments; ++e) {
        for (std::uint32_t f = 0; f < cfg.frames_per_experiment; ++f) {
            auto grid = nominal_grid();
            const auto block = detail::place_block(rng, g, cfg.anomaly_patch_count);
            const auto cluster = static_cast<std::uint32_t>(rng.below(cfg.n_clusters));
            for (auto j : block) detail::store(grid.patch(j), detail::perturb(rng, centers[cluster], cfg.cluster_spread));
            char id[48];
            std::snprintf(id, sizeof id, "%s_f%03u", experiment_name(e).c_str(), f);
            emit(id, experiment_name(e), Scenario::nominal, false, grid, block, "object");
        }
    }

    constexpr std::array<Scenario, 3> kAnomalyScenarios{Scenario::traffic_light, Scenario::stop_sign,
                                                       Scenario::ood_object};
    for (std::uint32_t a = 0; a < cfg.anomaly_frames; ++a) {
        auto grid = nominal_grid();
        const auto block = detail::place_block(rng, g, cfg.anomaly_patch_count);
        std::uint32_t attempts = 0;
        auto next_attempt = [&] {
            if (++attempts > cfg.max_rejections)
                throw UsageError("synthgen: cannot satisfy anomaly_min_angle " + std::to_string(cfg.anomaly_min_angle) +
                                 " in dimension " + std::to_string(cfg.dim));
        };
        std::vector<double> direction = detail::random_unit(rng, cfg.dim);
        while (detail::min_angle_to(direction, centers) < cfg.anomaly_min_angle) {
            next_attempt();
            direction = detail::random_unit(rng, cfg.dim);
        }
        for (auto j : block) {
            auto v = detail::perturb(rng, direction, cfg.cluster_spread);
            while (detail::min_angle_to(detail::as_stored(v), centers) < cfg.anomaly_min_angle) {
                next_attempt();
                v = detail::perturb(rng, direction, cfg.cluster_spread);
            }
            detail::store(grid.patch(j), v);
        }
        char id[32];
        std::snprintf(id, sizeof id, "anom_%03u", a);
        emit(id, experiment_name(a % cfg.n_experiments), kAnomalyScenarios[a % kAnomalyScenarios.size()], true, grid,
             block, "anomaly");
    }

    save_manifest(ds.manifest, out_dir / "manifest.json");
    return ds;
}

}  // namespace patchguard
