#pragma once

#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "patchguard/embedding.hpp"
#include "patchguard/error.hpp"
#include "patchguard/mask.hpp"

namespace patchguard {

enum class Scenario { nominal, traffic_light, stop_sign, ood_object, other };

inline std::string_view to_string(Scenario s) {
    switch (s) {
        case Scenario::nominal: return "nominal";
        case Scenario::traffic_light: return "traffic_light";
        case Scenario::stop_sign: return "stop_sign";
        case Scenario::ood_object: return "ood_object";
        case Scenario::other: return "other";
    }
    return "other";
}

inline Scenario parse_scenario(std::string_view s) {
    for (auto v : {Scenario::nominal, Scenario::traffic_light, Scenario::stop_sign, Scenario::ood_object,
                   Scenario::other})
        if (to_string(v) == s) return v;
    throw FormatError("unknown scenario '" + std::string(s) + "'");
}

struct FrameRecord {
    std::string frame_id;
    std::string experiment_id;
    Scenario scenario = Scenario::nominal;
    bool is_anomalous = false;
    std::string embedding_path;  // relative to the manifest directory
    std::optional<std::string> instance_path;
    std::optional<std::string> gt_mask_path;
    friend bool operator==(const FrameRecord&, const FrameRecord&) = default;
};

struct DatasetManifest {
    fs::path base_dir;  // not serialized; relative paths resolve against it
    std::vector<FrameRecord> frames;

    fs::path resolve(const std::string& rel) const { return base_dir / rel; }

    const FrameRecord* find(std::string_view frame_id) const {
        for (const auto& f : frames)
            if (f.frame_id == frame_id) return &f;
        return nullptr;
    }

    // Structural checks only: unique ids, non-empty experiments.
    void check_structure() const {
        std::set<std::string> seen;
        for (const auto& f : frames) {
            if (f.frame_id.empty()) throw ValidationError("manifest: empty frame_id");
            if (!seen.insert(f.frame_id).second) throw ValidationError("manifest: duplicate frame_id " + f.frame_id);
            if (f.experiment_id.empty()) throw ValidationError("manifest: frame " + f.frame_id + " has empty experiment_id");
            if (f.embedding_path.empty()) throw ValidationError("manifest: frame " + f.frame_id + " has no embedding_path");
        }
    }
};

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
    nlohmann::json frames = nlohmann::json::array();
    for (const auto& f : m.frames) {
        frames.push_back({
            {"frame_id", f.frame_id},
            {"experiment_id", f.experiment_id},
            {"scenario", to_string(f.scenario)},
            {"is_anomalous", f.is_anomalous},
            {"embedding_path", f.embedding_path},
            {"instance_path", f.instance_path ? nlohmann::json(*f.instance_path) : nlohmann::json(nullptr)},
            {"gt_mask_path", f.gt_mask_path ? nlohmann::json(*f.gt_mask_path) : nlohmann::json(nullptr)},
        });
    }
    return {{"version", 1}, {"frames", frames}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j, fs::path base_dir, const std::string& source) {
    auto optional_string = [](const nlohmann::json& f, const char* key) -> std::optional<std::string> {
        if (!f.contains(key) || f.at(key).is_null()) return std::nullopt;
        return f.at(key).get<std::string>();
    };
    try {
        if (j.at("version").get<int>() != 1) throw FormatError(source + ": unsupported manifest version");
        DatasetManifest m;
        m.base_dir = std::move(base_dir);
        for (const auto& f : j.at("frames")) {
            FrameRecord r;
            r.frame_id = f.at("frame_id").get<std::string>();
            r.experiment_id = f.at("experiment_id").get<std::string>();
            r.scenario = parse_scenario(f.at("scenario").get<std::string>());
            r.is_anomalous = f.at("is_anomalous").get<bool>();
            r.embedding_path = f.at("embedding_path").get<std::string>();
            r.instance_path = optional_string(f, "instance_path");
            r.gt_mask_path = optional_string(f, "gt_mask_path");
            m.frames.push_back(std::move(r));
        }
        m.check_structure();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(source + ": " + e.what());
    }
}

inline DatasetManifest load_manifest(const fs::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file_text(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return manifest_from_json(j, path.parent_path(), path.string());
}

inline void save_manifest(const DatasetManifest& m, const fs::path& path) {
    write_file_text(path, manifest_to_json(m).dump(2) + "\n");
}

// Everything one frame needs downstream of the manifest.
struct LoadedFrame {
    const FrameRecord* record = nullptr;
    PatchEmbeddingGrid grid;
    std::optional<InstanceSet> instances;
    std::optional<BinaryMask> gt_mask;
};

inline LoadedFrame load_frame(const DatasetManifest& m, const FrameRecord& f, bool want_instances, bool want_gt) {
    LoadedFrame out;
    out.record = &f;
    out.grid = load_grid(m.resolve(f.embedding_path), f.frame_id);
    if (want_instances) {
        if (!f.instance_path) throw ValidationError("frame " + f.frame_id + " has no instance_path");
        out.instances = load_instances(m.resolve(*f.instance_path), out.grid.geometry, f.frame_id);
        if (out.instances->dim != out.grid.dim)
            throw IncompatibleError("frame " + f.frame_id + ": instance dim differs from grid dim");
    }
    if (want_gt && f.gt_mask_path) {
        out.gt_mask = load_mask_pgm(m.resolve(*f.gt_mask_path));
        if (out.gt_mask->height() != out.grid.geometry.pixel_height() ||
            out.gt_mask->width() != out.grid.geometry.pixel_width())
            throw GeometryError("frame " + f.frame_id + ": GT mask shape does not match grid pixel size");
    }
    return out;
}

struct ValidationReport {
    std::size_t frames = 0;
    std::size_t anomalous = 0;
    std::size_t with_instances = 0;
    std::vector<std::string> errors;  // one entry per failing frame
    bool ok() const noexcept { return errors.empty(); }
};

// Loads every referenced file. Anomalous frames must carry a non-empty GT mask.
inline ValidationReport validate_dataset(const DatasetManifest& m) {
    ValidationReport rep;
    m.check_structure();
    std::optional<std::uint32_t> dim;
    for (const auto& f : m.frames) {
        ++rep.frames;
        try {
            if (f.is_anomalous) {
                ++rep.anomalous;
                if (!f.gt_mask_path) throw ValidationError("anomalous frame without gt_mask_path");
            }
            auto lf = load_frame(m, f, f.instance_path.has_value(), true);
            if (lf.instances) ++rep.with_instances;
            if (f.is_anomalous && !lf.gt_mask->any()) throw ValidationError("anomalous frame with empty GT mask");
            if (dim && *dim != lf.grid.dim)
                throw IncompatibleError("dim " + std::to_string(lf.grid.dim) + " differs from " + std::to_string(*dim));
            dim = lf.grid.dim;
        } catch (const Error& e) {
            rep.errors.push_back(f.frame_id + ": " + e.what());
        }
    }
    return rep;
}

}  // namespace patchguard
