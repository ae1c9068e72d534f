#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "patchguard/binary_io.hpp"
#include "patchguard/error.hpp"

namespace patchguard {

// Row-major binary image. Bits are stored one byte per pixel (0 or 1).
class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(std::uint32_t height, std::uint32_t width)
        : height_(height), width_(width), bits_(std::size_t{height} * width, 0) {}

    std::uint32_t height() const noexcept { return height_; }
    std::uint32_t width() const noexcept { return width_; }
    std::size_t size() const noexcept { return bits_.size(); }

    bool at(std::uint32_t row, std::uint32_t col) const { return bits_[index(row, col)] != 0; }
    void set(std::uint32_t row, std::uint32_t col, bool v = true) { bits_[index(row, col)] = v ? 1 : 0; }
    bool flat(std::size_t i) const { return bits_[i] != 0; }
    void set_flat(std::size_t i, bool v = true) { bits_[i] = v ? 1 : 0; }

    std::size_t count() const noexcept {
        return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
    }
    bool any() const noexcept {
        return std::any_of(bits_.begin(), bits_.end(), [](std::uint8_t b) { return b != 0; });
    }
    bool same_shape(const BinaryMask& o) const noexcept { return height_ == o.height_ && width_ == o.width_; }

    // Sets every pixel of the half-open rectangle, clipped to the mask.
    void fill_rect(std::uint32_t row0, std::uint32_t col0, std::uint32_t rows, std::uint32_t cols) {
        const auto r1 = std::min(height_, row0 + rows);
        const auto c1 = std::min(width_, col0 + cols);
        for (auto r = row0; r < r1; ++r)
            std::fill(bits_.begin() + static_cast<std::ptrdiff_t>(index(r, col0)),
                      bits_.begin() + static_cast<std::ptrdiff_t>(std::size_t{r} * width_ + c1), std::uint8_t{1});
    }

    BinaryMask& operator|=(const BinaryMask& o) {
        if (!same_shape(o)) throw GeometryError("mask union of different shapes");
        for (std::size_t i = 0; i < bits_.size(); ++i) bits_[i] |= o.bits_[i];
        return *this;
    }

    const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }

    friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

private:
    std::size_t index(std::uint32_t row, std::uint32_t col) const noexcept {
        return std::size_t{row} * width_ + col;
    }

    std::uint32_t height_ = 0;
    std::uint32_t width_ = 0;
    std::vector<std::uint8_t> bits_;
};

// ---- P5 PGM ---------------------------------------------------------------

inline std::vector<std::uint8_t> encode_pgm(std::uint32_t height, std::uint32_t width,
                                            const std::vector<std::uint8_t>& gray) {
    const std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), gray.begin(), gray.end());
    return out;
}

inline std::vector<std::uint8_t> encode_pgm(const BinaryMask& m) {
    std::vector<std::uint8_t> gray(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) gray[i] = m.flat(i) ? 255 : 0;
    return encode_pgm(m.height(), m.width(), gray);
}

struct GrayImage {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::vector<std::uint8_t> pixels;
};

inline GrayImage decode_pgm(std::span<const std::uint8_t> bytes, const std::string& source) {
    std::size_t pos = 0;
    auto skip_ws_and_comments = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_uint = [&](const char* what) -> std::uint32_t {
        skip_ws_and_comments();
        if (pos >= bytes.size() || !std::isdigit(bytes[pos]))
            throw FormatError(source + ": expected PGM " + std::string(what));
        std::uint64_t v = 0;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + static_cast<std::uint64_t>(bytes[pos++] - '0');
            if (v > 0xFFFFFFFFull) throw FormatError(source + ": PGM " + std::string(what) + " overflows");
        }
        return static_cast<std::uint32_t>(v);
    };

    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError(source + ": not a P5 PGM");
    pos = 2;
    GrayImage img;
    img.width = read_uint("width");
    img.height = read_uint("height");
    const auto maxval = read_uint("maxval");
    if (maxval != 255) throw FormatError(source + ": PGM maxval must be 255, got " + std::to_string(maxval));
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError(source + ": malformed PGM header");
    ++pos;  // exactly one whitespace byte separates header and raster
    const std::size_t n = std::size_t{img.width} * img.height;
    if (bytes.size() - pos != n)
        throw CorruptFileError(source + ": PGM raster has " + std::to_string(bytes.size() - pos) +
                               " bytes, expected " + std::to_string(n));
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
    return img;
}

inline BinaryMask decode_pgm_mask(std::span<const std::uint8_t> bytes, const std::string& source) {
    const auto img = decode_pgm(bytes, source);
    BinaryMask m(img.height, img.width);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) m.set_flat(i, img.pixels[i] >= 128);
    return m;
}

inline BinaryMask load_mask_pgm(const fs::path& path) {
    return decode_pgm_mask(read_file_bytes(path), path.string());
}

inline void save_mask_pgm(const BinaryMask& m, const fs::path& path) { write_file_bytes(path, encode_pgm(m)); }

// ---- RLE ------------------------------------------------------------------

struct Run {
    std::uint32_t start = 0;
    std::uint32_t length = 0;
    friend bool operator==(const Run&, const Run&) = default;
};

struct RleMask {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::vector<Run> runs;  // strictly increasing, non-adjacent, non-empty
    friend bool operator==(const RleMask&, const RleMask&) = default;
};

inline RleMask mask_to_rle(const BinaryMask& m) {
    RleMask r{m.height(), m.width(), {}};
    const std::size_t n = m.size();
    std::size_t i = 0;
    while (i < n) {
        if (!m.flat(i)) {
            ++i;
            continue;
        }
        const std::size_t start = i;
        while (i < n && m.flat(i)) ++i;
        r.runs.push_back({static_cast<std::uint32_t>(start), static_cast<std::uint32_t>(i - start)});
    }
    return r;
}

inline void validate_runs(const std::vector<Run>& runs, std::size_t total, const std::string& source) {
    std::uint64_t prev_end = 0;
    bool first = true;
    for (std::size_t k = 0; k < runs.size(); ++k) {
        const auto& run = runs[k];
        const std::uint64_t end = std::uint64_t{run.start} + run.length;
        if (run.length == 0) throw FormatError(source + ": RLE run " + std::to_string(k) + " has zero length");
        if (end > total) throw FormatError(source + ": RLE run " + std::to_string(k) + " out of bounds");
        if (!first && run.start <= prev_end)
            throw FormatError(source + ": RLE run " + std::to_string(k) + " overlaps or touches its predecessor");
        prev_end = end;
        first = false;
    }
}

inline BinaryMask rle_to_mask(const RleMask& r, const std::string& source = "rle") {
    BinaryMask m(r.height, r.width);
    validate_runs(r.runs, m.size(), source);
    for (const auto& run : r.runs)
        for (std::uint32_t k = 0; k < run.length; ++k) m.set_flat(std::size_t{run.start} + k);
    return m;
}

inline nlohmann::json rle_to_json(const RleMask& r) {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& run : r.runs) runs.push_back({run.start, run.length});
    return {{"height", r.height}, {"width", r.width}, {"runs", runs}};
}

inline RleMask rle_from_json(const nlohmann::json& j, const std::string& source = "rle") {
    try {
        RleMask r;
        r.height = j.at("height").get<std::uint32_t>();
        r.width = j.at("width").get<std::uint32_t>();
        for (const auto& pair : j.at("runs")) {
            if (!pair.is_array() || pair.size() != 2) throw FormatError(source + ": RLE run must be [start, length]");
            r.runs.push_back({pair[0].get<std::uint32_t>(), pair[1].get<std::uint32_t>()});
        }
        validate_runs(r.runs, std::size_t{r.height} * r.width, source);
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(source + ": " + e.what());
    }
}

}  // namespace patchguard
