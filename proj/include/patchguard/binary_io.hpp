#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "patchguard/error.hpp"

namespace patchguard {

namespace fs = std::filesystem;

// Little-endian byte sink. Multi-byte values are always emitted LE regardless of host order.
class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) { put_le(v, 2); }
    void u32(std::uint32_t v) { put_le(v, 4); }
    void f32(float v) { put_le(std::bit_cast<std::uint32_t>(v), 4); }
    void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

    const std::vector<std::uint8_t>& data() const noexcept { return buf_; }
    std::vector<std::uint8_t> take() noexcept { return std::move(buf_); }
    void reserve(std::size_t n) { buf_.reserve(n); }

private:
    void put_le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> buf_;
};

// Bounds-checked little-endian reader. Running off the end raises CorruptFileError.
class ByteReader {
public:
    ByteReader(std::span<const std::uint8_t> data, std::string source)
        : data_(data), source_(std::move(source)) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(get_le(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get_le(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
    float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(get_le(4))); }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    std::size_t remaining() const noexcept { return data_.size() - pos_; }
    std::size_t position() const noexcept { return pos_; }
    const std::string& source() const noexcept { return source_; }

    void need(std::size_t n) const {
        if (remaining() < n)
            throw CorruptFileError(source_ + ": unexpected end of data at byte " + std::to_string(pos_) +
                                   " (need " + std::to_string(n) + ", have " +
                                   std::to_string(remaining()) + ")");
    }

private:
    std::uint64_t get_le(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
    std::string source_;
};

inline std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    in.seekg(0, std::ios::end);
    const auto size = in.tellg();
    if (size < 0) throw IoError("cannot stat " + path.string());
    in.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(size));
    if (!buf.empty() && !in.read(reinterpret_cast<char*>(buf.data()), size))
        throw IoError("short read on " + path.string());
    return buf;
}

inline std::string read_file_text(const fs::path& path) {
    auto b = read_file_bytes(path);
    return {b.begin(), b.end()};
}

inline void write_file_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed on " + path.string());
}

inline void write_file_text(const fs::path& path, std::string_view text) {
    write_file_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

}  // namespace patchguard
