#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace advsr::io {

// Little-endian encoder for the on-disk formats.
class ByteWriter {
public:
    void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
    void u16(std::uint16_t v) { put(v, 2); }
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
    void f64s(std::span<const double> vs)
    {
        for (double v : vs) f64(v);
    }

    std::size_t size() const { return buf_.size(); }
    const std::vector<char>& buffer() const { return buf_; }

private:
    void put(std::uint64_t v, int n)
    {
        for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }
    std::vector<char> buf_;
};

// Bounds-checked decoder; every read past the end throws FormatError.
class ByteReader {
public:
    ByteReader(std::span<const char> data, std::string what) : data_(data), what_(std::move(what)) {}

    std::string bytes(std::size_t n);
    std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    double f64() { return std::bit_cast<double>(get(8)); }
    void f64s(std::span<double> out)
    {
        for (double& v : out) v = f64();
    }

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }
    [[noreturn]] void fail(const std::string& why) const;

private:
    std::uint64_t get(int n);
    std::span<const char> data_;
    std::size_t pos_ = 0;
    std::string what_;
};

std::vector<char> read_file(const std::filesystem::path& path);
// Writes to a sibling temporary then renames over the destination.
void write_file_atomic(const std::filesystem::path& path, std::span<const char> data);
void write_text_atomic(const std::filesystem::path& path, std::string_view text);

// Lower-case hex SHA-256.
std::string sha256_hex(std::span<const char> data);
std::string sha256_hex(std::string_view text);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace advsr::io
