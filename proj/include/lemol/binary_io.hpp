#ifndef LEMOL_BINARY_IO_HPP
#define LEMOL_BINARY_IO_HPP

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lemol::io {

/// Raised when a persisted file cannot be decoded. `section()` names the part
/// of the layout that failed (header, metadata, episode 3, ...).
class FormatError : public std::runtime_error {
  public:
    FormatError(std::string section, const std::string& what)
        : std::runtime_error(section + ": " + what), section_(std::move(section)) {}
    const std::string& section() const { return section_; }

  private:
    std::string section_;
};

class Writer {
  public:
    explicit Writer(std::vector<std::uint8_t>& out) : out_(out) {}

    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v) { put_le(v, 2); }
    void u32(std::uint32_t v) { put_le(v, 4); }
    void u64(std::uint64_t v) { put_le(v, 8); }
    void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v), 8); }
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }

  private:
    void put_le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t>& out_;
};

class Reader {
  public:
    Reader(const std::uint8_t* p, std::size_t n) : p_(p), end_(p + n) {}

    void set_section(std::string s) { section_ = std::move(s); }
    const std::string& section() const { return section_; }

    std::uint8_t u8() { return static_cast<std::uint8_t>(get_le(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get_le(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
    std::uint64_t u64() { return get_le(8); }
    double f64() { return std::bit_cast<double>(get_le(8)); }
    const std::uint8_t* take(std::size_t n) {
        need(n);
        const std::uint8_t* at = p_;
        p_ += n;
        return at;
    }
    std::string str(std::size_t max_len = 1u << 20) {
        const std::uint32_t n = u32();
        if (n > max_len) fail("string length " + std::to_string(n) + " exceeds limit");
        const auto* b = take(n);
        return std::string(reinterpret_cast<const char*>(b), n);
    }
    const std::uint8_t* cursor() const { return p_; }
    std::size_t remaining() const { return static_cast<std::size_t>(end_ - p_); }

    [[noreturn]] void fail(const std::string& what) const { throw FormatError(section_, what); }

  private:
    void need(std::size_t n) const {
        if (remaining() < n) fail("truncated (needed " + std::to_string(n) + " bytes, " +
                                  std::to_string(remaining()) + " left)");
    }
    std::uint64_t get_le(int n) {
        const auto* b = take(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return v;
    }
    const std::uint8_t* p_;
    const std::uint8_t* end_;
    std::string section_ = "header";
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("cannot open " + path);
    std::vector<std::uint8_t> buf;
    std::uint8_t chunk[1 << 16];
    std::size_t n;
    while ((n = std::fread(chunk, 1, sizeof chunk, f)) > 0) buf.insert(buf.end(), chunk, chunk + n);
    std::fclose(f);
    return buf;
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("cannot create " + path);
    const bool ok = std::fwrite(bytes.data(), 1, bytes.size(), f) == bytes.size();
    const bool closed = std::fclose(f) == 0;
    if (!ok || !closed) throw std::runtime_error("short write to " + path);
}

}  // namespace lemol::io

#endif
