#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace bcae {

// Error taxonomy. The CLI maps each class to its own exit code, so library
// code should throw the most specific type that applies.
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct format_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct shape_error : format_error {
    using format_error::format_error;
};
struct divergence_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct plugin_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Process exit codes used by the CLI.
enum ExitCode : int {
    exit_ok = 0,
    exit_usage = 2,
    exit_io = 3,
    exit_format = 4,
    exit_divergence = 5,
    exit_plugin = 6,
};

inline constexpr std::uint64_t fnv1a64(const void* data, std::size_t n,
                                       std::uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 1469598103934665603ull) {
    return fnv1a64(s.data(), s.size(), h);
}

// --- little-endian stream helpers -----------------------------------------
// Writers never fail silently; readers throw format_error carrying the byte
// offset of the violation so parse errors are actionable.

namespace detail {
inline void put_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!os) throw io_error("write failed");
}
}  // namespace detail

inline void write_u8(std::ostream& os, std::uint8_t v) { detail::put_bytes(os, &v, 1); }

inline void write_u16le(std::ostream& os, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>(v >> 8)};
    detail::put_bytes(os, b, 2);
}

inline void write_u32le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    detail::put_bytes(os, b, 4);
}

inline void write_u64le(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    detail::put_bytes(os, b, 8);
}

inline void write_f32le(std::ostream& os, float v) {
    std::uint32_t u;
    static_assert(sizeof(u) == sizeof(v));
    __builtin_memcpy(&u, &v, 4);
    write_u32le(os, u);
}

inline void write_f64le(std::ostream& os, double v) {
    std::uint64_t u;
    __builtin_memcpy(&u, &v, 8);
    write_u64le(os, u);
}

// Tracks the read offset so failures can report where the stream went bad.
class ByteReader {
public:
    explicit ByteReader(std::istream& is, std::string source = "stream")
        : is_(is), source_(std::move(source)) {}

    std::size_t offset() const { return offset_; }

    void read_exact(void* p, std::size_t n, const char* what) {
        is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(is_.gcount()) != n) {
            throw format_error(source_ + ": truncated reading " + what + " at byte offset " +
                               std::to_string(offset_));
        }
        offset_ += n;
    }

    std::uint8_t u8(const char* what) {
        std::uint8_t v;
        read_exact(&v, 1, what);
        return v;
    }
    std::uint16_t u16(const char* what) {
        unsigned char b[2];
        read_exact(b, 2, what);
        return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
    }
    std::uint32_t u32(const char* what) {
        unsigned char b[4];
        read_exact(b, 4, what);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
        return v;
    }
    std::uint64_t u64(const char* what) {
        unsigned char b[8];
        read_exact(b, 8, what);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
        return v;
    }
    float f32(const char* what) {
        std::uint32_t u = u32(what);
        float v;
        __builtin_memcpy(&v, &u, 4);
        return v;
    }
    double f64(const char* what) {
        std::uint64_t u = u64(what);
        double v;
        __builtin_memcpy(&v, &u, 8);
        return v;
    }

    // Consumes a 4-byte tag and checks it against the expected magic.
    void expect_magic(const char magic[4], const char* container) {
        std::size_t at = offset_;
        char got[4];
        read_exact(got, 4, "magic");
        if (__builtin_memcmp(got, magic, 4) != 0) {
            throw format_error(source_ + ": bad magic for " + container + " at byte offset " +
                               std::to_string(at));
        }
    }

    const std::string& source() const { return source_; }

private:
    std::istream& is_;
    std::string source_;
    std::size_t offset_ = 0;
};

}  // namespace bcae
