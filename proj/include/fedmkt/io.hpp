#pragma once

// Shared serialization plumbing: little-endian byte streams for the binary
// formats (knowledge sets, model checkpoints) and escaping for the
// line-oriented text formats (tokenizer specs, mapping tables, paths).

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fedmkt {

struct SerializationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// The wire contract distinguishes these failure kinds; callers and tests
// match on the concrete type.
struct BadMagicError : SerializationError {
    using SerializationError::SerializationError;
};
struct BadVersionError : SerializationError {
    using SerializationError::SerializationError;
};
struct TruncatedError : SerializationError {
    using SerializationError::SerializationError;
};
struct CorruptError : SerializationError {
    using SerializationError::SerializationError;
};

class ByteWriter {
public:
    void u8(uint8_t v) { buf_.push_back(v); }

    void u16(uint16_t v) { put_le(v); }
    void u32(uint32_t v) { put_le(v); }
    void u64(uint64_t v) { put_le(v); }

    void f32(float v) { put_le(std::bit_cast<uint32_t>(v)); }
    void f64(double v) { put_le(std::bit_cast<uint64_t>(v)); }

    void bytes(const void* p, size_t n) {
        const auto* b = static_cast<const uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }

    void str(std::string_view s) {
        u32(static_cast<uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }

    const std::vector<uint8_t>& data() const { return buf_; }
    std::vector<uint8_t> take() { return std::move(buf_); }

private:
    template <typename T>
    void put_le(T v) {
        for (size_t i = 0; i < sizeof(T); ++i)
            buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }

    std::vector<uint8_t> buf_;
};

class ByteReader {
public:
    explicit ByteReader(const std::vector<uint8_t>& buf) : buf_(buf.data()), size_(buf.size()) {}
    ByteReader(const uint8_t* data, size_t size) : buf_(data), size_(size) {}

    uint8_t u8() { return take_le<uint8_t>(); }
    uint16_t u16() { return take_le<uint16_t>(); }
    uint32_t u32() { return take_le<uint32_t>(); }
    uint64_t u64() { return take_le<uint64_t>(); }

    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }

    std::string str() {
        uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(buf_ + pos_), n);
        pos_ += n;
        return s;
    }

    void raw(void* out, size_t n) {
        need(n);
        std::memcpy(out, buf_ + pos_, n);
        pos_ += n;
    }

    bool at_end() const { return pos_ == size_; }
    size_t remaining() const { return size_ - pos_; }

private:
    template <typename T>
    T take_le() {
        need(sizeof(T));
        T v = 0;
        for (size_t i = 0; i < sizeof(T); ++i)
            v |= static_cast<T>(static_cast<T>(buf_[pos_ + i]) << (8 * i));
        pos_ += sizeof(T);
        return v;
    }

    void need(size_t n) {
        if (size_ - pos_ < n)
            throw TruncatedError("byte stream truncated: need " + std::to_string(n) +
                                 " bytes, have " + std::to_string(size_ - pos_));
    }

    const uint8_t* buf_;
    size_t size_;
    size_t pos_ = 0;
};

// Percent-escaping for token strings inside line-oriented text formats.
// Escapes '%', whitespace and non-printable bytes so every token fits on
// one line and round-trips bit-exactly.
inline std::string escape_token(std::string_view s) {
    static const char hex[] = "0123456789ABCDEF";
    std::string out;
    out.reserve(s.size());
    for (unsigned char c : s) {
        if (c == '%' || c <= 0x20 || c >= 0x7F) {
            out.push_back('%');
            out.push_back(hex[c >> 4]);
            out.push_back(hex[c & 0xF]);
        } else {
            out.push_back(static_cast<char>(c));
        }
    }
    return out;
}

inline std::string unescape_token(std::string_view s) {
    auto hexval = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        return -1;
    };
    std::string out;
    out.reserve(s.size());
    for (size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '%') {
            if (i + 2 >= s.size())
                throw CorruptError("dangling escape in token");
            int hi = hexval(s[i + 1]), lo = hexval(s[i + 2]);
            if (hi < 0 || lo < 0)
                throw CorruptError("bad escape in token");
            out.push_back(static_cast<char> ((hi << 4) | lo));
            i += 2;
        } else {
            out.push_back(s[i]);
        }
    }
    return out;
}

inline void write_file_bytes(const std::string& path, const std::vector<uint8_t>& data) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
        throw std::runtime_error("cannot open for write: " + path);
    f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!f)
        throw std::runtime_error("write failed: " + path);
}

inline std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw std::runtime_error("cannot open for read: " + path);
    std::vector<uint8_t> data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return data;
}

inline void write_file_text(const std::string& path, std::string_view text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
        throw std::runtime_error("cannot open for write: " + path);
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
}

inline std::string read_file_text(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw std::runtime_error("cannot open for read: " + path);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

// 64-bit FNV-1a, used for content ids and frozen-parameter hashes.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t seed = 1469598103934665603ULL) {
    const auto* p = static_cast<const uint8_t*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace fedmkt
