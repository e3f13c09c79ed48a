#pragma once

// Little-endian byte stream helpers shared by the partition file format,
// the request envelope and the transport frames. Reads are bounds-checked
// and report the field that ran off the end.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "mdc/error.hpp"

namespace mdc {

class ByteWriter {
  public:
    void u8(uint8_t v) { buf_.push_back(v); }
    void u16(uint16_t v) { le(v); }
    void u32(uint32_t v) { le(v); }
    void u64(uint64_t v) { le(v); }
    void i64(int64_t v) { le(static_cast<uint64_t>(v)); }

    void f64(double v) {
        uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        le(bits);
    }

    void bytes(const void* p, size_t n) {
        const auto* b = static_cast<const uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }

    // u16 length prefix + raw bytes; the convention for all names on the wire.
    void str16(const std::string& s) {
        if (s.size() > 0xffff) throw DecodeError("string too long for u16 prefix");
        u16(static_cast<uint16_t>(s.size()));
        bytes(s.data(), s.size());
    }

    size_t size() const { return buf_.size(); }
    const std::vector<uint8_t>& data() const { return buf_; }
    std::vector<uint8_t> take() { return std::move(buf_); }

  private:
    template <typename T>
    void le(T v) {
        for (size_t i = 0; i < sizeof(T); ++i)
            buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }

    std::vector<uint8_t> buf_;
};

class ByteReader {
  public:
    ByteReader(const uint8_t* p, size_t n) : p_(p), n_(n) {}
    explicit ByteReader(const std::vector<uint8_t>& v) : p_(v.data()), n_(v.size()) {}

    uint8_t u8(const char* field) { return take(field, 1)[0]; }
    uint16_t u16(const char* field) { return le<uint16_t>(field); }
    uint32_t u32(const char* field) { return le<uint32_t>(field); }
    uint64_t u64(const char* field) { return le<uint64_t>(field); }
    int64_t i64(const char* field) { return static_cast<int64_t>(le<uint64_t>(field)); }

    double f64(const char* field) {
        uint64_t bits = le<uint64_t>(field);
        double v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }

    std::string str16(const char* field) {
        uint16_t n = u16(field);
        const uint8_t* p = take(field, n);
        return std::string(reinterpret_cast<const char*>(p), n);
    }

    // Raw view into the buffer; caller copies what it needs.
    const uint8_t* take(const char* field, size_t n) {
        if (n > n_ - off_) throw DecodeError(std::string("truncated at ") + field);
        const uint8_t* p = p_ + off_;
        off_ += n;
        return p;
    }

    size_t remaining() const { return n_ - off_; }
    size_t offset() const { return off_; }
    bool done() const { return off_ == n_; }

  private:
    template <typename T>
    T le(const char* field) {
        const uint8_t* p = take(field, sizeof(T));
        T v = 0;
        for (size_t i = 0; i < sizeof(T); ++i)
            v |= static_cast<T>(static_cast<T>(p[i]) << (8 * i));
        return v;
    }

    const uint8_t* p_;
    size_t n_;
    size_t off_ = 0;
};

} // namespace mdc
