#pragma once

// Little-endian byte packing shared by the .hclip and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

#include "habitmask/errors.hpp"

namespace habitmask::detail {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class ByteWriter {
public:
    void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
    void u16(std::uint16_t v) { raw(&v, sizeof v); }
    void u32(std::uint32_t v) { raw(&v, sizeof v); }
    void f32(float v) { raw(&v, sizeof v); }
    void str(std::string_view s) { raw(s.data(), s.size()); }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view in) : in_(in) {}

    void raw(void* p, std::size_t n) {
        if (in_.size() - pos_ < n) throw FormatError("unexpected end of data at byte " + std::to_string(pos_));
        std::memcpy(p, in_.data() + pos_, n);
        pos_ += n;
    }
    std::uint16_t u16() {
        std::uint16_t v;
        raw(&v, sizeof v);
        return v;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        raw(&v, sizeof v);
        return v;
    }
    std::string str(std::size_t n) {
        if (in_.size() - pos_ < n) throw FormatError("unexpected end of data at byte " + std::to_string(pos_));
        std::string s(in_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    std::size_t remaining() const noexcept { return in_.size() - pos_; }

private:
    std::string_view in_;
    std::size_t pos_ = 0;
};

std::string read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::string& bytes);

}  // namespace habitmask::detail
