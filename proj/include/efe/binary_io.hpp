#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

// Little-endian binary helpers shared by the checkpoint and dataset formats.
namespace efe::io {

class Writer {
public:
    void bytes(const void* src, std::size_t n) {
        const auto* p = static_cast<const char*>(src);
        buf_.insert(buf_.end(), p, p + n);
    }
    void u32(std::uint32_t v) { le(v); }
    void u64(std::uint64_t v) { le(v); }
    void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }

    std::size_t size() const { return buf_.size(); }
    std::vector<char>& buffer() { return buf_; }

    /// Overwrites a u64 previously written at `offset`.
    void patch_u64(std::size_t offset, std::uint64_t v) {
        for (std::size_t i = 0; i < 8; ++i) buf_[offset + i] = static_cast<char>((v >> (8 * i)) & 0xff);
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
        out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
        if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
    }

private:
    template <class T>
    void le(T v) {
        for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }

    std::vector<char> buf_;
};

class Reader {
public:
    explicit Reader(const std::filesystem::path& path) : path_(path.string()) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot open '" + path_ + "' for reading");
        buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }

    void bytes(void* dst, std::size_t n) {
        need(n);
        std::memcpy(dst, buf_.data() + pos_, n);
        pos_ += n;
    }
    std::uint32_t u32() { return le<std::uint32_t>(); }
    std::uint64_t u64() { return le<std::uint64_t>(); }
    float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
    double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }

    std::size_t pos() const { return pos_; }
    void seek(std::size_t pos) {
        if (pos > buf_.size()) throw std::runtime_error(path_ + ": seek past end of file");
        pos_ = pos;
    }
    std::size_t size() const { return buf_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > buf_.size()) throw std::runtime_error(path_ + ": unexpected end of file");
    }
    template <class T>
    T le() {
        need(sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            v |= static_cast<T>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        }
        pos_ += sizeof(T);
        return v;
    }

    std::string path_;
    std::vector<char> buf_;
    std::size_t pos_ = 0;
};

}  // namespace efe::io
