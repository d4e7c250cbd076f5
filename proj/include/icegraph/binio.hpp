#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "icegraph/errors.hpp"

namespace icegraph {

/// Little-endian binary stream helpers shared by the checkpoint, dataset and
/// trajectory file formats. All integers are fixed-width LE; doubles are raw
/// IEEE-754 bit patterns, so files round-trip bitwise.
class BinWriter {
public:
    explicit BinWriter(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw ValidationError("cannot open file for writing: " + path);
        path_ = path;
    }

    void u32(std::uint32_t v) { raw(&v, 4); }
    void u64(std::uint64_t v) { raw(&v, 8); }
    void i64(std::int64_t v) { raw(&v, 8); }
    void f64(double v) { raw(&v, 8); }

    void str(const std::string& s) {
        u64(s.size());
        raw(s.data(), s.size());
    }

    void f64_array(const double* p, std::size_t n) { raw(p, n * 8); }
    void f64_vec(const std::vector<double>& v) {
        u64(v.size());
        f64_array(v.data(), v.size());
    }
    void u8_vec(const std::vector<std::uint8_t>& v) {
        u64(v.size());
        raw(v.data(), v.size());
    }

    void close() {
        out_.close();
        if (!out_) throw ValidationError("write failed: " + path_);
    }

private:
    void raw(const void* p, std::size_t n) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    }
    std::ofstream out_;
    std::string path_;
};

class BinReader {
public:
    explicit BinReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw ValidationError("cannot open file: " + path);
    }

    std::uint32_t u32() { std::uint32_t v; raw(&v, 4); return v; }
    std::uint64_t u64() { std::uint64_t v; raw(&v, 8); return v; }
    std::int64_t i64() { std::int64_t v; raw(&v, 8); return v; }
    double f64() { double v; raw(&v, 8); return v; }

    std::string str(std::uint64_t max_len = (1ull << 30)) {
        const std::uint64_t n = u64();
        if (n > max_len) throw ValidationError("corrupt file (string too long): " + path_);
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }

    void f64_array(double* p, std::size_t n) { raw(p, n * 8); }
    std::vector<double> f64_vec(std::uint64_t max_len = (1ull << 32)) {
        const std::uint64_t n = u64();
        if (n > max_len) throw ValidationError("corrupt file (array too long): " + path_);
        std::vector<double> v(n);
        f64_array(v.data(), n);
        return v;
    }
    std::vector<std::uint8_t> u8_vec(std::uint64_t max_len = (1ull << 32)) {
        const std::uint64_t n = u64();
        if (n > max_len) throw ValidationError("corrupt file (array too long): " + path_);
        std::vector<std::uint8_t> v(n);
        raw(v.data(), n);
        return v;
    }

private:
    void raw(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n)
            throw ValidationError("unexpected end of file: " + path_);
    }
    std::ifstream in_;
    std::string path_;
};

/// FNV-1a 64-bit hash, used to fingerprint dataset metadata so that training
/// and evaluation provably use the same normalization bounds.
inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64_str(const std::string& s) { return fnv1a64(s.data(), s.size()); }

} // namespace icegraph
