#pragma once

// Byte-level file plumbing shared by the checkpoint and dataset formats.
// All multi-byte scalars on disk are little-endian regardless of host order.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "penc/errors.hpp"

namespace penc {

inline void append_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void append_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

/// Sequential reader over an in-memory byte buffer; throws IoError on overrun.
class ByteReader {
  public:
    explicit ByteReader(const std::string& data) : data_(data) {}

    std::size_t remaining() const { return data_.size() - pos_; }

    std::string take(std::size_t n, const char* what) {
        if (remaining() < n) throw IoError(std::string("truncated file: expected ") + what);
        std::string out = data_.substr(pos_, n);
        pos_ += n;
        return out;
    }

    std::uint32_t take_u32(const char* what) {
        if (remaining() < 4) throw IoError(std::string("truncated file: expected ") + what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    double take_f64(const char* what) {
        if (remaining() < 8) throw IoError(std::string("truncated file: expected ") + what);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i)
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 8;
        double v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }

  private:
    const std::string& data_;
    std::size_t pos_ = 0;
};

inline std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failure: " + path.string());
    return bytes;
}

/// Writes to a sibling temp file, then renames over the target. The rename is
/// atomic on POSIX, so readers never observe a partial file.
inline void atomic_write_file(const std::filesystem::path& path, const std::string& bytes) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for writing: " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw IoError("write failure: " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("rename failed: " + tmp.string() + " -> " + path.string());
}

} // namespace penc
