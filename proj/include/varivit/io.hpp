#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "varivit/tensor.hpp"

namespace varivit {

// Self-describing binary tensor file:
//   magic "VVT1", u8 version=1, u32 rank, rank x u32 extents,
//   then row-major 32-bit little-endian reals.

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "VVT1 writer assumes a little-endian host");

inline void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}

inline std::uint32_t read_u32(std::istream& is, const std::string& path) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4))
        throw data_error("truncated tensor file: " + path);
    return v;
}

}  // namespace detail

template <typename T>
void write_tensor(const std::filesystem::path& path, const TensorT<T>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw data_error("cannot open for write: " + path.string());
    os.write("VVT1", 4);
    const char version = 1;
    os.put(version);
    detail::write_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t i = 0; i < t.rank(); ++i)
        detail::write_u32(os, static_cast<std::uint32_t>(t.extent(i)));
    for (std::size_t i = 0; i < t.numel(); ++i) {
        float v = static_cast<float>(t[i]);
        os.write(reinterpret_cast<const char*>(&v), 4);
    }
    if (!os) throw data_error("write failed: " + path.string());
}

template <typename T = float>
TensorT<T> read_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw data_error("cannot open tensor file: " + path.string());
    char magic[4] = {};
    if (!is.read(magic, 4) || std::string(magic, 4) != "VVT1")
        throw data_error("bad magic in tensor file: " + path.string());
    int version = is.get();
    if (version != 1)
        throw data_error("unsupported tensor file version: " + path.string());
    std::uint32_t rank = detail::read_u32(is, path.string());
    if (rank > 16) throw data_error("implausible rank in tensor file: " + path.string());
    std::vector<std::size_t> shape(rank);
    for (auto& e : shape) e = detail::read_u32(is, path.string());
    TensorT<T> t(shape);
    for (std::size_t i = 0; i < t.numel(); ++i) {
        float v;
        if (!is.read(reinterpret_cast<char*>(&v), 4))
            throw data_error("truncated tensor file: " + path.string());
        t[i] = static_cast<T>(v);
    }
    return t;
}

}  // namespace varivit
