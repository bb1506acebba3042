#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "glt/encoder.hpp"
#include "glt/prototypes.hpp"

namespace glt {

// Flat binary checkpoint:
//   magic "OTL1"
//   u32 input_dim, u32 hidden_dim, u32 embed_dim
//   f64 parameters in declaration order (w1, b1, w2, b2)
//   u32 group count, then per group:
//     u32 K, u8 mode, f64 tau, f64 prototypes (K x embed_dim, row-major)
// All integers and floats little-endian.

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

inline void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_u8(std::ostream& os, std::uint8_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_f64(std::ostream& os, double v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_f64_block(std::ostream& os, const double* data, std::size_t n) {
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
}

inline std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw IoError("checkpoint: truncated");
    return v;
}
inline std::uint8_t read_u8(std::istream& is) {
    std::uint8_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw IoError("checkpoint: truncated");
    return v;
}
inline double read_f64(std::istream& is) {
    double v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw IoError("checkpoint: truncated");
    return v;
}
inline void read_f64_block(std::istream& is, double* data, std::size_t n) {
    is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw IoError("checkpoint: truncated");
}

}  // namespace detail

struct Checkpoint {
    EncoderParams encoder;
    std::vector<PrototypeGroup> groups;
};

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write("OTL1", 4);
    detail::write_u32(os, static_cast<std::uint32_t>(ckpt.encoder.input_dim));
    detail::write_u32(os, static_cast<std::uint32_t>(ckpt.encoder.hidden_dim));
    detail::write_u32(os, static_cast<std::uint32_t>(ckpt.encoder.embed_dim));
    detail::write_f64_block(os, ckpt.encoder.w1.data.data(), ckpt.encoder.w1.data.size());
    detail::write_f64_block(os, ckpt.encoder.b1.data(), ckpt.encoder.b1.size());
    detail::write_f64_block(os, ckpt.encoder.w2.data.data(), ckpt.encoder.w2.data.size());
    detail::write_f64_block(os, ckpt.encoder.b2.data(), ckpt.encoder.b2.size());
    detail::write_u32(os, static_cast<std::uint32_t>(ckpt.groups.size()));
    for (const PrototypeGroup& g : ckpt.groups) {
        detail::write_u32(os, static_cast<std::uint32_t>(g.c.rows));
        detail::write_u8(os, g.mode == PrototypeMode::parametric ? 1 : 0);
        detail::write_f64(os, g.tau);
        detail::write_f64_block(os, g.c.data.data(), g.c.data.size());
    }
    if (!os) throw IoError("checkpoint: write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    char magic[4] = {};
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "OTL1", 4) != 0)
        throw IoError("checkpoint: bad magic in " + path);
    Checkpoint ckpt;
    ckpt.encoder.input_dim = detail::read_u32(is);
    ckpt.encoder.hidden_dim = detail::read_u32(is);
    ckpt.encoder.embed_dim = detail::read_u32(is);
    ckpt.encoder.w1 = Matrix(ckpt.encoder.input_dim, ckpt.encoder.hidden_dim);
    ckpt.encoder.b1.assign(ckpt.encoder.hidden_dim, 0.0);
    ckpt.encoder.w2 = Matrix(ckpt.encoder.hidden_dim, ckpt.encoder.embed_dim);
    ckpt.encoder.b2.assign(ckpt.encoder.embed_dim, 0.0);
    detail::read_f64_block(is, ckpt.encoder.w1.data.data(), ckpt.encoder.w1.data.size());
    detail::read_f64_block(is, ckpt.encoder.b1.data(), ckpt.encoder.b1.size());
    detail::read_f64_block(is, ckpt.encoder.w2.data.data(), ckpt.encoder.w2.data.size());
    detail::read_f64_block(is, ckpt.encoder.b2.data(), ckpt.encoder.b2.size());
    const std::uint32_t n_groups = detail::read_u32(is);
    for (std::uint32_t m = 0; m < n_groups; ++m) {
        PrototypeGroup g;
        const std::uint32_t k = detail::read_u32(is);
        g.mode = detail::read_u8(is) ? PrototypeMode::parametric : PrototypeMode::nonparametric;
        g.tau = detail::read_f64(is);
        g.c = Matrix(k, ckpt.encoder.embed_dim);
        detail::read_f64_block(is, g.c.data.data(), g.c.data.size());
        g.group_id = m;
        ckpt.groups.push_back(std::move(g));
    }
    return ckpt;
}

}  // namespace glt
