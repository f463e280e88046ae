#include "qtat/field_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace qtat::qtaf {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename U>
U byteswap_if_needed(U v) {
    if constexpr (std::endian::native == std::endian::big) {
        unsigned char b[sizeof(U)];
        std::memcpy(b, &v, sizeof(U));
        for (std::size_t i = 0; i < sizeof(U) / 2; ++i) std::swap(b[i], b[sizeof(U) - 1 - i]);
        std::memcpy(&v, b, sizeof(U));
    }
    return v;
}

void put_u32(std::ostream &os, std::uint32_t v) {
    v = byteswap_if_needed(v);
    os.write(reinterpret_cast<const char *>(&v), sizeof v);
}

void put_f64(std::ostream &os, double d) {
    std::uint64_t v = std::bit_cast<std::uint64_t>(d);
    v = byteswap_if_needed(v);
    os.write(reinterpret_cast<const char *>(&v), sizeof v);
}

std::uint8_t get_u8(std::istream &is) {
    char c;
    if (!is.get(c)) throw ConfigError("QTAF1: truncated header");
    return static_cast<std::uint8_t>(c);
}

std::uint32_t get_u32(std::istream &is) {
    std::uint32_t v;
    if (!is.read(reinterpret_cast<char *>(&v), sizeof v)) throw ConfigError("QTAF1: truncated header");
    return byteswap_if_needed(v);
}

double get_f64(std::istream &is) {
    std::uint64_t v;
    if (!is.read(reinterpret_cast<char *>(&v), sizeof v)) throw ConfigError("QTAF1: truncated payload");
    return std::bit_cast<double>(byteswap_if_needed(v));
}

void write_header(std::ostream &os, const Grid &g, std::uint8_t kind) {
    os.write("QTAF", 4);
    os.put(static_cast<char>(kVersion));
    os.put(static_cast<char>(g.dimension()));
    os.put(static_cast<char>(kind));
    for (int a = 0; a < g.dimension(); ++a) put_u32(os, static_cast<std::uint32_t>(g.count(a)));
    put_f64(os, g.half_width());
}

}  // namespace

void write(std::ostream &os, const RealField &f) {
    write_header(os, f.grid(), kReal);
    for (double v : f.values()) put_f64(os, v);
    if (!os) throw ConfigError("QTAF1: write failed");
}

void write(std::ostream &os, const ComplexField &f) {
    write_header(os, f.grid(), kComplex);
    for (const auto &v : f.values()) {
        put_f64(os, v.real());
        put_f64(os, v.imag());
    }
    if (!os) throw ConfigError("QTAF1: write failed");
}

std::variant<RealField, ComplexField> read(std::istream &is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "QTAF", 4) != 0) throw ConfigError("QTAF1: bad magic");
    if (get_u8(is) != kVersion) throw ConfigError("QTAF1: unsupported version");
    const int dim = get_u8(is);
    const std::uint8_t kind = get_u8(is);
    if (dim != 2 && dim != 3) throw ConfigError("QTAF1: unsupported dimension");
    if (kind != kReal && kind != kComplex) throw ConfigError("QTAF1: unknown scalar kind");
    std::vector<std::size_t> counts(dim);
    for (auto &c : counts) c = get_u32(is);
    const double half_width = get_f64(is);
    Grid grid(counts, half_width);
    if (kind == kReal) {
        RealField f(grid);
        for (auto &v : f.values()) v = get_f64(is);
        return f;
    }
    ComplexField f(grid);
    for (auto &v : f.values()) {
        const double re = get_f64(is);
        const double im = get_f64(is);
        v = {re, im};
    }
    return f;
}

void save(const std::string &path, const RealField &f) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot open for writing: " + path);
    write(os, f);
}

void save(const std::string &path, const ComplexField &f) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot open for writing: " + path);
    write(os, f);
}

std::variant<RealField, ComplexField> load(const std::string &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FileNotFoundError("file not found: " + path);
    return read(is);
}

RealField load_real(const std::string &path) {
    auto v = load(path);
    if (!std::holds_alternative<RealField>(v)) throw ConfigError("expected a real field in " + path);
    return std::get<RealField>(std::move(v));
}

ComplexField load_complex(const std::string &path) {
    auto v = load(path);
    if (std::holds_alternative<RealField>(v)) return to_complex(std::get<RealField>(v));
    return std::get<ComplexField>(std::move(v));
}

}  // namespace qtat::qtaf
