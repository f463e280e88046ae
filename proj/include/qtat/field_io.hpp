#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <variant>

#include "qtat/grid.hpp"

namespace qtat {

// QTAF1 binary field container:
//   "QTAF" | u8 version=1 | u8 dimension | u8 kind (0 real64, 1 complex64 pairs)
//   | u32 node count per axis | f64 half_width | f64 values (re,im for complex)
// All multi-byte quantities little-endian, values row-major.
namespace qtaf {

inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::uint8_t kReal = 0;
inline constexpr std::uint8_t kComplex = 1;

void write(std::ostream &os, const RealField &f);
void write(std::ostream &os, const ComplexField &f);
std::variant<RealField, ComplexField> read(std::istream &is);

void save(const std::string &path, const RealField &f);
void save(const std::string &path, const ComplexField &f);
std::variant<RealField, ComplexField> load(const std::string &path);
RealField load_real(const std::string &path);
// Real files are promoted to complex.
ComplexField load_complex(const std::string &path);

}  // namespace qtaf
}  // namespace qtat
