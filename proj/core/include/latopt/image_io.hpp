#pragma once

#include <filesystem>
#include <string>

#include "latopt/density_field.hpp"

namespace latopt {

/// Binary 8-bit PGM (P5). Pixel value round(255 x), so solid material is
/// white; row 0 of the field is the top image row.
std::string encode_pgm(const DensityField& x);
void write_pgm(const DensityField& x, const std::filesystem::path& path);

/// Reads P5 or P2 images back into densities value / maxval.
DensityField decode_pgm(const std::string& bytes);
DensityField read_pgm(const std::filesystem::path& path);

}  // namespace latopt
