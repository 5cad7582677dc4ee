#pragma once

#include <string>

#include "dsm/volume.hpp"

namespace dsm {

// Grayscale PFM ("Pf"): rows stored bottom-up, 4-byte floats, the sign of
// the scale line giving byte order (we write -1.0, little-endian). Parsing
// failures throw FormatError with the offending byte offset.
ScalarMap read_pfm(const std::string& path, MapRole role = MapRole::Generic);
void write_pfm(const std::string& path, const ScalarMap& map);

// Dispatches on the magic: binary PGM (P5) and PPM (P6) up to maxval 255,
// converted to luminance in [0, 1] (Rec.601 weights for color), or a
// grayscale PFM taken as-is.
ScalarMap read_image(const std::string& path);

// 8-bit PGM with values mapped linearly from [lo, hi]; a degenerate range
// renders mid-gray.
void write_pgm_heatmap(const std::string& path, const ScalarMap& map, double lo, double hi);

}  // namespace dsm
