#pragma once

#include <filesystem>

#include "stainalign/raster.hpp"

namespace stainalign {

/// Loads an 8-bit PNG or baseline TIFF (strip or tiled). Alpha is dropped,
/// gray+alpha becomes gray, 16-bit PNG samples are reduced to 8 bits.
/// Throws Error(io) on unreadable or unsupported files.
Raster load_image(const std::filesystem::path& path);

/// Writes PNG or TIFF depending on the extension (.png, .tif, .tiff).
void save_image(const std::filesystem::path& path, const Raster& img);

/// Masks are stored as single-channel 8-bit images: 0 = false, 255 = true.
/// On load any nonzero sample (of the first channel) is true.
BinaryMask load_mask(const std::filesystem::path& path);
void save_mask(const std::filesystem::path& path, const BinaryMask& mask);

Raster mask_to_raster(const BinaryMask& mask);

}  // namespace stainalign
