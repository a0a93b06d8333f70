#pragma once

#include <filesystem>

#include "lensnvs/image.hpp"

namespace lensnvs::img {

double srgb_to_linear(double encoded);
double linear_to_srgb(double linear);

/// PFM: 32-bit little-endian floats, scale -1.0, bottom-to-top rows ("Pf" for
/// one channel, "PF" for three). Values are stored as-is (no transfer curve).
Image read_pfm(const std::filesystem::path& path);
void write_pfm(const std::filesystem::path& path, const Image& image);

/// Transfer curve of stored PNG samples. Photographs are sRGB; PSF maps and
/// other measurements are stored linearly.
enum class Transfer { kSrgb, kLinear };

/// PNG: 8- or 16-bit gray/RGB. Samples are decoded to linear on read and
/// clamped to [0,1] and encoded on write. Alpha is discarded.
Image read_png(const std::filesystem::path& path, Transfer transfer = Transfer::kSrgb);
void write_png(const std::filesystem::path& path, const Image& image, int bit_depth = 8,
               Transfer transfer = Transfer::kSrgb);

/// Dispatch on extension (.pfm or .png).
Image read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Image& image, int png_bit_depth = 8);

/// Rounds every sample to float32 precision, i.e. what a PFM round trip yields.
Image quantize_float32(const Image& image);

}  // namespace lensnvs::img
