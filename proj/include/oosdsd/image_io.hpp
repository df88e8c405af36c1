#pragma once

#include "oosdsd/types.hpp"

#include <filesystem>

namespace oosdsd::io {

/// Reads an 8-bit PNG or a JPEG as RGB in [0,1] (gray and alpha are converted).
Image read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

Grid<std::uint8_t> read_png_gray8(const std::filesystem::path& path);
void write_png_gray8(const std::filesystem::path& path, const Grid<std::uint8_t>& pixels);

Grid<std::uint16_t> read_png_gray16(const std::filesystem::path& path);
void write_png_gray16(const std::filesystem::path& path, const Grid<std::uint16_t>& pixels);

/// Binary masks are stored as 0/255 and read back with a 127 threshold.
SegmentationMap read_mask(const std::filesystem::path& path);
void write_mask(const std::filesystem::path& path, const SegmentationMap& mask);

/// Raw depth as 16-bit gray, value / 65535.
DepthMap read_depth_png(const std::filesystem::path& path);
void write_depth_png(const std::filesystem::path& path, const DepthMap& depth);

/// Floating-point depth sidecar: "OOSDEPTH" magic, u32 rows, u32 cols, u8 normalized, f64 data.
DepthMap read_depth_bin(const std::filesystem::path& path);
void write_depth_bin(const std::filesystem::path& path, const DepthMap& depth);

std::uint32_t file_crc32(const std::filesystem::path& path);

} // namespace oosdsd::io
