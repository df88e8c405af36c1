#include "oosdsd/image_io.hpp"

#include "oosdsd/errors.hpp"

#include <png.h>
#include <jpeglib.h>
#include <zlib.h>

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <vector>

namespace oosdsd::io {
namespace fs = std::filesystem;

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  return f;
}

struct DecodedPng {
  png_uint_32 width = 0, height = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<std::uint8_t> data;  // row-major, big-endian for 16-bit
};

// Reads a PNG. With keep16, 16-bit data is preserved; otherwise stripped to 8 bits.
// Palette and low-bit gray are expanded; alpha is dropped.
DecodedPng decode_png(const fs::path& path, bool keep16) {
  auto f = open_file(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw IoError("'" + path.string() + "' is not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  DecodedPng out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("failed to decode PNG '" + path.string() + "'");
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (depth == 16 && !keep16) png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  out.data.resize(stride * out.height);
  std::vector<png_bytep> rows(out.height);
  for (png_uint_32 r = 0; r < out.height; ++r) rows[r] = out.data.data() + r * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void encode_png(const fs::path& path, std::uint32_t width, std::uint32_t height, int color_type, int bit_depth,
                const std::vector<std::uint8_t>& data) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed to encode PNG '" + path.string() + "'");
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const int channels = color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
  const std::size_t stride = std::size_t(width) * channels * (bit_depth / 8);
  for (std::uint32_t r = 0; r < height; ++r)
    png_write_row(png, const_cast<png_bytep>(data.data() + r * stride));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

Image decode_jpeg(const fs::path& path) {
  auto f = open_file(path, "rb");
  jpeg_decompress_struct cinfo;
  JpegError err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw IoError("failed to decode JPEG '" + path.string() + "'");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const auto W = cinfo.output_width, H = cinfo.output_height;
  Image img(H, W);
  std::vector<JSAMPLE> row(std::size_t(W) * 3);
  while (cinfo.output_scanline < H) {
    const auto r = cinfo.output_scanline;
    JSAMPROW ptr = row.data();
    jpeg_read_scanlines(&cinfo, &ptr, 1);
    for (JDIMENSION c = 0; c < W; ++c)
      for (int k = 0; k < 3; ++k) img.channels[k](r, c) = row[c * 3 + k] / 255.0f;
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

bool has_jpeg_extension(const fs::path& p) {
  auto ext = p.extension().string();
  for (auto& ch : ext) ch = char(std::tolower(static_cast<unsigned char>(ch)));
  return ext == ".jpg" || ext == ".jpeg";
}

std::uint8_t to_u8(float v) {
  const float s = v * 255.0f + 0.5f;
  return s <= 0.0f ? 0 : s >= 255.0f ? 255 : std::uint8_t(s);
}

} // namespace

Image read_image(const fs::path& path) {
  if (has_jpeg_extension(path)) return decode_jpeg(path);
  const auto png = decode_png(path, false);
  Image img(png.height, png.width);
  const int ch = png.channels;
  for (png_uint_32 r = 0; r < png.height; ++r)
    for (png_uint_32 c = 0; c < png.width; ++c) {
      const std::uint8_t* px = png.data.data() + (std::size_t(r) * png.width + c) * ch;
      for (int k = 0; k < 3; ++k) img.channels[k](r, c) = px[ch >= 3 ? k : 0] / 255.0f;
    }
  return img;
}

void write_png(const fs::path& path, const Image& image) {
  const auto H = image.rows(), W = image.cols();
  std::vector<std::uint8_t> data(std::size_t(H * W * 3));
  for (Eigen::Index r = 0; r < H; ++r)
    for (Eigen::Index c = 0; c < W; ++c)
      for (int k = 0; k < 3; ++k) data[(r * W + c) * 3 + k] = to_u8(image.channels[k](r, c));
  encode_png(path, std::uint32_t(W), std::uint32_t(H), PNG_COLOR_TYPE_RGB, 8, data);
}

Grid<std::uint8_t> read_png_gray8(const fs::path& path) {
  const auto png = decode_png(path, false);
  Grid<std::uint8_t> out(png.height, png.width);
  for (png_uint_32 r = 0; r < png.height; ++r)
    for (png_uint_32 c = 0; c < png.width; ++c)
      out(r, c) = png.data[(std::size_t(r) * png.width + c) * png.channels];
  return out;
}

void write_png_gray8(const fs::path& path, const Grid<std::uint8_t>& pixels) {
  std::vector<std::uint8_t> data(pixels.data(), pixels.data() + pixels.size());
  encode_png(path, std::uint32_t(pixels.cols()), std::uint32_t(pixels.rows()), PNG_COLOR_TYPE_GRAY, 8, data);
}

Grid<std::uint16_t> read_png_gray16(const fs::path& path) {
  const auto png = decode_png(path, true);
  Grid<std::uint16_t> out(png.height, png.width);
  const int bytes = png.bit_depth / 8;
  for (png_uint_32 r = 0; r < png.height; ++r)
    for (png_uint_32 c = 0; c < png.width; ++c) {
      const std::uint8_t* px = png.data.data() + (std::size_t(r) * png.width + c) * png.channels * bytes;
      out(r, c) = bytes == 2 ? std::uint16_t((px[0] << 8) | px[1]) : std::uint16_t(px[0] * 257);
    }
  return out;
}

void write_png_gray16(const fs::path& path, const Grid<std::uint16_t>& pixels) {
  std::vector<std::uint8_t> data(std::size_t(pixels.size()) * 2);
  for (Eigen::Index i = 0; i < pixels.size(); ++i) {
    data[2 * i] = std::uint8_t(pixels.data()[i] >> 8);
    data[2 * i + 1] = std::uint8_t(pixels.data()[i] & 0xff);
  }
  encode_png(path, std::uint32_t(pixels.cols()), std::uint32_t(pixels.rows()), PNG_COLOR_TYPE_GRAY, 16, data);
}

SegmentationMap read_mask(const fs::path& path) {
  return {(read_png_gray8(path) > 127).cast<std::uint8_t>()};
}

void write_mask(const fs::path& path, const SegmentationMap& mask) {
  write_png_gray8(path, (mask.pixels > 0).cast<std::uint8_t>() * std::uint8_t(255));
}

DepthMap read_depth_png(const fs::path& path) {
  return {read_png_gray16(path).cast<double>() / 65535.0, false};
}

void write_depth_png(const fs::path& path, const DepthMap& depth) {
  if (depth.normalized) throw ValidationError("16-bit PNG storage is only for raw depth in [0,1]");
  write_png_gray16(path, (depth.pixels.max(0.0).min(1.0) * 65535.0 + 0.5).floor().cast<std::uint16_t>());
}

namespace {
constexpr char kDepthMagic[8] = {'O', 'O', 'S', 'D', 'E', 'P', 'T', 'H'};
}

DepthMap read_depth_bin(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  char magic[8];
  std::uint32_t rows = 0, cols = 0;
  std::uint8_t norm = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&rows), 4);
  in.read(reinterpret_cast<char*>(&cols), 4);
  in.read(reinterpret_cast<char*>(&norm), 1);
  if (!in || std::memcmp(magic, kDepthMagic, 8) != 0) throw IoError("'" + path.string() + "' is not a depth file");
  DepthMap d{DepthGrid(rows, cols), norm != 0};
  in.read(reinterpret_cast<char*>(d.pixels.data()), std::streamsize(d.pixels.size() * sizeof(double)));
  if (!in) throw IoError("truncated depth file '" + path.string() + "'");
  return d;
}

void write_depth_bin(const fs::path& path, const DepthMap& depth) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  const std::uint32_t rows = std::uint32_t(depth.rows()), cols = std::uint32_t(depth.cols());
  const std::uint8_t norm = depth.normalized ? 1 : 0;
  out.write(kDepthMagic, 8);
  out.write(reinterpret_cast<const char*>(&rows), 4);
  out.write(reinterpret_cast<const char*>(&cols), 4);
  out.write(reinterpret_cast<const char*>(&norm), 1);
  out.write(reinterpret_cast<const char*>(depth.pixels.data()), std::streamsize(depth.pixels.size() * sizeof(double)));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::uint32_t file_crc32(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  uLong crc = crc32(0L, Z_NULL, 0);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), std::streamsize(buf.size()));
    const auto n = in.gcount();
    if (n > 0) crc = crc32(crc, reinterpret_cast<const Bytef*>(buf.data()), uInt(n));
  }
  return std::uint32_t(crc);
}

} // namespace oosdsd::io
