#include "stainalign/image_io.hpp"

#include <png.h>
#include <tiffio.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "stainalign/error.hpp"

namespace stainalign {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct TiffCloser {
  void operator()(TIFF* t) const noexcept {
    if (t != nullptr) TIFFClose(t);
  }
};
using TiffPtr = std::unique_ptr<TIFF, TiffCloser>;

[[noreturn]] void io_error(const std::filesystem::path& path, const std::string& what) {
  throw Error(ErrorCode::io, path.string() + ": " + what);
}

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

bool is_png_signature(const std::array<unsigned char, 8>& head) {
  return png_sig_cmp(head.data(), 0, head.size()) == 0;
}

bool is_tiff_signature(const std::array<unsigned char, 8>& head) {
  return (head[0] == 'I' && head[1] == 'I' && head[2] == 42 && head[3] == 0) ||
         (head[0] == 'M' && head[1] == 'M' && head[2] == 0 && head[3] == 42);
}

// ---- PNG ------------------------------------------------------------------

Raster load_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) io_error(path, "cannot open");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) io_error(path, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    io_error(path, "png_create_info_struct failed");
  }

  std::vector<std::uint8_t> data;
  int width = 0;
  int height = 0;
  int channels = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    io_error(path, "corrupt PNG");
  }
  png_init_io(png, file.get());
  png_read_info(png, info);

  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if ((color & PNG_COLOR_MASK_ALPHA) != 0 || png_get_valid(png, info, PNG_INFO_tRNS)) {
    png_set_strip_alpha(png);
  }
  png_read_update_info(png, info);

  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));
  channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    io_error(path, "unsupported PNG channel layout");
  }
  const std::size_t stride = png_get_rowbytes(png, info);
  data.resize(stride * static_cast<std::size_t>(height));
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) rows[y] = data.data() + stride * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return Raster(width, height, channels, std::move(data));
}

void save_png(const std::filesystem::path& path, const Raster& img) {
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) io_error(path, "cannot open for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) io_error(path, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    io_error(path, "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    io_error(path, "PNG write failed");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width()),
               static_cast<png_uint_32>(img.height()), 8,
               img.channels() == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(img.width()) * img.channels();
  auto* base = const_cast<std::uint8_t*>(img.data().data());
  for (int y = 0; y < img.height(); ++y) png_write_row(png, base + stride * y);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// ---- TIFF -----------------------------------------------------------------

Raster load_tiff(const std::filesystem::path& path) {
  TIFFSetWarningHandler(nullptr);
  TiffPtr tif(TIFFOpen(path.c_str(), "r"));
  if (!tif) io_error(path, "cannot open TIFF");

  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint16_t samples = 1;
  std::uint16_t bits = 8;
  TIFFGetField(tif.get(), TIFFTAG_IMAGEWIDTH, &width);
  TIFFGetField(tif.get(), TIFFTAG_IMAGELENGTH, &height);
  TIFFGetFieldDefaulted(tif.get(), TIFFTAG_SAMPLESPERPIXEL, &samples);
  TIFFGetFieldDefaulted(tif.get(), TIFFTAG_BITSPERSAMPLE, &bits);
  if (width == 0 || height == 0) io_error(path, "empty TIFF");
  if (bits != 8) io_error(path, "only 8-bit TIFF is supported");

  // The RGBA interface handles strips, tiles and photometric variants alike.
  std::vector<std::uint32_t> rgba(static_cast<std::size_t>(width) * height);
  if (TIFFReadRGBAImageOriented(tif.get(), width, height, rgba.data(), ORIENTATION_TOPLEFT, 0) ==
      0) {
    io_error(path, "TIFF decode failed");
  }
  const int channels = samples >= 3 ? 3 : 1;
  Raster out(static_cast<int>(width), static_cast<int>(height), channels);
  auto dst = out.data();
  for (std::size_t i = 0; i < rgba.size(); ++i) {
    const std::uint32_t px = rgba[i];
    if (channels == 3) {
      dst[3 * i] = static_cast<std::uint8_t>(TIFFGetR(px));
      dst[3 * i + 1] = static_cast<std::uint8_t>(TIFFGetG(px));
      dst[3 * i + 2] = static_cast<std::uint8_t>(TIFFGetB(px));
    } else {
      dst[i] = static_cast<std::uint8_t>(TIFFGetR(px));
    }
  }
  return out;
}

void save_tiff(const std::filesystem::path& path, const Raster& img) {
  TiffPtr tif(TIFFOpen(path.c_str(), "w"));
  if (!tif) io_error(path, "cannot open TIFF for writing");
  TIFFSetField(tif.get(), TIFFTAG_IMAGEWIDTH, static_cast<std::uint32_t>(img.width()));
  TIFFSetField(tif.get(), TIFFTAG_IMAGELENGTH, static_cast<std::uint32_t>(img.height()));
  TIFFSetField(tif.get(), TIFFTAG_SAMPLESPERPIXEL, static_cast<std::uint16_t>(img.channels()));
  TIFFSetField(tif.get(), TIFFTAG_BITSPERSAMPLE, static_cast<std::uint16_t>(8));
  TIFFSetField(tif.get(), TIFFTAG_PLANARCONFIG, PLANARCONFIG_CONTIG);
  TIFFSetField(tif.get(), TIFFTAG_PHOTOMETRIC,
               img.channels() == 3 ? PHOTOMETRIC_RGB : PHOTOMETRIC_MINISBLACK);
  TIFFSetField(tif.get(), TIFFTAG_COMPRESSION, COMPRESSION_NONE);
  TIFFSetField(tif.get(), TIFFTAG_ROWSPERSTRIP, static_cast<std::uint32_t>(img.height()));
  const std::size_t stride = static_cast<std::size_t>(img.width()) * img.channels();
  const auto bytes = static_cast<tmsize_t>(stride * img.height());
  auto* base = const_cast<std::uint8_t*>(img.data().data());
  if (TIFFWriteEncodedStrip(tif.get(), 0, base, bytes) < 0) io_error(path, "TIFF write failed");
}

}  // namespace

Raster load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) io_error(path, "cannot open");
  std::array<unsigned char, 8> head{};
  in.read(reinterpret_cast<char*>(head.data()), head.size());
  if (in.gcount() < 4) io_error(path, "file too short");
  in.close();
  if (is_png_signature(head)) return load_png(path);
  if (is_tiff_signature(head)) return load_tiff(path);
  io_error(path, "unrecognised image format (expected PNG or TIFF)");
}

void save_image(const std::filesystem::path& path, const Raster& img) {
  const std::string ext = lower_extension(path);
  if (ext == ".png") {
    save_png(path, img);
  } else if (ext == ".tif" || ext == ".tiff") {
    save_tiff(path, img);
  } else {
    io_error(path, "unsupported output extension");
  }
}

Raster mask_to_raster(const BinaryMask& mask) {
  Raster out(mask.width(), mask.height(), 1);
  auto dst = out.data();
  const auto bits = mask.bits();
  for (std::size_t i = 0; i < bits.size(); ++i) dst[i] = bits[i] != 0 ? 255 : 0;
  return out;
}

BinaryMask load_mask(const std::filesystem::path& path) {
  const Raster img = load_image(path);
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(img.width()) * img.height());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      bits[static_cast<std::size_t>(y) * img.width() + x] = img.at(x, y, 0) != 0 ? 1 : 0;
    }
  }
  return BinaryMask(img.width(), img.height(), std::move(bits));
}

void save_mask(const std::filesystem::path& path, const BinaryMask& mask) {
  save_image(path, mask_to_raster(mask));
}

}  // namespace stainalign
