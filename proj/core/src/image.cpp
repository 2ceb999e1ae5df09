#include "satqa/image.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>

#include "satqa/errors.hpp"

namespace satqa {

RgbImage::RgbImage(int height, int width, float fill)
    : height_(height), width_(width), pixels_(static_cast<std::size_t>(height) * width * 3, fill) {
  if (height <= 0 || width <= 0) throw ContractError("image dimensions must be positive");
}

RgbImage::RgbImage(int height, int width, std::vector<float> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
  if (pixels_.size() != static_cast<std::size_t>(height) * width * 3) {
    throw ContractError("pixel buffer does not match " + std::to_string(height) + "x" + std::to_string(width) + "x3");
  }
}

void RgbImage::clamp01() {
  for (float& v : pixels_) v = std::clamp(v, 0.0f, 1.0f);
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

RgbImage load_png(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) throw IoError("libpng init failed for " + path.string());
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("corrupt PNG: " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_alpha(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY || png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_swap(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  std::vector<std::uint8_t> buf(rowbytes * static_cast<std::size_t>(h));
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = buf.data() + rowbytes * static_cast<std::size_t>(y);
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  RgbImage img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const std::size_t i = static_cast<std::size_t>(x) * 3 + c;
        if (depth == 16) {
          const auto* row16 = reinterpret_cast<const std::uint16_t*>(rows[static_cast<std::size_t>(y)]);
          img.at(y, x, c) = static_cast<float>(row16[i] / 65535.0);
        } else {
          img.at(y, x, c) = static_cast<float>(rows[static_cast<std::size_t>(y)][i] / 255.0);
        }
      }
  return img;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

RgbImage load_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0, maxv = 0;
  in >> magic >> w >> h >> maxv;
  in.get();
  if (magic != "P6" || w <= 0 || h <= 0 || maxv <= 0 || maxv > 255) throw IoError("unsupported PPM: " + path.string());
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!in) throw IoError("truncated PPM: " + path.string());
  std::vector<float> px(buf.size());
  for (std::size_t i = 0; i < buf.size(); ++i) px[i] = static_cast<float>(buf[i] / static_cast<double>(maxv));
  return RgbImage(h, w, std::move(px));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

RgbImage load_image(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw IoError("unreadable image file: " + path.string());
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return load_png(path);
  if (ext == ".jpg" || ext == ".jpeg") {
    const auto bytes = read_file(path);
    try {
      return decode_jpeg(bytes);
    } catch (const IoError&) {
      throw IoError("corrupt JPEG: " + path.string());
    }
  }
  if (ext == ".ppm") return load_ppm(path);
  throw IoError("unsupported image format: " + path.string());
}

void save_png(const RgbImage& img, const std::filesystem::path& path) {
  FilePtr f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) throw IoError("libpng init failed for " + path.string());
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG write failed: " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width()), static_cast<png_uint_32>(img.height()), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  // No timestamps or text chunks: bytes depend on pixels only.
  png_write_info(png, info);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width()) * 3);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) row[static_cast<std::size_t>(x) * 3 + c] = to_byte(img.at(y, x, c));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<std::uint8_t> encode_jpeg(const RgbImage& img, int quality) {
  jpeg_compress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  unsigned char* out = nullptr;
  unsigned long out_size = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    std::free(out);
    throw IoError("JPEG encode failed");
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &out, &out_size);
  cinfo.image_width = static_cast<JDIMENSION>(img.width());
  cinfo.image_height = static_cast<JDIMENSION>(img.height());
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, std::clamp(quality, 1, 100), TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width()) * 3);
  while (cinfo.next_scanline < cinfo.image_height) {
    const int y = static_cast<int>(cinfo.next_scanline);
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) row[static_cast<std::size_t>(x) * 3 + c] = to_byte(img.at(y, x, c));
    JSAMPROW rp = row.data();
    jpeg_write_scanlines(&cinfo, &rp, 1);
  }
  jpeg_finish_compress(&cinfo);
  std::vector<std::uint8_t> bytes(out, out + out_size);
  jpeg_destroy_compress(&cinfo);
  std::free(out);
  return bytes;
}

RgbImage decode_jpeg(std::span<const std::uint8_t> bytes) {
  jpeg_decompress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw IoError("JPEG decode failed");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const int w = static_cast<int>(cinfo.output_width), h = static_cast<int>(cinfo.output_height);
  RgbImage img(h, w);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    const int y = static_cast<int>(cinfo.output_scanline);
    JSAMPROW rp = row.data();
    jpeg_read_scanlines(&cinfo, &rp, 1);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(row[static_cast<std::size_t>(x) * 3 + c] / 255.0);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

void save_jpeg(const RgbImage& img, const std::filesystem::path& path, int quality) {
  save_bytes(encode_jpeg(img, quality), path);
}

void save_bytes(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

RgbImage quantize8(const RgbImage& img) {
  RgbImage out = img;
  for (float& v : out.pixels()) v = static_cast<float>(to_byte(v) / 255.0);
  return out;
}

RgbImage crop(const RgbImage& img, int top, int left, int height, int width) {
  if (top < 0 || left < 0 || top + height > img.height() || left + width > img.width()) {
    throw ContractError("crop window outside image");
  }
  RgbImage out(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(top + y, left + x, c);
  return out;
}

RgbImage flip_horizontal(const RgbImage& img) {
  RgbImage out(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, img.width() - 1 - x, c);
  return out;
}

RgbImage flip_vertical(const RgbImage& img) {
  RgbImage out(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(img.height() - 1 - y, x, c);
  return out;
}

namespace {

double cubic(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

}  // namespace

RgbImage resize_bicubic(const RgbImage& img, int height, int width) {
  RgbImage out(height, width);
  const double sy = static_cast<double>(img.height()) / height;
  const double sx = static_cast<double>(img.width()) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = (y + 0.5) * sy - 0.5;
    const int iy = static_cast<int>(std::floor(fy));
    for (int x = 0; x < width; ++x) {
      const double fx = (x + 0.5) * sx - 0.5;
      const int ix = static_cast<int>(std::floor(fx));
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int m = -1; m <= 2; ++m) {
          const double wy = cubic(fy - (iy + m));
          const int yy = std::clamp(iy + m, 0, img.height() - 1);
          for (int n = -1; n <= 2; ++n) {
            const int xx = std::clamp(ix + n, 0, img.width() - 1);
            acc += wy * cubic(fx - (ix + n)) * img.at(yy, xx, c);
          }
        }
        out.at(y, x, c) = static_cast<float>(acc);
      }
    }
  }
  out.clamp01();
  return out;
}

double mse(const RgbImage& a, const RgbImage& b) {
  if (a.height() != b.height() || a.width() != b.width()) throw ContractError("mse: image sizes differ");
  double s = 0.0;
  const auto pa = a.pixels();
  const auto pb = b.pixels();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const double d = static_cast<double>(pa[i]) - pb[i];
    s += d * d;
  }
  return s / static_cast<double>(pa.size());
}

double psnr(const RgbImage& a, const RgbImage& b) {
  const double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / m);
}

Tensor to_model_input(const RgbImage& img) {
  static constexpr double kMean[3] = {0.485, 0.456, 0.406};
  static constexpr double kStd[3] = {0.229, 0.224, 0.225};
  Tensor t(Shape{3, img.height(), img.width()});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) t.at(c, y, x) = (img.at(y, x, c) - kMean[c]) / kStd[c];
  return t;
}

}  // namespace satqa
