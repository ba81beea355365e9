#include "nlrn/imaging.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "nlrn/rng.hpp"

namespace nlrn {

GrayImage::GrayImage(int height, int width, double fill)
    : height_(height), width_(width),
      pixels_(static_cast<std::size_t>(height) * width, fill) {
  if (height < 1 || width < 1) throw ShapeError("image dimensions must be >= 1");
  clamp();
}

GrayImage::GrayImage(int height, int width, std::vector<double> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
  if (height < 1 || width < 1) throw ShapeError("image dimensions must be >= 1");
  if (pixels_.size() != static_cast<std::size_t>(height) * width) {
    throw ShapeError("pixel buffer does not match image dimensions");
  }
  clamp();
}

void GrayImage::clamp() {
  for (double& p : pixels_) {
    if (!std::isfinite(p)) throw NumericError("non-finite pixel value");
    p = std::min(1.0, std::max(0.0, p));
  }
}

// --- PNG I/O -----------------------------------------------------------------

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

GrayImage load_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open PNG for reading: " + path);

  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
    throw IoError("not a PNG file: " + path);
  }

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialization failed");
  }
  std::vector<png_bytep> row_ptrs;
  std::vector<png_byte> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("PNG decode error: " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);
  if (bit_depth != 8 && bit_depth != 16) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("unsupported PNG bit depth " + std::to_string(bit_depth) + ": " + path);
  }
  if (color_type == PNG_COLOR_TYPE_PALETTE) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("palette PNGs are not supported: " + path);
  }
  // Drop alpha; leave gray vs RGB and 8 vs 16 bit for manual conversion.
  png_set_strip_alpha(png);
  if (bit_depth == 16) png_set_swap(png);  // little-endian words below
  png_read_update_info(png, info);

  const int height = static_cast<int>(png_get_image_height(png, info));
  const int width = static_cast<int>(png_get_image_width(png, info));
  const int channels = png_get_channels(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);

  buffer.resize(rowbytes * height);
  row_ptrs.resize(height);
  for (int y = 0; y < height; ++y) row_ptrs[y] = buffer.data() + rowbytes * y;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const double maxval = bit_depth == 8 ? 255.0 : 65535.0;
  std::vector<double> pixels(static_cast<std::size_t>(height) * width);
  for (int y = 0; y < height; ++y) {
    const png_byte* row = buffer.data() + rowbytes * y;
    for (int x = 0; x < width; ++x) {
      double value;
      auto sample = [&](int c) -> double {
        if (bit_depth == 8) return row[x * channels + c] / maxval;
        const png_byte lo = row[(x * channels + c) * 2];
        const png_byte hi = row[(x * channels + c) * 2 + 1];
        return (lo | (hi << 8)) / maxval;
      };
      if (channels == 1) {
        value = sample(0);
      } else if (channels == 3) {
        value = 0.299 * sample(0) + 0.587 * sample(1) + 0.114 * sample(2);
      } else {
        throw IoError("unsupported PNG channel count " + std::to_string(channels));
      }
      pixels[static_cast<std::size_t>(y) * width + x] = value;
    }
  }
  return GrayImage(height, width, std::move(pixels));
}

void save_png(const GrayImage& img, const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open PNG for writing: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed");
  }
  std::vector<png_byte> buffer;
  std::vector<png_bytep> row_ptrs;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encode error: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width(), img.height(), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  buffer.resize(static_cast<std::size_t>(img.height()) * img.width());
  row_ptrs.resize(img.height());
  for (int y = 0; y < img.height(); ++y) {
    row_ptrs[y] = buffer.data() + static_cast<std::size_t>(y) * img.width();
    for (int x = 0; x < img.width(); ++x) {
      row_ptrs[y][x] = static_cast<png_byte>(std::lround(img.at(y, x) * 255.0));
    }
  }
  png_write_image(png, row_ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// --- bicubic -----------------------------------------------------------------

namespace {

// Catmull-Rom-family kernel, a = -0.5.
double cubic_weight(double t) {
  t = std::abs(t);
  if (t <= 1.0) return (1.5 * t - 2.5) * t * t + 1.0;
  if (t < 2.0) return ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0;
  return 0.0;
}

// One separable pass along x: in [h, w_in] -> out [h, w_out].
std::vector<double> resample_rows(const std::vector<double>& in, int h, int w_in,
                                  int w_out) {
  std::vector<double> out(static_cast<std::size_t>(h) * w_out);
  const double step = static_cast<double>(w_in) / w_out;
  for (int x = 0; x < w_out; ++x) {
    const double sx = (x + 0.5) * step - 0.5;
    const int base = static_cast<int>(std::floor(sx));
    const double frac = sx - base;
    double wgt[4];
    for (int k = 0; k < 4; ++k) wgt[k] = cubic_weight(frac - (k - 1));
    int idx[4];
    for (int k = 0; k < 4; ++k) idx[k] = std::clamp(base + k - 1, 0, w_in - 1);
    for (int y = 0; y < h; ++y) {
      const double* row = in.data() + static_cast<std::size_t>(y) * w_in;
      out[static_cast<std::size_t>(y) * w_out + x] =
          wgt[0] * row[idx[0]] + wgt[1] * row[idx[1]] + wgt[2] * row[idx[2]] +
          wgt[3] * row[idx[3]];
    }
  }
  return out;
}

std::vector<double> transpose_buf(const std::vector<double>& in, int h, int w) {
  std::vector<double> out(in.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out[static_cast<std::size_t>(x) * h + y] = in[static_cast<std::size_t>(y) * w + x];
  return out;
}

}  // namespace

GrayImage bicubic_resize(const GrayImage& img, int out_height, int out_width) {
  if (out_height < 1 || out_width < 1) throw ShapeError("degenerate bicubic output size");
  std::vector<double> horiz =
      resample_rows(img.pixels(), img.height(), img.width(), out_width);
  std::vector<double> t = transpose_buf(horiz, img.height(), out_width);
  std::vector<double> vert = resample_rows(t, out_width, img.height(), out_height);
  return GrayImage(out_height, out_width, transpose_buf(vert, out_width, out_height));
}

GrayImage bicubic_resize(const GrayImage& img, double factor) {
  if (factor <= 0) throw ShapeError("bicubic factor must be positive");
  const int oh = std::max(1, static_cast<int>(std::lround(img.height() * factor)));
  const int ow = std::max(1, static_cast<int>(std::lround(img.width() * factor)));
  return bicubic_resize(img, oh, ow);
}

// --- metrics -----------------------------------------------------------------

double psnr(const GrayImage& a, const GrayImage& b, int border_crop) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError("psnr on images of different sizes");
  }
  const int half = std::min(a.height(), a.width()) / 2;
  if (border_crop < 0 || border_crop >= std::max(1, half)) {
    throw ShapeError("psnr border crop too large");
  }
  double se = 0;
  std::size_t n = 0;
  for (int y = border_crop; y < a.height() - border_crop; ++y) {
    for (int x = border_crop; x < a.width() - border_crop; ++x) {
      const double d = a.at(y, x) - b.at(y, x);
      se += d * d;
      ++n;
    }
  }
  const double mse = se / static_cast<double>(n);
  if (mse <= 0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

double ssim(const GrayImage& a, const GrayImage& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError("ssim on images of different sizes");
  }
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  constexpr double kC1 = 0.01 * 0.01;  // (K1*L)^2, L=1
  constexpr double kC2 = 0.03 * 0.03;
  if (a.height() < kWin || a.width() < kWin) throw ShapeError("ssim image smaller than window");

  double win[kWin][kWin];
  double wsum = 0;
  for (int u = 0; u < kWin; ++u) {
    for (int v = 0; v < kWin; ++v) {
      const double dy = u - kWin / 2, dx = v - kWin / 2;
      win[u][v] = std::exp(-(dy * dy + dx * dx) / (2.0 * kSigma * kSigma));
      wsum += win[u][v];
    }
  }
  for (auto& row : win)
    for (double& w : row) w /= wsum;

  double total = 0;
  std::size_t count = 0;
  for (int y = 0; y + kWin <= a.height(); ++y) {
    for (int x = 0; x + kWin <= a.width(); ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int u = 0; u < kWin; ++u) {
        for (int v = 0; v < kWin; ++v) {
          const double pa = a.at(y + u, x + v);
          const double pb = b.at(y + u, x + v);
          const double w = win[u][v];
          ma += w * pa;
          mb += w * pb;
          saa += w * pa * pa;
          sbb += w * pb * pb;
          sab += w * pa * pb;
        }
      }
      const double va = saa - ma * ma;
      const double vb = sbb - mb * mb;
      const double cab = sab - ma * mb;
      total += ((2 * ma * mb + kC1) * (2 * cab + kC2)) /
               ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

// --- dihedral group ----------------------------------------------------------

namespace {

GrayImage rot90ccw(const GrayImage& img) {
  GrayImage out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      out.at(img.width() - 1 - x, y) = img.at(y, x);
  return out;
}

GrayImage rot90cw(const GrayImage& img) {
  GrayImage out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      out.at(x, img.height() - 1 - y) = img.at(y, x);
  return out;
}

GrayImage fliph(const GrayImage& img) {
  GrayImage out(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      out.at(y, img.width() - 1 - x) = img.at(y, x);
  return out;
}

}  // namespace

GrayImage dihedral_apply(const GrayImage& img, int k) {
  if (k < 0 || k > 7) throw ShapeError("dihedral index out of range");
  GrayImage out = (k & 4) ? fliph(img) : img;
  for (int r = 0; r < (k & 3); ++r) out = rot90ccw(out);
  return out;
}

GrayImage dihedral_invert(const GrayImage& img, int k) {
  if (k < 0 || k > 7) throw ShapeError("dihedral index out of range");
  GrayImage out = img;
  for (int r = 0; r < (k & 3); ++r) out = rot90cw(out);
  if (k & 4) out = fliph(out);
  return out;
}

GrayImage multi_view_restore(const GrayImage& img, const RestoreFn& model) {
  std::vector<double> acc(static_cast<std::size_t>(img.height()) * img.width(), 0.0);
  for (int k = 0; k < 8; ++k) {
    const GrayImage restored = dihedral_invert(model(dihedral_apply(img, k)), k);
    if (restored.height() != img.height() || restored.width() != img.width()) {
      throw ShapeError("multi_view_restore: model changed the image size");
    }
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += restored.pixels()[i];
  }
  for (double& v : acc) v /= 8.0;
  return GrayImage(img.height(), img.width(), std::move(acc));
}

GrayImage add_awgn(const GrayImage& img, double sigma, unsigned long long seed) {
  Rng rng(seed);
  std::vector<double> out = img.pixels();
  for (double& p : out) p += sigma * rng.gaussian();
  return GrayImage(img.height(), img.width(), std::move(out));
}

}  // namespace nlrn
