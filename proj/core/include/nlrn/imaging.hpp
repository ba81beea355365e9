#pragma once

#include <functional>
#include <string>
#include <vector>

#include "nlrn/tensor.hpp"

namespace nlrn {

/// Grayscale image with pixels in [0,1], row-major. Values are clamped at
/// construction and after every mutating helper.
class GrayImage {
public:
  GrayImage() = default;
  GrayImage(int height, int width, double fill = 0.0);
  GrayImage(int height, int width, std::vector<double> pixels);

  int height() const { return height_; }
  int width() const { return width_; }
  double& at(int y, int x) { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }
  double at(int y, int x) const { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }
  const std::vector<double>& pixels() const { return pixels_; }
  std::vector<double>& pixels() { return pixels_; }

  void clamp();

private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> pixels_;
};

/// Reads an 8- or 16-bit gray or RGB(A) PNG. Color converts through BT.601
/// luma (0.299, 0.587, 0.114); values scale to [0,1].
GrayImage load_png(const std::string& path);

/// Writes 8-bit grayscale, quantizing round(p * 255).
void save_png(const GrayImage& img, const std::string& path);

/// Separable Catmull-Rom-family cubic resample (a = -0.5), edge-replicate
/// boundary handling, to an explicit output size.
GrayImage bicubic_resize(const GrayImage& img, int out_height, int out_width);
GrayImage bicubic_resize(const GrayImage& img, double factor);

/// 10*log10(1/MSE) over the region with `border_crop` pixels removed on every
/// side; identical images report the 100 dB cap.
double psnr(const GrayImage& a, const GrayImage& b, int border_crop = 0);

/// Mean local SSIM, 11x11 Gaussian window sigma=1.5, K1=0.01, K2=0.03, L=1.
double ssim(const GrayImage& a, const GrayImage& b);

/// The 8 dihedral transforms: bit 2 selects horizontal flip, bits 0-1 the
/// number of 90-degree counterclockwise rotations applied after it.
GrayImage dihedral_apply(const GrayImage& img, int k);
GrayImage dihedral_invert(const GrayImage& img, int k);

using RestoreFn = std::function<GrayImage(const GrayImage&)>;

/// Restores the 8 dihedral views, inverse-transforms each and averages.
GrayImage multi_view_restore(const GrayImage& img, const RestoreFn& model);

/// Additive white Gaussian noise sigma (in [0,1] units), then clamp.
GrayImage add_awgn(const GrayImage& img, double sigma, unsigned long long seed);

}  // namespace nlrn
