#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nutrifuse/tensor.hpp"

namespace nf {

// interleaved HWC pixels in [0, 1]
struct Image {
  int h = 0;
  int w = 0;
  int c = 0;
  std::vector<double> pix;

  Image() = default;
  Image(int h, int w, int c) : h(h), w(w), c(c), pix(static_cast<size_t>(h) * w * c, 0.0) {}

  double& at(int y, int x, int ch) { return pix[(static_cast<size_t>(y) * w + x) * c + ch]; }
  double at(int y, int x, int ch) const { return pix[(static_cast<size_t>(y) * w + x) * c + ch]; }
};

Image load_image(const std::string& path);              // binary PPM (P6) or PGM (P5)
void save_image(const std::string& path, const Image& img);
std::string encode_ppm(const Image& img);  // in-memory P6/P5 bytes

Image ensure_rgb(const Image& img);
Image resize_bilinear(const Image& img, int oh, int ow);
Image hflip(const Image& img);
Image rotate_bilinear(const Image& img, double degrees);  // about center, zero fill
Image crop(const Image& img, int y, int x, int h, int w);
Image to_gray(const Image& img);  // luma replicated across channels

Tensor image_to_tensor(const Image& img);  // (C, H, W)
Image image_from_tensor(const Tensor& t);

}  // namespace nf
