#include "nutrifuse/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "nutrifuse/errors.hpp"

namespace nf {

namespace {

int next_header_int(std::istream& is, const std::string& path) {
  // skip whitespace and '#' comments
  for (;;) {
    int ch = is.peek();
    if (ch == '#') {
      std::string line;
      std::getline(is, line);
    } else if (std::isspace(ch)) {
      is.get();
    } else {
      break;
    }
  }
  int value = -1;
  is >> value;
  if (!is || value < 0) throw ParseError("bad header in " + path);
  return value;
}

}  // namespace

Image load_image(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open image: " + path);
  char magic[2] = {0, 0};
  is.read(magic, 2);
  int channels = 0;
  if (magic[0] == 'P' && magic[1] == '6')
    channels = 3;
  else if (magic[0] == 'P' && magic[1] == '5')
    channels = 1;
  else
    throw ParseError("unsupported image format in " + path + " (want binary PPM/PGM)");

  const int w = next_header_int(is, path);
  const int h = next_header_int(is, path);
  const int maxval = next_header_int(is, path);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
    throw ParseError("unsupported image geometry in " + path);
  is.get();  // single whitespace after maxval

  std::vector<unsigned char> raw(static_cast<size_t>(w) * h * channels);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!is) throw ParseError("truncated pixel data in " + path);

  Image img(h, w, channels);
  const double inv = 1.0 / maxval;
  for (size_t i = 0; i < raw.size(); ++i) img.pix[i] = raw[i] * inv;
  return img;
}

std::string encode_ppm(const Image& img) {
  if (img.c != 1 && img.c != 3) throw PreconditionError("encode_ppm expects 1 or 3 channels");
  std::string out = (img.c == 3 ? "P6" : "P5");
  out += "\n" + std::to_string(img.w) + " " + std::to_string(img.h) + "\n255\n";
  out.reserve(out.size() + img.pix.size());
  for (double p : img.pix) {
    const double v = std::clamp(p, 0.0, 1.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  }
  return out;
}

void save_image(const std::string& path, const Image& img) {
  std::string bytes = encode_ppm(img);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write image: " + path);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed writing image: " + path);
}

Image ensure_rgb(const Image& img) {
  if (img.c == 3) return img;
  if (img.c != 1) throw PreconditionError("ensure_rgb expects 1 or 3 channels");
  Image out(img.h, img.w, 3);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int ch = 0; ch < 3; ++ch) out.at(y, x, ch) = img.at(y, x, 0);
  return out;
}

Image resize_bilinear(const Image& img, int oh, int ow) {
  if (oh <= 0 || ow <= 0) throw PreconditionError("resize target must be positive");
  if (oh == img.h && ow == img.w) return img;
  Image out(oh, ow, img.c);
  const double sy = static_cast<double>(img.h) / oh;
  const double sx = static_cast<double>(img.w) / ow;
  for (int y = 0; y < oh; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(img.h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < ow; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(img.w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.w - 1);
      const double wx = fx - x0;
      for (int ch = 0; ch < img.c; ++ch) {
        const double top = img.at(y0, x0, ch) * (1.0 - wx) + img.at(y0, x1, ch) * wx;
        const double bot = img.at(y1, x0, ch) * (1.0 - wx) + img.at(y1, x1, ch) * wx;
        out.at(y, x, ch) = top * (1.0 - wy) + bot * wy;
      }
    }
  }
  return out;
}

Image hflip(const Image& img) {
  Image out(img.h, img.w, img.c);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int ch = 0; ch < img.c; ++ch) out.at(y, x, ch) = img.at(y, img.w - 1 - x, ch);
  return out;
}

Image rotate_bilinear(const Image& img, double degrees) {
  const double rad = degrees * M_PI / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cy = (img.h - 1) * 0.5, cx = (img.w - 1) * 0.5;
  Image out(img.h, img.w, img.c);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      // inverse-rotate the destination coordinate into the source frame
      const double dy = y - cy, dx = x - cx;
      const double sy = cs * dy + sn * dx + cy;
      const double sx = -sn * dy + cs * dx + cx;
      if (sy < 0.0 || sy > img.h - 1 || sx < 0.0 || sx > img.w - 1) continue;
      const int y0 = static_cast<int>(sy);
      const int y1 = std::min(y0 + 1, img.h - 1);
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, img.w - 1);
      const double wy = sy - y0, wx = sx - x0;
      for (int ch = 0; ch < img.c; ++ch) {
        const double top = img.at(y0, x0, ch) * (1.0 - wx) + img.at(y0, x1, ch) * wx;
        const double bot = img.at(y1, x0, ch) * (1.0 - wx) + img.at(y1, x1, ch) * wx;
        out.at(y, x, ch) = top * (1.0 - wy) + bot * wy;
      }
    }
  }
  return out;
}

Image crop(const Image& img, int y, int x, int h, int w) {
  if (y < 0 || x < 0 || h <= 0 || w <= 0 || y + h > img.h || x + w > img.w)
    throw PreconditionError("crop rectangle out of bounds");
  Image out(h, w, img.c);
  for (int yy = 0; yy < h; ++yy)
    for (int xx = 0; xx < w; ++xx)
      for (int ch = 0; ch < img.c; ++ch) out.at(yy, xx, ch) = img.at(y + yy, x + xx, ch);
  return out;
}

Image to_gray(const Image& img) {
  if (img.c == 1) return img;
  if (img.c != 3) throw PreconditionError("to_gray expects 1 or 3 channels");
  Image out(img.h, img.w, 3);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      const double luma =
          0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
      for (int ch = 0; ch < 3; ++ch) out.at(y, x, ch) = luma;
    }
  return out;
}

Tensor image_to_tensor(const Image& img) {
  Tensor t({img.c, img.h, img.w});
  for (int ch = 0; ch < img.c; ++ch)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x)
        t[static_cast<int64_t>(ch) * img.h * img.w + static_cast<int64_t>(y) * img.w + x] =
            img.at(y, x, ch);
  return t;
}

Image image_from_tensor(const Tensor& t) {
  if (t.ndim() != 3) throw ShapeMismatchError("image_from_tensor expects (C, H, W)");
  const int c = static_cast<int>(t.size(0));
  const int h = static_cast<int>(t.size(1));
  const int w = static_cast<int>(t.size(2));
  Image img(h, w, c);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        img.at(y, x, ch) =
            t[static_cast<int64_t>(ch) * h * w + static_cast<int64_t>(y) * w + x];
  return img;
}

}  // namespace nf
