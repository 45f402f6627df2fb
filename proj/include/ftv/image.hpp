#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ftv/common.hpp"

namespace ftv {

// Planar CHW image with values in [0, 1]. PPM (P6) and PGM (P5) are the
// on-disk formats; single-channel inputs are replicated to three channels.
struct Image {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Real> data;  // channels * height * width, planar

  Real& at(std::size_t c, std::size_t y, std::size_t x) {
    return data[(c * height + y) * width + x];
  }
  Real at(std::size_t c, std::size_t y, std::size_t x) const {
    return data[(c * height + y) * width + x];
  }

  Real mean_channel(std::size_t c) const {
    Real s = 0;
    const std::size_t n = height * width;
    for (std::size_t i = 0; i < n; ++i) s += data[c * n + i];
    return n ? s / static_cast<Real>(n) : 0;
  }
};

namespace detail {
inline void skip_pnm_whitespace(std::istream& in) {
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

inline std::size_t read_pnm_int(std::istream& in) {
  skip_pnm_whitespace(in);
  std::size_t v = 0;
  if (!(in >> v)) throw IoError("malformed PNM header");
  return v;
}
}  // namespace detail

inline Image read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path);
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || (m1 != '5' && m1 != '6'))
    throw IoError("unsupported image format (expected P5/P6 PNM): " + path);
  const std::size_t src_channels = (m1 == '6') ? 3 : 1;
  const std::size_t w = detail::read_pnm_int(in);
  const std::size_t h = detail::read_pnm_int(in);
  const std::size_t maxval = detail::read_pnm_int(in);
  if (maxval == 0 || maxval > 255)
    throw IoError("unsupported PNM max value in " + path);
  in.get();  // single whitespace byte after header
  std::vector<unsigned char> raw(src_channels * w * h);
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size())
    throw IoError("truncated image data: " + path);

  Image img;
  img.channels = 3;
  img.height = h;
  img.width = w;
  img.data.resize(3 * h * w);
  const Real scale = 1.0 / static_cast<Real>(maxval);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t sc = (src_channels == 3) ? c : 0;
        img.at(c, y, x) =
            scale * raw[(y * w + x) * src_channels + sc];
      }
    }
  }
  return img;
}

inline void write_image(const Image& img, const std::string& path) {
  require(img.channels == 3, "write_image: expected 3-channel image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image: " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> raw(3 * img.width * img.height);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const Real v = std::clamp(img.at(c, y, x), 0.0, 1.0);
        raw[(y * img.width + x) * 3 + c] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError("failed writing image: " + path);
}

inline Image center_crop_square(const Image& img) {
  const std::size_t side = std::min(img.height, img.width);
  const std::size_t y0 = (img.height - side) / 2;
  const std::size_t x0 = (img.width - side) / 2;
  Image out;
  out.channels = img.channels;
  out.height = side;
  out.width = side;
  out.data.resize(img.channels * side * side);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x)
        out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
  return out;
}

inline Image resize_bilinear(const Image& img, std::size_t out_h,
                             std::size_t out_w) {
  require(img.height >= 1 && img.width >= 1, "resize: empty image");
  Image out;
  out.channels = img.channels;
  out.height = out_h;
  out.width = out_w;
  out.data.resize(img.channels * out_h * out_w);
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t y = 0; y < out_h; ++y) {
      const Real sy = (out_h == 1) ? 0
                                   : static_cast<Real>(y) *
                                         static_cast<Real>(img.height - 1) /
                                         static_cast<Real>(out_h - 1);
      const std::size_t y0 = static_cast<std::size_t>(sy);
      const std::size_t y1 = std::min(y0 + 1, img.height - 1);
      const Real wy = sy - static_cast<Real>(y0);
      for (std::size_t x = 0; x < out_w; ++x) {
        const Real sx = (out_w == 1) ? 0
                                     : static_cast<Real>(x) *
                                           static_cast<Real>(img.width - 1) /
                                           static_cast<Real>(out_w - 1);
        const std::size_t x0 = static_cast<std::size_t>(sx);
        const std::size_t x1 = std::min(x0 + 1, img.width - 1);
        const Real wx = sx - static_cast<Real>(x0);
        const Real top = (1 - wx) * img.at(c, y0, x0) + wx * img.at(c, y0, x1);
        const Real bot = (1 - wx) * img.at(c, y1, x0) + wx * img.at(c, y1, x1);
        out.at(c, y, x) = (1 - wy) * top + wy * bot;
      }
    }
  }
  return out;
}

// Encoder input: square 3 x H x W array with values in [-1, 1].
struct FaceImage {
  std::size_t side = 0;
  std::vector<Real> pixels;  // 3 * side * side, planar CHW

  static FaceImage from_image(const Image& img) {
    require_dim(img.height == img.width,
                "FaceImage: input must be square, got " +
                    std::to_string(img.width) + "x" + std::to_string(img.height));
    require(img.channels == 3, "FaceImage: expected 3 channels");
    FaceImage f;
    f.side = img.height;
    f.pixels.resize(img.data.size());
    for (std::size_t i = 0; i < img.data.size(); ++i) {
      const Real v = 2.0 * img.data[i] - 1.0;
      if (!std::isfinite(v)) throw Error("FaceImage: non-finite pixel value");
      f.pixels[i] = v;
    }
    return f;
  }
};

}  // namespace ftv
