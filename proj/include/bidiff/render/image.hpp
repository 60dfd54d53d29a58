#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "bidiff/core/error.hpp"
#include "bidiff/render/camera.hpp"

namespace bidiff {

/// Row-major interleaved image, `channels` floats per pixel.
class ImageBuffer {
 public:
  ImageBuffer() = default;
  ImageBuffer(int width, int height, int channels, float fill = 0.0f)
      : w_(width), h_(height), c_(channels), data_(static_cast<std::size_t>(width) * height * channels, fill) {}

  int width() const { return w_; }
  int height() const { return h_; }
  int channels() const { return c_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(w_) * h_; }
  std::size_t size() const { return data_.size(); }

  float& at(int x, int y, int c = 0) { return data_[(static_cast<std::size_t>(y) * w_ + x) * c_ + c]; }
  float at(int x, int y, int c = 0) const { return data_[(static_cast<std::size_t>(y) * w_ + x) * c_ + c]; }

  std::vector<float>& values() { return data_; }
  const std::vector<float>& values() const { return data_; }

  bool same_shape(const ImageBuffer& o) const { return w_ == o.w_ && h_ == o.h_ && c_ == o.c_; }

  void clamp01() {
    for (auto& v : data_) v = std::clamp(v, 0.0f, 1.0f);
  }

 private:
  int w_ = 0, h_ = 0, c_ = 0;
  std::vector<float> data_;
};

/// M images with their camera poses; the 2D diffusion state V.
struct MultiViewSet {
  std::vector<CameraPose> poses;
  std::vector<ImageBuffer> images;

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }

  void validate() const {
    require(poses.size() == images.size(), Errc::shape_mismatch, "view set: pose/image count mismatch");
    for (std::size_t i = 0; i < images.size(); ++i) {
      require(images[i].width() == poses[i].width && images[i].height() == poses[i].height, Errc::shape_mismatch,
              "view set: image size does not match its camera");
    }
  }
};

/// Binary PPM (P6, 8-bit). Values are clamped to [0,1].
inline void write_ppm(const std::string& path, const ImageBuffer& img) {
  require(img.channels() == 3, Errc::shape_mismatch, "PPM needs a 3-channel image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io, "cannot write " + path);
  out << "P6\n" << img.width() << ' ' << img.height() << "\n255\n";
  std::vector<unsigned char> bytes(img.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(img.values()[i], 0.0f, 1.0f) * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::io, "write failed for " + path);
}

/// Binary PGM (P5, 16-bit big-endian) storing round(clamp(v / scale, 0, 1) * 65535).
/// Depth maps use scale = far plane distance; transmittance uses scale = 1.
inline void write_pgm16(const std::string& path, const ImageBuffer& img, double scale = 1.0) {
  require(img.channels() == 1, Errc::shape_mismatch, "PGM needs a 1-channel image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io, "cannot write " + path);
  out << "P5\n" << img.width() << ' ' << img.height() << "\n65535\n";
  std::vector<unsigned char> bytes(img.size() * 2);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double v = std::clamp(img.values()[i] / scale, 0.0, 1.0);
    const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
    bytes[2 * i] = static_cast<unsigned char>(q >> 8);
    bytes[2 * i + 1] = static_cast<unsigned char>(q & 0xff);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::io, "write failed for " + path);
}

namespace detail {

inline std::string pnm_token(std::istream& in) {
  std::string tok;
  while (in >> tok) {
    if (tok[0] == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    return tok;
  }
  throw Error(Errc::parse, "truncated PNM header");
}

}  // namespace detail

inline ImageBuffer read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open " + path);
  require(detail::pnm_token(in) == "P6", Errc::parse, path + ": not a binary PPM");
  const int w = std::stoi(detail::pnm_token(in));
  const int h = std::stoi(detail::pnm_token(in));
  const int maxval = std::stoi(detail::pnm_token(in));
  require(maxval == 255 && w > 0 && h > 0, Errc::parse, path + ": unsupported PPM");
  in.get();
  ImageBuffer img(w, h, 3);
  std::vector<unsigned char> bytes(img.size());
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<std::size_t>(in.gcount()) == bytes.size(), Errc::parse, path + ": truncated pixel data");
  for (std::size_t i = 0; i < bytes.size(); ++i) img.values()[i] = bytes[i] / 255.0f;
  return img;
}

}  // namespace bidiff
