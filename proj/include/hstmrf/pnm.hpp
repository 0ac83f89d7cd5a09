#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace hstmrf {

class PnmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Planar float image (channel, row, column) with values in [0, 1].
struct Image {
  int64_t channels = 0, height = 0, width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int64_t c, int64_t h, int64_t w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(static_cast<size_t>(c * h * w), fill) {}

  float& at(int64_t c, int64_t y, int64_t x) { return data[static_cast<size_t>((c * height + y) * width + x)]; }
  float at(int64_t c, int64_t y, int64_t x) const {
    return data[static_cast<size_t>((c * height + y) * width + x)];
  }
};

/// Binary PGM (P5, one channel) or PPM (P6, three channels), maxval <= 255.
/// Header comments are skipped. Values are scaled by 1/255.
Image parse_pnm(const std::string& bytes, const std::string& source = "<pnm>");
Image read_pnm(const std::string& path);

/// Writes P5 for one channel and P6 for three; values are clamped and
/// rounded to 8 bits.
std::string encode_pnm(const Image& img);
void write_pnm(const Image& img, const std::string& path);

uint8_t quantize(float v);

/// Foreground pixels with a 4-neighbor that is background or off-image.
std::vector<uint8_t> mask_contour(const std::vector<uint8_t>& mask, int64_t height, int64_t width);

/// RGB copy of `image` with the prediction contour in the red channel and the
/// ground-truth contour in the green channel (coinciding contours: yellow).
Image make_overlay(const Image& image, const std::vector<uint8_t>& gt, const std::vector<uint8_t>& pred);

}  // namespace hstmrf
