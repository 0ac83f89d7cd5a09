#include "hstmrf/pnm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace hstmrf {

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
class HeaderScanner {
 public:
  HeaderScanner(const std::string& b, const std::string& source) : b_(b), source_(source) {}

  int64_t number(const char* what) {
    skip();
    const size_t start = pos_;
    int64_t v = 0;
    while (pos_ < b_.size() && std::isdigit(static_cast<unsigned char>(b_[pos_]))) {
      v = v * 10 + (b_[pos_] - '0');
      if (v > (int64_t{1} << 30)) throw PnmError(source_ + ": header " + what + " is too large");
      ++pos_;
    }
    if (pos_ == start) throw PnmError(source_ + ": malformed header, expected " + what);
    return v;
  }

  // Exactly one whitespace byte separates the header from the raster.
  size_t raster_start() {
    if (pos_ >= b_.size() || !std::isspace(static_cast<unsigned char>(b_[pos_])))
      throw PnmError(source_ + ": malformed header, missing separator before pixel data");
    return pos_ + 1;
  }

 private:
  void skip() {
    while (pos_ < b_.size()) {
      const char c = b_[pos_];
      if (c == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
    if (pos_ >= b_.size()) throw PnmError(source_ + ": truncated header");
  }

  const std::string& b_;
  const std::string& source_;
  size_t pos_ = 2;
};

}  // namespace

uint8_t quantize(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<uint8_t>(std::lround(c * 255.0f));
}

Image parse_pnm(const std::string& bytes, const std::string& source) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    throw PnmError(source + ": unsupported format (expected binary P5 or P6, got '" +
                   bytes.substr(0, std::min<size_t>(2, bytes.size())) + "')");
  const int64_t channels = bytes[1] == '5' ? 1 : 3;
  HeaderScanner hs(bytes, source);
  const int64_t width = hs.number("width");
  const int64_t height = hs.number("height");
  const int64_t maxval = hs.number("maxval");
  if (width < 1 || height < 1) throw PnmError(source + ": empty image");
  if (maxval < 1 || maxval > 255)
    throw PnmError(source + ": maxval " + std::to_string(maxval) + " not supported (must be 1..255)");
  const size_t start = hs.raster_start();
  const size_t need = static_cast<size_t>(channels * width * height);
  if (bytes.size() < start + need)
    throw PnmError(source + ": truncated pixel data (" + std::to_string(bytes.size() - start) +
                   " of " + std::to_string(need) + " bytes)");
  Image img(channels, height, width);
  const auto* px = reinterpret_cast<const unsigned char*>(bytes.data() + start);
  for (int64_t y = 0; y < height; ++y)
    for (int64_t x = 0; x < width; ++x)
      for (int64_t c = 0; c < channels; ++c)
        img.at(c, y, x) = static_cast<float>(px[(y * width + x) * channels + c]) / static_cast<float>(maxval);
  return img;
}

Image read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PnmError("cannot open image '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_pnm(ss.str(), "'" + path + "'");
}

std::string encode_pnm(const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw PnmError("write_pnm: images must have 1 or 3 channels, got " + std::to_string(img.channels));
  std::string out = (img.channels == 1 ? "P5\n" : "P6\n") + std::to_string(img.width) + " " +
                    std::to_string(img.height) + "\n255\n";
  out.reserve(out.size() + img.data.size());
  for (int64_t y = 0; y < img.height; ++y)
    for (int64_t x = 0; x < img.width; ++x)
      for (int64_t c = 0; c < img.channels; ++c) out.push_back(static_cast<char>(quantize(img.at(c, y, x))));
  return out;
}

void write_pnm(const Image& img, const std::string& path) {
  const std::string bytes = encode_pnm(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw PnmError("cannot write image '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw PnmError("write failed for '" + path + "'");
}

std::vector<uint8_t> mask_contour(const std::vector<uint8_t>& mask, int64_t height, int64_t width) {
  std::vector<uint8_t> out(mask.size(), 0);
  const auto on = [&](int64_t y, int64_t x) {
    return y >= 0 && y < height && x >= 0 && x < width && mask[static_cast<size_t>(y * width + x)] != 0;
  };
  for (int64_t y = 0; y < height; ++y)
    for (int64_t x = 0; x < width; ++x)
      if (on(y, x) && (!on(y - 1, x) || !on(y + 1, x) || !on(y, x - 1) || !on(y, x + 1)))
        out[static_cast<size_t>(y * width + x)] = 1;
  return out;
}

Image make_overlay(const Image& image, const std::vector<uint8_t>& gt, const std::vector<uint8_t>& pred) {
  const int64_t h = image.height, w = image.width;
  if (gt.size() != static_cast<size_t>(h * w) || pred.size() != gt.size())
    throw PnmError("overlay: mask size does not match the image");
  Image out(3, h, w);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) out.at(c, y, x) = image.at(image.channels == 3 ? c : 0, y, x);
  const auto gc = mask_contour(gt, h, w);
  const auto pc = mask_contour(pred, h, w);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const size_t i = static_cast<size_t>(y * w + x);
      if (!gc[i] && !pc[i]) continue;
      out.at(0, y, x) = pc[i] ? 1.0f : 0.0f;
      out.at(1, y, x) = gc[i] ? 1.0f : 0.0f;
      out.at(2, y, x) = 0.0f;
    }
  return out;
}

}  // namespace hstmrf
