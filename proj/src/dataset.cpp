#include "hstmrf/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "hstmrf/ops.hpp"

namespace hstmrf {

namespace fs = std::filesystem;

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest '" + path + "'");
  const fs::path base = fs::path(path).parent_path();
  std::vector<ManifestEntry> out;
  std::set<std::string> ids;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, '\t');) fields.push_back(f);
    const std::string where = path + ":" + std::to_string(lineno);
    if (fields.size() != 3)
      throw DataError(where + ": expected 3 tab-separated fields (image, mask, split), got " +
                      std::to_string(fields.size()));
    ManifestEntry e;
    const auto resolve = [&](const std::string& p) {
      const fs::path fp(p);
      return (fp.is_absolute() ? fp : base / fp).string();
    };
    e.image_path = resolve(fields[0]);
    e.mask_path = resolve(fields[1]);
    e.split = fields[2];
    e.id = fs::path(fields[0]).stem().string();
    if (!ids.insert(e.id).second) throw DataError(where + ": duplicate sample id '" + e.id + "'");
    for (const std::string* p : {&e.image_path, &e.mask_path})
      if (!fs::exists(*p)) throw DataError(where + ": file not found: " + *p);
    out.push_back(std::move(e));
  }
  return out;
}

SegSample load_sample(const ManifestEntry& entry) {
  SegSample s;
  s.id = entry.id;
  Image img = read_pnm(entry.image_path);
  if (img.channels == 1) {
    Image rgb(3, img.height, img.width);
    for (int64_t c = 0; c < 3; ++c)
      std::copy(img.data.begin(), img.data.end(), rgb.data.begin() + c * img.height * img.width);
    img = std::move(rgb);
  }
  const Image raw = read_pnm(entry.mask_path);
  if (raw.height != img.height || raw.width != img.width)
    throw DataError("mask '" + entry.mask_path + "' is " + std::to_string(raw.width) + "x" +
                    std::to_string(raw.height) + " but image is " + std::to_string(img.width) + "x" +
                    std::to_string(img.height));
  s.mask = Image(1, raw.height, raw.width);
  for (int64_t y = 0; y < raw.height; ++y)
    for (int64_t x = 0; x < raw.width; ++x)
      s.mask.at(0, y, x) = quantize(raw.at(0, y, x)) > 127 ? 1.0f : 0.0f;
  s.image = std::move(img);
  return s;
}

std::vector<SegSample> load_split(const std::string& manifest, const std::string& split, int64_t size) {
  std::vector<SegSample> out;
  for (const ManifestEntry& e : read_manifest(manifest))
    if (e.split == split) out.push_back(resize_sample(load_sample(e), size));
  if (out.empty()) throw DataError("manifest '" + manifest + "' has no samples in split '" + split + "'");
  return out;
}

Image resize_nearest(const Image& img, int64_t out_h, int64_t out_w) {
  if (out_h < 1 || out_w < 1) throw DataError("resize: target must be at least 1x1");
  Image out(img.channels, out_h, out_w);
  for (int64_t c = 0; c < img.channels; ++c)
    for (int64_t y = 0; y < out_h; ++y) {
      const int64_t sy = std::min(img.height - 1, (2 * y + 1) * img.height / (2 * out_h));
      for (int64_t x = 0; x < out_w; ++x) {
        const int64_t sx = std::min(img.width - 1, (2 * x + 1) * img.width / (2 * out_w));
        out.at(c, y, x) = img.at(c, sy, sx);
      }
    }
  return out;
}

Tensor image_to_tensor(const Image& img, DType dtype) {
  std::vector<double> v(img.data.begin(), img.data.end());
  return Tensor::from_vector({1, img.channels, img.height, img.width}, v, dtype);
}

Image resize_bilinear_image(const Image& img, int64_t out_h, int64_t out_w) {
  if (out_h < 1 || out_w < 1) throw DataError("resize: target must be at least 1x1");
  TapeScope no_tape(nullptr);
  const Tensor t = resize_bilinear(image_to_tensor(img), out_h, out_w);
  Image out(img.channels, out_h, out_w);
  const auto d = t.data<float>();
  std::copy(d.begin(), d.end(), out.data.begin());
  return out;
}

SegSample resize_sample(const SegSample& s, int64_t target) {
  if (target < 16 || target % 16 != 0)
    throw DataError("resize: target size " + std::to_string(target) + " must be a positive multiple of 16");
  if (s.image.height == target && s.image.width == target) return s;
  SegSample out;
  out.id = s.id;
  out.image = resize_bilinear_image(s.image, target, target);
  out.mask = resize_nearest(s.mask, target, target);
  for (float& v : out.mask.data) v = v > 0.5f ? 1.0f : 0.0f;
  return out;
}

bool Ellipse::contains(int64_t x, int64_t y) const {
  const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
  const double c = std::cos(theta), s = std::sin(theta);
  const double u = (dx * c + dy * s) / rx, v = (-dx * s + dy * c) / ry;
  return u * u + v * v <= 1.0;
}

namespace {

// Smooth background: base colour plus a linear ramp in a random direction.
void paint_background(Image& img, Rng& rng) {
  const int64_t n = img.height;
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double gx = std::cos(angle), gy = std::sin(angle);
  for (int64_t c = 0; c < 3; ++c) {
    const double base = rng.uniform(0.08, 0.35), amp = rng.uniform(0.0, 0.12);
    for (int64_t y = 0; y < n; ++y)
      for (int64_t x = 0; x < n; ++x) {
        const double t = (gx * (static_cast<double>(x) / n - 0.5) + gy * (static_cast<double>(y) / n - 0.5));
        img.at(c, y, x) = static_cast<float>(base + amp * t);
      }
  }
}

void add_noise(Image& img, Rng& rng) {
  for (float& v : img.data) v = std::clamp(static_cast<float>(v + 0.02 * rng.normal()), 0.0f, 1.0f);
}

}  // namespace

std::vector<SyntheticSample> gen_synthetic(int64_t n, int64_t size, uint64_t seed) {
  if (n < 1) throw DataError("gen_synthetic: n must be >= 1");
  if (size < 16 || size % 16 != 0)
    throw DataError("gen_synthetic: size " + std::to_string(size) + " must be divisible by 16");
  std::vector<SyntheticSample> out;
  const Rng root(seed);
  const double sz = static_cast<double>(size);
  for (int64_t i = 0; i < n; ++i) {
    Rng rng = root.split(static_cast<uint64_t>(i));
    SyntheticSample ss;
    SegSample& s = ss.sample;
    char id[32];
    std::snprintf(id, sizeof id, "s%03lld", static_cast<long long>(i));
    s.id = id;
    // Redraw the blob layout until the coverage contract holds.
    for (;;) {
      ss.ellipses.clear();
      const int64_t count = rng.uniform_int(1, 3);
      for (int64_t k = 0; k < count; ++k) {
        Ellipse e;
        e.rx = rng.uniform(0.08, 0.25) * sz;
        e.ry = rng.uniform(0.08, 0.25) * sz;
        const double r = std::max(e.rx, e.ry);
        e.cx = rng.uniform(r * 0.6, sz - r * 0.6);
        e.cy = rng.uniform(r * 0.6, sz - r * 0.6);
        e.theta = rng.uniform(0.0, std::numbers::pi);
        ss.ellipses.push_back(e);
      }
      s.mask = Image(1, size, size);
      int64_t on = 0;
      for (int64_t y = 0; y < size; ++y)
        for (int64_t x = 0; x < size; ++x)
          for (const Ellipse& e : ss.ellipses)
            if (e.contains(x, y)) {
              s.mask.at(0, y, x) = 1.0f;
              ++on;
              break;
            }
      const double frac = static_cast<double>(on) / (sz * sz);
      if (frac >= 0.01 && frac <= 0.60) break;
    }
    s.image = Image(3, size, size);
    paint_background(s.image, rng);
    // Blobs: bright colour with a radial shading from the ellipse centre.
    for (const Ellipse& e : ss.ellipses) {
      double col[3];
      for (double& c : col) c = rng.uniform(0.6, 0.95);
      const double shade = rng.uniform(0.05, 0.2);
      for (int64_t y = 0; y < size; ++y)
        for (int64_t x = 0; x < size; ++x) {
          if (!e.contains(x, y)) continue;
          const double dx = (x + 0.5 - e.cx) / e.rx, dy = (y + 0.5 - e.cy) / e.ry;
          const double r2 = std::min(1.0, dx * dx + dy * dy);
          for (int64_t c = 0; c < 3; ++c) s.image.at(c, y, x) = static_cast<float>(col[c] - shade * r2);
        }
    }
    add_noise(s.image, rng);
    out.push_back(std::move(ss));
  }
  return out;
}

SegSample blank_sample(int64_t size, uint64_t seed) {
  Rng rng = Rng(seed).split("blank");
  SegSample s;
  s.id = "blank";
  s.image = Image(3, size, size);
  s.mask = Image(1, size, size);
  paint_background(s.image, rng);
  add_noise(s.image, rng);
  return s;
}

void write_synthetic_dataset(const std::string& out_dir, int64_t n, int64_t size, uint64_t seed) {
  const auto samples = gen_synthetic(n, size, seed);
  const fs::path root(out_dir);
  std::error_code ec;
  for (const char* sub : {"images", "masks", "holdout"}) {
    fs::create_directories(root / sub, ec);
    if (ec) throw DataError("cannot create directory '" + (root / sub).string() + "': " + ec.message());
  }
  std::ofstream manifest(root / "manifest.txt", std::ios::trunc);
  if (!manifest) throw DataError("cannot write '" + (root / "manifest.txt").string() + "'");
  for (const SyntheticSample& ss : samples) {
    const std::string img = "images/" + ss.sample.id + ".ppm";
    const std::string mask = "masks/" + ss.sample.id + ".pgm";
    write_pnm(ss.sample.image, (root / img).string());
    write_pnm(ss.sample.mask, (root / mask).string());
    manifest << img << '\t' << mask << '\t' << "train\n";
  }
  const SegSample blank = blank_sample(size, seed);
  write_pnm(blank.image, (root / "holdout" / "blank.ppm").string());
  write_pnm(blank.mask, (root / "holdout" / "blank_mask.pgm").string());
}

SegSample augment(const SegSample& s, Rng& rng, bool flip, bool rotate) {
  SegSample out = s;
  const auto transform = [](const Image& img, bool f, int quarter) {
    Image r(img.channels, img.height, img.width);
    const int64_t n = img.height;
    for (int64_t c = 0; c < img.channels; ++c)
      for (int64_t y = 0; y < n; ++y)
        for (int64_t x = 0; x < img.width; ++x) {
          int64_t sy = y, sx = f ? img.width - 1 - x : x;
          for (int q = 0; q < quarter; ++q) {
            const int64_t t = sy;
            sy = n - 1 - sx;
            sx = t;
          }
          r.at(c, y, x) = img.at(c, sy, sx);
        }
    return r;
  };
  const bool f = flip && rng.bernoulli(0.5);
  const int quarter = rotate && s.image.height == s.image.width ? static_cast<int>(rng.uniform_int(0, 3)) : 0;
  if (!f && quarter == 0) return out;
  out.image = transform(s.image, f, quarter);
  out.mask = transform(s.mask, f, quarter);
  return out;
}

Batch make_batch(const std::vector<SegSample>& samples, const std::vector<size_t>& indices, DType dtype) {
  if (indices.empty()) throw DataError("make_batch: empty batch");
  const SegSample& first = samples.at(indices[0]);
  const int64_t h = first.image.height, w = first.image.width, b = static_cast<int64_t>(indices.size());
  std::vector<double> img, msk;
  img.reserve(static_cast<size_t>(b * 3 * h * w));
  msk.reserve(static_cast<size_t>(b * h * w));
  for (size_t i : indices) {
    const SegSample& s = samples.at(i);
    if (s.image.height != h || s.image.width != w)
      throw DataError("make_batch: sample '" + s.id + "' has a different size");
    img.insert(img.end(), s.image.data.begin(), s.image.data.end());
    msk.insert(msk.end(), s.mask.data.begin(), s.mask.data.end());
  }
  return {Tensor::from_vector({b, 3, h, w}, img, dtype), Tensor::from_vector({b, 1, h, w}, msk, dtype)};
}

}  // namespace hstmrf
