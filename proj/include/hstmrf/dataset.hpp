#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "hstmrf/pnm.hpp"
#include "hstmrf/rng.hpp"
#include "hstmrf/tensor.hpp"

namespace hstmrf {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// RGB image in [0, 1] and a strictly binary single-channel mask.
struct SegSample {
  std::string id;
  Image image;
  Image mask;
};

struct ManifestEntry {
  std::string image_path;
  std::string mask_path;
  std::string split;
  std::string id;  // image file stem
};

/// Tab-separated `image<TAB>mask<TAB>split` lines; blank lines and '#'
/// comments are skipped. Relative paths resolve against the manifest's
/// directory. Errors carry the line number.
std::vector<ManifestEntry> read_manifest(const std::string& path);

/// Mask pixels > 127 (of 255) become 1. Grayscale images are replicated to
/// three channels.
SegSample load_sample(const ManifestEntry& entry);
/// All samples of `split`, in manifest order, resized to size x size.
std::vector<SegSample> load_split(const std::string& manifest, const std::string& split, int64_t size);

/// Image bilinear (align_corners = false), mask nearest then re-binarized.
SegSample resize_sample(const SegSample& s, int64_t target);
/// Nearest neighbor: source index floor((i + 0.5) * in / out).
Image resize_nearest(const Image& img, int64_t out_h, int64_t out_w);
Image resize_bilinear_image(const Image& img, int64_t out_h, int64_t out_w);

struct Ellipse {
  double cx, cy, rx, ry, theta;
  /// Implicit-equation test at pixel centre (x + 0.5, y + 0.5).
  bool contains(int64_t x, int64_t y) const;
};

struct SyntheticSample {
  SegSample sample;
  std::vector<Ellipse> ellipses;
};

/// n samples with 1-3 filled ellipses over a smooth background; the mask is
/// the exact ellipse union covering 1%-60% of the image. Deterministic in seed.
std::vector<SyntheticSample> gen_synthetic(int64_t n, int64_t size, uint64_t seed);
/// Background-only image drawn like gen_synthetic's, with an empty mask.
SegSample blank_sample(int64_t size, uint64_t seed);

/// Writes images/, masks/, manifest.txt (split "train") and holdout/ with a
/// blank sample under `out_dir`.
void write_synthetic_dataset(const std::string& out_dir, int64_t n, int64_t size, uint64_t seed);

/// Random horizontal flip and/or quarter-turn rotation.
SegSample augment(const SegSample& s, Rng& rng, bool flip, bool rotate);

struct Batch {
  Tensor images;  // B x 3 x H x W
  Tensor masks;   // B x 1 x H x W
};

Batch make_batch(const std::vector<SegSample>& samples, const std::vector<size_t>& indices,
                 DType dtype = DType::f32);
Tensor image_to_tensor(const Image& img, DType dtype = DType::f32);

}  // namespace hstmrf
