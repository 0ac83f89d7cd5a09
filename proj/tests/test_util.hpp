#pragma once

// Shared helpers and brute-force oracles for the test binaries. The oracles
// here deliberately avoid the library's ops and work on plain vectors.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "hstmrf/rng.hpp"
#include "hstmrf/tensor.hpp"

namespace testutil {

using hstmrf::DType;
using hstmrf::Rng;
using hstmrf::Shape;
using hstmrf::Tensor;

inline std::vector<double> uniform_vec(Rng& rng, size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline Tensor rand_tensor(Rng& rng, const Shape& shape, DType dtype = DType::f64, double lo = -1.0,
                          double hi = 1.0) {
  return Tensor::from_vector(shape, uniform_vec(rng, static_cast<size_t>(hstmrf::numel(shape)), lo, hi),
                             dtype);
}

inline Tensor rand_binary(Rng& rng, const Shape& shape, double p = 0.4, DType dtype = DType::f64) {
  std::vector<double> v(static_cast<size_t>(hstmrf::numel(shape)));
  for (double& x : v) x = rng.bernoulli(p) ? 1.0 : 0.0;
  return Tensor::from_vector(shape, v, dtype);
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  return max_abs_diff(a.to_vector(), b.to_vector());
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.dtype() != b.dtype()) return false;
  const auto va = a.to_vector(), vb = b.to_vector();
  return std::equal(va.begin(), va.end(), vb.begin(),
                    [](double x, double y) { return std::memcmp(&x, &y, sizeof x) == 0; });
}

// Row-major [m, k] x [k, n] in long double.
inline std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, int64_t m,
                                        int64_t k, int64_t n) {
  std::vector<double> c(static_cast<size_t>(m * n));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      long double s = 0;
      for (int64_t p = 0; p < k; ++p) s += static_cast<long double>(a[i * k + p]) * b[p * n + j];
      c[i * n + j] = static_cast<double>(s);
    }
  return c;
}

// Direct-sum cross-correlation. x: N Cin H W, w: Cout Cin k k.
inline std::vector<double> naive_conv(const std::vector<double>& x, const std::vector<double>& w,
                                      const std::vector<double>& bias, int64_t n, int64_t cin, int64_t h,
                                      int64_t wd, int64_t cout, int64_t k, int stride, int dil, int pad,
                                      int64_t* oh_out, int64_t* ow_out) {
  const int64_t oh = (h + 2 * pad - dil * (k - 1) - 1) / stride + 1;
  const int64_t ow = (wd + 2 * pad - dil * (k - 1) - 1) / stride + 1;
  std::vector<double> y(static_cast<size_t>(n * cout * oh * ow));
  for (int64_t b = 0; b < n; ++b)
    for (int64_t o = 0; o < cout; ++o)
      for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j) {
          long double s = bias.empty() ? 0.0L : bias[o];
          for (int64_t c = 0; c < cin; ++c)
            for (int64_t u = 0; u < k; ++u)
              for (int64_t v = 0; v < k; ++v) {
                const int64_t yy = i * stride - pad + u * dil, xx = j * stride - pad + v * dil;
                if (yy < 0 || yy >= h || xx < 0 || xx >= wd) continue;
                s += static_cast<long double>(x[((b * cin + c) * h + yy) * wd + xx]) *
                     w[((o * cin + c) * k + u) * k + v];
              }
          y[((b * cout + o) * oh + i) * ow + j] = static_cast<double>(s);
        }
  if (oh_out) *oh_out = oh;
  if (ow_out) *ow_out = ow;
  return y;
}

// Standard attention on one [n, d] triple with an explicit score multiplier:
// weights = softmax(mult * q k^T * scale), out = weights v.
inline std::vector<double> oracle_attention(const std::vector<double>& q, const std::vector<double>& k,
                                            const std::vector<double>& v, int64_t n, int64_t d, int64_t dv,
                                            double mult, double scale, std::vector<double>* weights = nullptr) {
  std::vector<double> out(static_cast<size_t>(n * dv), 0.0), w(static_cast<size_t>(n * n));
  for (int64_t i = 0; i < n; ++i) {
    std::vector<long double> s(static_cast<size_t>(n));
    long double mx = -INFINITY;
    for (int64_t j = 0; j < n; ++j) {
      long double dot = 0;
      for (int64_t c = 0; c < d; ++c) dot += static_cast<long double>(q[i * d + c]) * k[j * d + c];
      s[j] = mult * dot * scale;
      mx = std::max(mx, s[j]);
    }
    long double z = 0;
    for (auto& x : s) z += (x = std::exp(x - mx));
    for (int64_t j = 0; j < n; ++j) {
      w[i * n + j] = static_cast<double>(s[j] / z);
      for (int64_t c = 0; c < dv; ++c) out[i * dv + c] += static_cast<double>(s[j] / z * v[j * dv + c]);
    }
  }
  if (weights) *weights = w;
  return out;
}

inline std::filesystem::path temp_dir(const std::string& tag) {
  const auto p = std::filesystem::temp_directory_path() /
                 ("hstmrf_test_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f << text;
}

// FNV-1a over every regular file below `dir` (relative path + bytes), in
// sorted path order.
inline uint64_t hash_tree(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  uint64_t h = 1469598103934665603ull;
  const auto mix = [&](const std::string& s) {
    for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
  };
  for (const auto& f : files) {
    mix(std::filesystem::relative(f, dir).string());
    mix(read_file(f));
  }
  return h;
}

}  // namespace testutil
