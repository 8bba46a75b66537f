#ifndef PSAN_IMAGE_OPS_HPP
#define PSAN_IMAGE_OPS_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <vector>

#include "psan/error.hpp"
#include "psan/tensor.hpp"

namespace psan {

// Boolean pixel selection. What "true" means (retained vs. deleted) depends on
// the operation consuming the mask and is stated there.
struct PixelMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;

  PixelMask() = default;
  PixelMask(std::size_t h, std::size_t w) : height(h), width(w), bits(h * w, 0) {}

  bool at(std::size_t r, std::size_t c) const { return bits[r * width + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v) { bits[r * width + c] = v ? 1 : 0; }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t(1)));
  }
};

struct Box {
  std::size_t top = 0, left = 0, bottom = 0, right = 0; // inclusive

  std::size_t height() const { return bottom - top + 1; }
  std::size_t width() const { return right - left + 1; }
  std::size_t area() const { return height() * width(); }
};

struct ResizeOptions {
  // false: source position = (dst + 0.5) * in/out - 0.5 (the common resize
  // convention); true: endpoints map to endpoints. Both selectable because the
  // original implementations do not document their choice.
  bool align_corners = false;
};

namespace detail {

// Keys cubic convolution kernel, a = -0.75
inline double cubic_weight(double t) {
  constexpr double a = -0.75;
  double x = std::abs(t);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

struct CubicTaps {
  std::array<std::ptrdiff_t, 4> index; // clamped source indices
  std::array<double, 4> weight;
};

inline std::vector<CubicTaps> cubic_taps(std::size_t in, std::size_t out, bool align_corners) {
  std::vector<CubicTaps> taps(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src;
    if (align_corners) {
      src = (out == 1) ? 0.0
                       : static_cast<double>(o) * static_cast<double>(in - 1) /
                             static_cast<double>(out - 1);
    } else {
      src = (static_cast<double>(o) + 0.5) * static_cast<double>(in) /
                static_cast<double>(out) -
            0.5;
    }
    double base = std::floor(src);
    double frac = src - base;
    auto& t = taps[o];
    for (int k = 0; k < 4; ++k) {
      std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(base) + k - 1;
      idx = std::clamp<std::ptrdiff_t>(idx, 0, static_cast<std::ptrdiff_t>(in) - 1);
      t.index[k] = idx;
      t.weight[k] = cubic_weight(frac - static_cast<double>(k - 1));
    }
  }
  return taps;
}

} // namespace detail

// Cubic-interpolated enlargement of a 2-d map, edge-clamped. Separable: rows
// first, then columns.
inline Tensor bicubic_upsample(const Tensor& map, std::size_t out_h, std::size_t out_w,
                               ResizeOptions options = {}) {
  require(map.rank() == 2, ErrorKind::invalid_argument, "bicubic_upsample: map must be 2-d");
  const std::size_t in_h = map.extent(0), in_w = map.extent(1);
  require(in_h >= 1 && in_w >= 1, ErrorKind::invalid_argument,
          "bicubic_upsample: empty source map");
  require(out_h >= 1 && out_w >= 1, ErrorKind::invalid_argument,
          "bicubic_upsample: zero-sized target");
  require(out_h >= in_h && out_w >= in_w, ErrorKind::invalid_argument,
          "bicubic_upsample: target smaller than source");

  auto col_taps = detail::cubic_taps(in_w, out_w, options.align_corners);
  auto row_taps = detail::cubic_taps(in_h, out_h, options.align_corners);

  Tensor rows({in_h, out_w});
  for (std::size_t r = 0; r < in_h; ++r)
    for (std::size_t c = 0; c < out_w; ++c) {
      const auto& t = col_taps[c];
      double acc = 0.0;
      for (int k = 0; k < 4; ++k)
        acc += t.weight[k] * map(r, static_cast<std::size_t>(t.index[k]));
      rows(r, c) = acc;
    }

  Tensor out({out_h, out_w});
  for (std::size_t r = 0; r < out_h; ++r) {
    const auto& t = row_taps[r];
    for (std::size_t c = 0; c < out_w; ++c) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k)
        acc += t.weight[k] * rows(static_cast<std::size_t>(t.index[k]), c);
      out(r, c) = acc;
    }
  }
  return out;
}

// Normalized 5x5 Gaussian filter with replicate padding. Sigma is configurable
// because the source material fixes only the kernel size.
inline Tensor gaussian_blur_5x5(const Tensor& map, double sigma = 1.0) {
  require(map.rank() == 2, ErrorKind::invalid_argument, "gaussian_blur_5x5: map must be 2-d");
  require(sigma > 0.0, ErrorKind::invalid_argument, "gaussian_blur_5x5: sigma must be positive");
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(map.extent(0));
  const std::ptrdiff_t w = static_cast<std::ptrdiff_t>(map.extent(1));

  double kernel[5][5];
  double sum = 0.0;
  for (int i = -2; i <= 2; ++i)
    for (int j = -2; j <= 2; ++j) {
      double v = std::exp(-(i * i + j * j) / (2.0 * sigma * sigma));
      kernel[i + 2][j + 2] = v;
      sum += v;
    }
  for (auto& row : kernel)
    for (double& v : row) v /= sum;

  Tensor out({map.extent(0), map.extent(1)});
  for (std::ptrdiff_t r = 0; r < h; ++r)
    for (std::ptrdiff_t c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int i = -2; i <= 2; ++i)
        for (int j = -2; j <= 2; ++j) {
          std::size_t rr = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(r + i, 0, h - 1));
          std::size_t cc = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(c + j, 0, w - 1));
          acc += kernel[i + 2][j + 2] * map(rr, cc);
        }
      out(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = acc;
    }
  return out;
}

// Marks the ceil(fraction * H * W) highest-valued pixels. Ties resolve by
// row-major pixel index so the result never depends on a seed.
inline PixelMask top_fraction_mask(const Tensor& map, double fraction) {
  require(map.rank() == 2, ErrorKind::invalid_argument, "top_fraction_mask: map must be 2-d");
  require(fraction > 0.0 && fraction <= 1.0, ErrorKind::invalid_argument,
          "top_fraction_mask: fraction must be in (0, 1]");
  const std::size_t n = map.size();
  const std::size_t keep = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(n)));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (map[a] != map[b]) return map[a] > map[b];
    return a < b;
  });

  PixelMask mask(map.extent(0), map.extent(1));
  for (std::size_t i = 0; i < keep && i < n; ++i) mask.bits[order[i]] = 1;
  return mask;
}

// Linear-interpolation percentile over the sorted values (the common "linear"
// definition); pixels at or above the threshold are retained.
inline double percentile_value(const Tensor& map, double q) {
  require(q > 0.0 && q < 100.0, ErrorKind::invalid_argument,
          "percentile: q must be in (0, 100)");
  std::vector<double> sorted = map.data();
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  double rank = q / 100.0 * static_cast<double>(n - 1);
  std::size_t lo = static_cast<std::size_t>(std::floor(rank));
  std::size_t hi = static_cast<std::size_t>(std::ceil(rank));
  double frac = rank - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline PixelMask percentile_threshold_mask(const Tensor& map, double q) {
  require(map.rank() == 2, ErrorKind::invalid_argument,
          "percentile_threshold_mask: map must be 2-d");
  double threshold = percentile_value(map, q);
  PixelMask mask(map.extent(0), map.extent(1));
  for (std::size_t i = 0; i < map.size(); ++i)
    if (map[i] >= threshold) mask.bits[i] = 1;
  return mask;
}

// Tightest box containing all marked pixels, inclusive coordinates.
inline Box bounding_box(const PixelMask& mask) {
  std::size_t top = mask.height, left = mask.width, bottom = 0, right = 0;
  bool any = false;
  for (std::size_t r = 0; r < mask.height; ++r)
    for (std::size_t c = 0; c < mask.width; ++c)
      if (mask.at(r, c)) {
        any = true;
        top = std::min(top, r);
        left = std::min(left, c);
        bottom = std::max(bottom, r);
        right = std::max(right, c);
      }
  require(any, ErrorKind::empty_selection, "bounding_box: mask retains no pixels");
  return Box{top, left, bottom, right};
}

// Blacks out the marked pixels of a 3xHxW image in raw pixel space. Here the
// mask marks pixels to delete.
inline Tensor apply_deletion(const Tensor& image, const PixelMask& mask) {
  require(image.rank() == 3 && image.extent(0) == 3, ErrorKind::invalid_argument,
          "apply_deletion: image must be 3xHxW");
  require(image.extent(1) == mask.height && image.extent(2) == mask.width,
          ErrorKind::invalid_argument, "apply_deletion: mask dimensions mismatch image");
  Tensor out = image;
  for (std::size_t r = 0; r < mask.height; ++r)
    for (std::size_t c = 0; c < mask.width; ++c)
      if (mask.at(r, c))
        for (std::size_t ch = 0; ch < 3; ++ch) out(ch, r, c) = 0.0;
  return out;
}

} // namespace psan

#endif
