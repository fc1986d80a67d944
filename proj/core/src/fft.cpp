#include "mddc/fft.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <utility>

#include "mddc/error.hpp"

namespace mddc {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

void fft_radix2(std::span<Complex> data) {
  const std::size_t n = data.size();
  if (!is_power_of_two(n)) {
    throw InvalidArgument("fft_radix2: length " + std::to_string(n) + " is not a power of two");
  }
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = -2.0 * std::numbers::pi / static_cast<double>(len);
    const std::size_t half = len / 2;
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        // Twiddles evaluated directly rather than by recurrence, which keeps
        // the error at machine precision for the sizes used here.
        const Complex w = std::polar(1.0, angle * static_cast<double>(k));
        const Complex even = data[start + k];
        const Complex odd = data[start + k + half] * w;
        data[start + k] = even + odd;
        data[start + k + half] = even - odd;
      }
    }
  }
}

namespace {

// Direct evaluation along one axis of length n with the given stride.
void dft_naive_1d(std::span<Complex> data, std::size_t n, std::size_t stride,
                  std::vector<Complex>& scratch) {
  scratch.assign(n, Complex{});
  for (std::size_t k = 0; k < n; ++k) {
    Complex acc{};
    for (std::size_t t = 0; t < n; ++t) {
      // Reduce k*t mod n first so the phase argument stays small.
      const double phase = -2.0 * std::numbers::pi *
                           static_cast<double>((k * t) % n) / static_cast<double>(n);
      acc += data[t * stride] * std::polar(1.0, phase);
    }
    scratch[k] = acc;
  }
  for (std::size_t k = 0; k < n; ++k) data[k * stride] = scratch[k];
}

void transform_axis(std::span<Complex> data, std::size_t n, std::size_t stride,
                    std::vector<Complex>& line, std::vector<Complex>& scratch) {
  if (is_power_of_two(n)) {
    line.resize(n);
    for (std::size_t i = 0; i < n; ++i) line[i] = data[i * stride];
    fft_radix2(line);
    for (std::size_t i = 0; i < n; ++i) data[i * stride] = line[i];
  } else {
    dft_naive_1d(data, n, stride, scratch);
  }
}

}  // namespace

SpectrumGrid dft2d(std::span<const double> channel, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw InvalidArgument("dft2d: empty image");
  if (channel.size() != height * width) {
    throw ShapeError("dft2d: " + std::to_string(channel.size()) + " samples for " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
  SpectrumGrid s;
  s.height = height;
  s.width = width;
  s.bins.assign(channel.begin(), channel.end());
  std::vector<Complex> line, scratch;
  std::span<Complex> all(s.bins);
  // The 2-D DFT separates into row transforms followed by column transforms.
  for (std::size_t r = 0; r < height; ++r) {
    transform_axis(all.subspan(r * width, width), width, 1, line, scratch);
  }
  for (std::size_t c = 0; c < width; ++c) {
    transform_axis(all.subspan(c), height, width, line, scratch);
  }
  return s;
}

SpectrumGrid fftshift(const SpectrumGrid& in) {
  if (in.shifted) throw InvalidArgument("fftshift: spectrum is already shifted");
  SpectrumGrid out = in;
  out.shifted = true;
  const std::size_t h = in.height, w = in.width;
  for (std::size_t u = 0; u < h; ++u) {
    for (std::size_t v = 0; v < w; ++v) {
      out.bins[((u + h / 2) % h) * w + (v + w / 2) % w] = in.bins[u * w + v];
    }
  }
  return out;
}

}  // namespace mddc
