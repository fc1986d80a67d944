#pragma once

#include <complex>
#include <span>
#include <vector>

namespace mddc {

using Complex = std::complex<double>;

// One channel of a 2-D spectrum, row-major [height, width].
struct SpectrumGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  bool shifted = false;
  std::vector<Complex> bins;

  const Complex& at(std::size_t u, std::size_t v) const { return bins[u * width + v]; }
};

bool is_power_of_two(std::size_t n);

// In-place iterative radix-2 FFT. data.size() must be a power of two.
void fft_radix2(std::span<Complex> data);

// F[u,v] = sum_h sum_w x[h,w] exp(-2*pi*i*(u*h/H + v*w/W)).
// Radix-2 row/column passes when both sides are powers of two, direct
// summation otherwise.
SpectrumGrid dft2d(std::span<const double> channel, std::size_t height, std::size_t width);

// Moves the zero-frequency bin to (height/2, width/2).
SpectrumGrid fftshift(const SpectrumGrid& spectrum);

}  // namespace mddc
