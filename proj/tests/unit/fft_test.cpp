#include <gtest/gtest.h>

#include <cmath>

#include "mddc/fft.hpp"
#include "mddc/error.hpp"
#include "oracles.hpp"

namespace mddc {
namespace {

std::vector<double> random_image(std::size_t h, std::size_t w, Stream& s) {
  std::vector<double> v(h * w);
  for (double& x : v) x = s.uniform(0.0, 1.0);
  return v;
}

TEST(Dft2d, MatchesNaiveOracleOnEverySizeUpTo16) {
  Stream s(1);
  for (std::size_t h = 1; h <= 16; ++h)
    for (std::size_t w = 1; w <= 16; ++w) {
      const auto img = random_image(h, w, s);
      const auto got = dft2d(img, h, w);
      const auto want = testing::naive_dft2d(img, h, w);
      ASSERT_EQ(got.bins.size(), want.size());
      double err = 0;
      for (std::size_t i = 0; i < want.size(); ++i) err = std::max(err, std::abs(got.bins[i] - want[i]));
      EXPECT_LT(err, 1e-9) << h << "x" << w;
    }
}

TEST(Dft2d, ParsevalHoldsOnRandomImages) {
  Stream s(2);
  for (std::size_t h : {4, 7, 8, 16, 32})
    for (std::size_t w : {3, 8, 16, 32}) {
      const auto img = random_image(h, w, s);
      const auto f = dft2d(img, h, w);
      double spatial = 0, spectral = 0;
      for (double x : img) spatial += x * x;
      for (const auto& c : f.bins) spectral += std::norm(c);
      EXPECT_NEAR(spectral / (static_cast<double>(h * w) * spatial), 1.0, 1e-6);
    }
}

TEST(Dft2d, ConstantImageHasOnlyDc) {
  const std::vector<double> img(6 * 4, 0.3);
  const auto f = dft2d(img, 6, 4);
  EXPECT_NEAR(std::abs(f.at(0, 0)), 0.3 * 24, 1e-12);
  for (std::size_t i = 1; i < f.bins.size(); ++i) EXPECT_NEAR(std::abs(f.bins[i]), 0.0, 1e-12);
}

TEST(Dft2d, ImpulseHasFlatSpectrum) {
  for (std::size_t pos : {0u, 5u, 17u}) {
    std::vector<double> img(8 * 4, 0.0);
    img[pos] = 1.0;
    for (const auto& c : dft2d(img, 8, 4).bins) EXPECT_NEAR(std::abs(c), 1.0, 1e-12);
  }
}

TEST(Dft2d, RejectsEmptyOrMismatchedInput) {
  EXPECT_THROW(dft2d({}, 0, 4), InvalidArgument);
  const std::vector<double> img(5);
  EXPECT_THROW(dft2d(img, 2, 3), ShapeError);
}

TEST(FftRadix2, RequiresPowerOfTwoAndMatchesDirectSum) {
  std::vector<Complex> odd(6);
  EXPECT_THROW(fft_radix2(odd), InvalidArgument);
  EXPECT_TRUE(is_power_of_two(1));
  EXPECT_TRUE(is_power_of_two(64));
  EXPECT_FALSE(is_power_of_two(0));
  EXPECT_FALSE(is_power_of_two(12));
  Stream s(3);
  std::vector<double> re(16);
  for (double& x : re) x = s.uniform(-1, 1);
  std::vector<Complex> data(re.begin(), re.end());
  fft_radix2(data);
  const auto want = testing::naive_dft2d(re, 1, 16);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_LT(std::abs(data[i] - want[i]), 1e-12);
}

TEST(FftShift, MovesDcToCentre) {
  Stream s(4);
  for (std::size_t h : {4, 5})
    for (std::size_t w : {6, 7}) {
      const auto img = random_image(h, w, s);
      const auto f = dft2d(img, h, w);
      const auto g = fftshift(f);
      EXPECT_TRUE(g.shifted);
      EXPECT_EQ(g.at(h / 2, w / 2), f.at(0, 0));
      for (std::size_t u = 0; u < h; ++u)
        for (std::size_t v = 0; v < w; ++v)
          EXPECT_EQ(g.at((u + h / 2) % h, (v + w / 2) % w), f.at(u, v));
      EXPECT_THROW(fftshift(g), InvalidArgument);
    }
}

}  // namespace
}  // namespace mddc
