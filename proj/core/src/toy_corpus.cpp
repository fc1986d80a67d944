#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "mddc/dataset.hpp"
#include "mddc/error.hpp"
#include "mddc/kv_config.hpp"
#include "mddc/rng.hpp"
#include "mddc/synthetic_io.hpp"

namespace fs = std::filesystem;

namespace mddc {

namespace {

enum class Style { heavy_blur, mild_blur, noise, high_pass };

constexpr double kContrast = 0.22;
constexpr double kNoiseSigma = 0.04;
constexpr double kHighPassGain = 1.0;

// Shape template for class c centred at (cy, cx) with half-extent r.
bool inside(std::size_t c, double y, double x, double r) {
  const double ax = std::abs(x), ay = std::abs(y);
  const bool box = ax < r && ay < r;
  switch (c) {
    case 0:  // vertical bars
      return box && static_cast<long>(std::floor((x + r) / (r / 2))) % 2 == 0;
    case 1:  // disk
      return x * x + y * y < r * r;
    case 2:  // cross
      return (ax < r / 3 && ay < r) || (ay < r / 3 && ax < r);
    case 3:  // 2x2 checker
      return box &&
             (static_cast<long>(std::floor((x + r) / r)) + static_cast<long>(std::floor((y + r) / r))) % 2 == 0;
    case 4: {  // ring
      const double rr = x * x + y * y;
      return rr < r * r && rr > 0.36 * r * r;
    }
    case 5:  // triangle
      return ay < r && ax < (y + r) / 2;
    case 6:  // diagonal cross
      return box && (std::abs(x - y) < r / 3 || std::abs(x + y) < r / 3);
    case 7:  // horizontal bars
      return box && static_cast<long>(std::floor((y + r) / (r / 2))) % 2 == 0;
    default: {  // oriented grating
      const double theta = static_cast<double>(c) * 2.39996322972865332;
      const double t = x * std::cos(theta) + y * std::sin(theta);
      return box && std::cos(2.0 * std::numbers::pi * t / r) > 0.0;
    }
  }
}

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double s = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    s += k[i + radius];
  }
  for (double& v : k) v /= s;
  return k;
}

// Separable Gaussian blur with edge clamping.
std::vector<double> blur(const std::vector<double>& img, std::size_t hw, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const long radius = static_cast<long>(k.size() / 2);
  const long n = static_cast<long>(hw);
  auto at = [n](long i) { return std::clamp(i, 0L, n - 1); };
  std::vector<double> tmp(img.size()), out(img.size());
  for (long y = 0; y < n; ++y) {
    for (long x = 0; x < n; ++x) {
      double s = 0.0;
      for (long j = -radius; j <= radius; ++j) s += k[j + radius] * img[y * n + at(x + j)];
      tmp[y * n + x] = s;
    }
  }
  for (long y = 0; y < n; ++y) {
    for (long x = 0; x < n; ++x) {
      double s = 0.0;
      for (long j = -radius; j <= radius; ++j) s += k[j + radius] * tmp[at(y + j) * n + x];
      out[y * n + x] = s;
    }
  }
  return out;
}

Style style_of(std::size_t d, std::size_t domains) {
  if (domains == 1) return Style::mild_blur;
  const auto s = static_cast<int>(std::lround(3.0 * d / static_cast<double>(domains - 1)));
  return static_cast<Style>(s);
}

double level_of(std::size_t d, std::size_t domains) {
  if (domains == 1) return 0.5;
  return 0.84 - 0.66 * static_cast<double>(d) / static_cast<double>(domains - 1);
}

std::array<double, 3> tint_of(std::size_t d, std::size_t domains) {
  const double t = domains == 1 ? 0.0 : 0.05 - 0.1 * static_cast<double>(d) / static_cast<double>(domains - 1);
  return {1.0 + t, 1.0, 1.0 - t};
}

void render(std::size_t c, std::size_t d, std::size_t domains, std::size_t hw, Stream& stream,
            std::vector<double>& out) {
  const double h = static_cast<double>(hw);
  const double jitter = 3.0 * h / 32.0;
  const double cy = h / 2 + stream.uniform(-jitter, jitter);
  const double cx = h / 2 + stream.uniform(-jitter, jitter);
  const double r = 0.28 * h * stream.uniform(0.9, 1.1);
  const double shift = stream.uniform(-0.02, 0.02);

  std::vector<double> mask(hw * hw);
  double mean = 0.0;
  for (std::size_t y = 0; y < hw; ++y) {
    for (std::size_t x = 0; x < hw; ++x) {
      const double v = inside(c, y + 0.5 - cy, x + 0.5 - cx, r) ? 1.0 : 0.0;
      mask[y * hw + x] = v;
      mean += v;
    }
  }
  mean /= static_cast<double>(hw * hw);

  const Style style = style_of(d, domains);
  const double level = level_of(d, domains);
  const auto tint = tint_of(d, domains);
  std::vector<double> plane(hw * hw);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    for (std::size_t p = 0; p < plane.size(); ++p) {
      plane[p] = level * tint[ch] + kContrast * (mask[p] - mean);
    }
    switch (style) {
      case Style::heavy_blur: plane = blur(plane, hw, 1.6 * h / 32.0); break;
      case Style::mild_blur: plane = blur(plane, hw, 1.0 * h / 32.0); break;
      case Style::noise:
        for (double& v : plane) v += kNoiseSigma * stream.normal();
        break;
      case Style::high_pass: {
        const auto low = blur(plane, hw, 0.6 * h / 32.0);
        for (std::size_t p = 0; p < plane.size(); ++p) plane[p] += kHighPassGain * (plane[p] - low[p]);
        break;
      }
    }
    for (double v : plane) out.push_back(std::clamp(v + shift, 0.0, 1.0));
  }
}

RealDataset generate_split(const ToyCorpusConfig& cfg, std::size_t per_cell, Split split) {
  RealDataset ds;
  ds.split = split;
  ds.images.channels = 3;
  ds.images.height = cfg.hw;
  ds.images.width = cfg.hw;
  ds.images.num_classes = cfg.classes;
  ds.domain_labels.emplace();
  char name[32];
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    std::snprintf(name, sizeof name, "c%02zu", c);
    ds.class_names.emplace_back(name);
  }
  for (std::size_t d = 0; d < cfg.domains; ++d) {
    std::snprintf(name, sizeof name, "d%02zu", d);
    ds.domain_names.emplace_back(name);
  }
  Stream stream(cfg.seed, split == Split::train ? "toy_train" : "toy_test");
  ds.images.pixels.reserve(cfg.domains * cfg.classes * per_cell * 3 * cfg.hw * cfg.hw);
  for (std::size_t d = 0; d < cfg.domains; ++d) {
    for (std::size_t c = 0; c < cfg.classes; ++c) {
      for (std::size_t k = 0; k < per_cell; ++k) {
        render(c, d, cfg.domains, cfg.hw, stream, ds.images.pixels);
        ds.images.labels.push_back(static_cast<int>(c));
        ds.domain_labels->push_back(static_cast<int>(d));
      }
    }
  }
  return ds;
}

}  // namespace

ToyCorpus gen_toy_multidomain(const ToyCorpusConfig& config) {
  if (config.hw < 16 || (config.hw & (config.hw - 1)) != 0) {
    throw InvalidArgument("toy corpus: hw must be a power of two >= 16");
  }
  if (config.classes == 0 || config.domains == 0 || config.per_cell == 0) {
    throw InvalidArgument("toy corpus: classes, domains and per_cell must be >= 1");
  }
  const std::size_t test_cell =
      config.test_per_cell ? config.test_per_cell : std::max<std::size_t>(1, config.per_cell / 5);
  return {generate_split(config, config.per_cell, Split::train),
          generate_split(config, test_cell, Split::test)};
}

void write_corpus(const ToyCorpus& corpus, const ToyCorpusConfig& config, const fs::path& root) {
  for (const RealDataset* ds : {&corpus.train, &corpus.test}) {
    const fs::path base = root / split_name(ds->split);
    std::vector<std::size_t> counter(ds->domain_names.size() * ds->class_names.size(), 0);
    for (std::size_t i = 0; i < ds->size(); ++i) {
      const auto d = static_cast<std::size_t>((*ds->domain_labels)[i]);
      const auto c = static_cast<std::size_t>(ds->images.labels[i]);
      const fs::path dir = base / ds->domain_names[d] / ds->class_names[c];
      fs::create_directories(dir);
      char file[32];
      std::snprintf(file, sizeof file, "%05zu.ppm", counter[d * ds->class_names.size() + c]++);
      write_file_bytes(dir / file,
                       encode_ppm(ds->images.image(i), ds->images.height, ds->images.width));
    }
  }
  const std::size_t test_cell =
      config.test_per_cell ? config.test_per_cell : std::max<std::size_t>(1, config.per_cell / 5);
  const std::string manifest = format_kv({
      {"format", "mddc-toy"},
      {"classes", std::to_string(config.classes)},
      {"domains", std::to_string(config.domains)},
      {"per_cell", std::to_string(config.per_cell)},
      {"test_per_cell", std::to_string(test_cell)},
      {"hw", std::to_string(config.hw)},
      {"seed", std::to_string(config.seed)},
  });
  write_file_bytes(root / "manifest.txt",
                   std::span(reinterpret_cast<const std::uint8_t*>(manifest.data()), manifest.size()));
}

}  // namespace mddc
