#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mddc/dataset.hpp"
#include "mddc/embedder.hpp"
#include "mddc/fft.hpp"

namespace mddc {

enum class SortOrder { ascending, descending };

enum class LabelMethod { fft_meansort, fft_kmeans, logvar_meansort, logvar_kmeans, random };

const char* order_name(SortOrder order);
const char* method_name(LabelMethod method);
SortOrder parse_order(std::string_view text);
LabelMethod parse_method(std::string_view text);

// Shifted spectra for every channel of one [C,H,W] image.
std::vector<SpectrumGrid> image_spectrum(std::span<const double> chw, std::size_t channels,
                                         std::size_t height, std::size_t width);

// Edge length of the centred crop: round(beta * n), at least 1.
std::size_t crop_extent(std::size_t n, double beta);

// Sum of |F| over a centred round(beta*H) x round(beta*W) window of every
// channel, divided by (channels * beta^2 * H * W). beta in (0, 1].
double mean_amplitude(std::span<const SpectrumGrid> shifted_channels, double beta);

// mean_amplitude of one image, straight from pixels.
double image_mu(std::span<const double> chw, std::size_t channels, std::size_t height,
                std::size_t width, double beta);

// Stable 1-based ranking by value (ties by index), then
// label = floor((rank - 1) / (N / D)). Requires 1 <= D <= N.
std::vector<int> rank_and_slice(std::span<const double> values, std::size_t num_domains,
                                SortOrder order);

// Lloyd's algorithm on scalars with quantile initialisation. Labels are
// ordered by ascending centroid. Requires K <= number of distinct values.
std::vector<int> kmeans_1d(std::span<const double> values, std::size_t k, std::uint64_t seed,
                           std::size_t max_iters = 100);

// Per image: mean over the feature maps of blocks 1 and 2 of
// log(spatial variance + 1e-8).
std::vector<double> logvar_features(const ImageSet& images, const EmbedderParams& params);

std::vector<int> random_labels(std::size_t n, std::size_t num_domains, std::uint64_t seed);

struct LabelingConfig {
  LabelMethod method = LabelMethod::fft_meansort;
  std::size_t num_domains = 4;
  double beta = 0.25;
  SortOrder order = SortOrder::ascending;
  std::uint64_t seed = 0;
  // Width of the random ConvNet used by the log-variance methods.
  std::size_t logvar_width = 64;

  void validate() const;
};

struct PseudoDomainAssignment {
  std::vector<int> labels;
  // Per-image statistic the labels were derived from (mu for FFT methods,
  // log-variance feature otherwise, 0 for random labels).
  std::vector<double> statistic;
  LabelingConfig config;

  std::size_t num_domains() const { return config.num_domains; }
  std::vector<std::size_t> indices_of_domain(int d) const;
};

PseudoDomainAssignment assign_pseudo_domains(const ImageSet& images,
                                             const LabelingConfig& config);

// Text format: one header line
//   # method=<m> D=<d> beta=<b> order=<o> seed=<s>
// followed by `<index>,<statistic>,<label>` per image.
void write_labels(const PseudoDomainAssignment& assignment, const std::filesystem::path& path);
std::string format_labels(const PseudoDomainAssignment& assignment);
PseudoDomainAssignment read_labels(const std::filesystem::path& path);
PseudoDomainAssignment parse_labels(std::string_view text);

}  // namespace mddc
