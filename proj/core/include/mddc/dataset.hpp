#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mddc/autodiff.hpp"

namespace mddc {

enum class Split { train, test };

const char* split_name(Split split);

// Images with class labels only. This is everything condensation is allowed
// to see; ground-truth domains live on RealDataset.
struct ImageSet {
  std::size_t channels = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t num_classes = 0;
  std::vector<double> pixels;  // [N, channels, height, width], values in [0,1]
  std::vector<int> labels;     // class per image

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return channels * height * width; }
  std::span<const double> image(std::size_t n) const;

  // Gathers the given images into a [k, C, H, W] batch.
  ad::NdValue gather(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> indices_of_class(int c) const;

  // Throws FormatError on size mismatch, labels out of range or pixels
  // outside [0,1].
  void validate() const;
};

struct RealDataset {
  ImageSet images;
  // Ground-truth domains; evaluation-only.
  std::optional<std::vector<int>> domain_labels;
  std::vector<std::string> class_names;
  std::vector<std::string> domain_names;
  Split split = Split::train;

  std::size_t size() const { return images.size(); }
  std::size_t num_domains() const;
  // Subset keeping images whose ground-truth domain satisfies keep(domain).
  RealDataset filter_domains(std::span<const int> keep) const;
  void validate() const;
};

// CIFAR-10 binary batches. `path` is either a single batch file or a
// directory holding data_batch_{1..5}.bin / test_batch.bin.
RealDataset load_cifar10(const std::filesystem::path& path, Split split);
// Parses records from an in-memory buffer (1 label byte + 3072 pixel bytes).
RealDataset parse_cifar10(std::span<const std::uint8_t> bytes, Split split,
                          std::size_t base_offset = 0);

// root/<domain>/<class>/<file>.ppm, binary P6, maxval 255. Domains, classes
// and files are enumerated in lexicographic order.
RealDataset load_image_dir(const std::filesystem::path& root, Split split = Split::train);

struct PpmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;  // interleaved
};

PpmImage parse_ppm(std::span<const std::uint8_t> bytes, const std::string& name = "<memory>");
std::vector<std::uint8_t> encode_ppm(std::span<const double> chw, std::size_t height,
                                     std::size_t width);

struct ToyCorpus {
  RealDataset train;
  RealDataset test;
};

struct ToyCorpusConfig {
  std::size_t classes = 4;
  std::size_t domains = 4;
  std::size_t per_cell = 100;       // train images per (class, domain)
  std::size_t test_per_cell = 0;    // 0 -> max(1, per_cell / 5)
  std::size_t hw = 32;
  std::uint64_t seed = 0;
};

// Procedural multi-domain corpus. Classes are shape templates; domains are
// spectral styles ordered so that domain 0 carries the most low-frequency
// energy and the last domain the least.
ToyCorpus gen_toy_multidomain(const ToyCorpusConfig& config);

// Writes split/<domain>/<class>/<index>.ppm trees plus manifest.txt.
void write_corpus(const ToyCorpus& corpus, const ToyCorpusConfig& config,
                  const std::filesystem::path& root);

// Resolves a dataset argument: a corpus root (manifest.txt), a CIFAR-10
// directory or batch file, or an image directory.
RealDataset load_dataset(const std::filesystem::path& path, Split split);

}  // namespace mddc
