#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mddc/autodiff.hpp"

namespace mddc {

// Condensed images, class-major: image m belongs to class m / ipc.
struct SyntheticDataset {
  std::size_t num_classes = 0;
  std::size_t ipc = 0;
  std::size_t channels = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  ad::NdValue images;       // [M, channels, height, width]
  std::vector<int> labels;  // M entries

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return channels * height * width; }
  // Throws ShapeError unless there are exactly num_classes * ipc images with
  // ipc per class in class-major order.
  void validate() const;
};

// Binary container, little-endian:
//   "MDDC" | u16 version | u32 C, IPC, H, W, channels |
//   u16 label * M | f32 pixel * (M * channels * H * W), image-major.
inline constexpr std::uint16_t kContainerVersion = 1;

std::vector<std::uint8_t> encode_container(const SyntheticDataset& syn);
SyntheticDataset decode_container(std::span<const std::uint8_t> bytes);
void write_container(const SyntheticDataset& syn, const std::filesystem::path& path);
SyntheticDataset read_container(const std::filesystem::path& path);

// Mask sidecar: the container header, then u32 D, then f32 logits
// [M, D, channels, H, W]. No labels or images.
struct MaskSidecar {
  std::size_t num_classes = 0;
  std::size_t ipc = 0;
  std::size_t channels = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t num_domains = 0;
  std::vector<float> logits;

  std::size_t mask_planes() const { return num_classes * ipc * num_domains * channels; }
};

std::vector<std::uint8_t> encode_sidecar(const SyntheticDataset& syn, const ad::NdValue& logits);
MaskSidecar decode_sidecar(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace mddc
