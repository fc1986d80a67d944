#pragma once

#include <filesystem>
#include <optional>

#include "mddc/autodiff.hpp"
#include "mddc/synthetic_io.hpp"

namespace mddc {

// Learnable per-pixel logits z[m, d, c, h, w], one plane set per pseudo
// domain for every synthetic image. Stored unclamped in logit space.
struct DomainMaskBank {
  std::size_t num_domains = 0;
  double init_value = 0.01;
  ad::NdValue logits;  // [M, D, C, H, W]

  static DomainMaskBank create(std::size_t images, std::size_t num_domains,
                               std::size_t channels, std::size_t height, std::size_t width,
                               double init_value = 0.01);
  std::size_t num_images() const { return logits.shape.at(0); }
};

// alpha = softmax over the domain axis of z / tau. tau must be positive.
ad::Var domain_weights(ad::Var logits, double tau);
ad::NdValue domain_weights(const ad::NdValue& logits, double tau);

// views[m, d] = images[m] * alpha[m, d]; images [M,C,H,W], alpha [M,D,C,H,W].
ad::Var domain_views(ad::Var images, ad::Var alpha);

struct DamInvariantCheck {
  double max_alpha_sum_error = 0.0;      // max |sum_d alpha - 1|
  double max_reconstruction_error = 0.0; // max |sum_d views - image|
  double min_alpha = 0.0;
  double max_alpha = 0.0;
};

DamInvariantCheck check_dam_invariants(const ad::NdValue& images, const ad::NdValue& logits,
                                       double tau);

// Writes the synthetic container, and the mask sidecar when both a bank and
// a sidecar path are supplied. Masks never enter the container.
void export_synthetic(const SyntheticDataset& syn, const std::filesystem::path& container,
                      const DomainMaskBank* masks = nullptr,
                      const std::optional<std::filesystem::path>& sidecar = std::nullopt);

}  // namespace mddc
