#include "mddc/dam.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mddc/error.hpp"

namespace mddc {

DomainMaskBank DomainMaskBank::create(std::size_t images, std::size_t num_domains,
                                      std::size_t channels, std::size_t height,
                                      std::size_t width, double init_value) {
  if (num_domains == 0) throw InvalidArgument("mask bank: D must be >= 1");
  DomainMaskBank bank;
  bank.num_domains = num_domains;
  bank.init_value = init_value;
  bank.logits =
      ad::NdValue::full({images, num_domains, channels, height, width}, init_value, true);
  return bank;
}

ad::Var domain_weights(ad::Var logits, double tau) {
  if (!(tau > 0.0)) throw InvalidArgument("domain_weights: tau must be > 0");
  if (logits.shape().size() != 5) {
    throw ShapeError("domain_weights: expected [M,D,C,H,W], got " + ad::shape_str(logits.shape()));
  }
  return ad::softmax(ad::scale(logits, 1.0 / tau), 1);
}

ad::NdValue domain_weights(const ad::NdValue& logits, double tau) {
  ad::Tape tape;
  return domain_weights(tape.constant(logits), tau).value();
}

ad::Var domain_views(ad::Var images, ad::Var alpha) {
  const auto& si = images.shape();
  const auto& sa = alpha.shape();
  if (si.size() != 4 || sa.size() != 5 || sa[0] != si[0] || sa[2] != si[1] || sa[3] != si[2] ||
      sa[4] != si[3]) {
    throw ShapeError("domain_views: images " + ad::shape_str(si) + " incompatible with weights " +
                     ad::shape_str(sa));
  }
  return ad::mul(ad::expand(images, 1, sa[1]), alpha);
}

DamInvariantCheck check_dam_invariants(const ad::NdValue& images, const ad::NdValue& logits,
                                       double tau) {
  const ad::NdValue alpha = domain_weights(logits, tau);
  const std::size_t m = logits.shape[0], d = logits.shape[1];
  const std::size_t plane = images.size() / std::max<std::size_t>(m, 1);
  if (images.size() != m * plane || alpha.size() != m * d * plane) {
    throw ShapeError("check_dam_invariants: images and logits disagree");
  }
  DamInvariantCheck c;
  c.min_alpha = 1.0;
  c.max_alpha = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < plane; ++p) {
      double asum = 0.0, vsum = 0.0;
      const double x = images.data[i * plane + p];
      for (std::size_t k = 0; k < d; ++k) {
        const double a = alpha.data[(i * d + k) * plane + p];
        asum += a;
        vsum += x * a;
        c.min_alpha = std::min(c.min_alpha, a);
        c.max_alpha = std::max(c.max_alpha, a);
      }
      c.max_alpha_sum_error = std::max(c.max_alpha_sum_error, std::abs(asum - 1.0));
      c.max_reconstruction_error = std::max(c.max_reconstruction_error, std::abs(vsum - x));
    }
  }
  return c;
}

void export_synthetic(const SyntheticDataset& syn, const std::filesystem::path& container,
                      const DomainMaskBank* masks,
                      const std::optional<std::filesystem::path>& sidecar) {
  syn.validate();
  write_container(syn, container);
  if (masks && sidecar) write_file_bytes(*sidecar, encode_sidecar(syn, masks->logits));
}

}  // namespace mddc
