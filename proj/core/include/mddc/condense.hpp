#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mddc/autodiff.hpp"
#include "mddc/dam.hpp"
#include "mddc/dataset.hpp"
#include "mddc/embedder.hpp"
#include "mddc/freq_labeler.hpp"
#include "mddc/rng.hpp"
#include "mddc/synthetic_io.hpp"

namespace mddc {

enum class Backend { dm, gm_linear };
enum class InitMode { gaussian, real };
enum class EmbedderResample { per_iteration, fixed };

const char* backend_name(Backend b);
const char* init_name(InitMode m);
const char* resample_name(EmbedderResample r);
Backend parse_backend(std::string_view s);
InitMode parse_init(std::string_view s);
EmbedderResample parse_resample(std::string_view s);

// Independent seeds for each source of randomness in a run:
//   init      synthetic image initialisation
//   embedder  theta (and, through a child stream, theta_prime)
//   batching  real-batch sampling; class and domain batches use separate
//             child streams
//   masks     augmentation on the domain path
struct SeedSet {
  std::uint64_t init = 0;
  std::uint64_t embedder = 1;
  std::uint64_t batching = 2;
  std::uint64_t masks = 3;

  static SeedSet from_base(std::uint64_t base);
  bool operator==(const SeedSet&) const = default;
};

struct CondensationConfig {
  std::size_t ipc = 10;
  std::size_t num_domains = 4;
  double lambda = 0.1;
  double tau = 0.1;
  double mask_init = 0.01;
  std::size_t iterations = 1000;
  double lr_images = 1.0;
  double lr_masks = 0.1;
  Backend backend = Backend::dm;
  InitMode init = InitMode::gaussian;
  EmbedderResample embedder_resample = EmbedderResample::per_iteration;
  std::size_t batch_real = 64;
  std::size_t width = 64;
  bool dam = true;
  // DM reuses theta for the domain loss; gm-linear always draws theta_prime.
  bool separate_domain_embedder = false;
  bool flip_augment = false;
  std::size_t check_every = 50;
  SeedSet seeds;

  void validate() const;
};

// Applies one `key = value` setting. Unknown keys throw InvalidArgument.
void apply_setting(CondensationConfig& config, std::string_view key, std::string_view value);
void apply_settings(CondensationConfig& config, const std::map<std::string, std::string>& kv);
std::map<std::string, std::string> to_settings(const CondensationConfig& config);

struct IterationLoss {
  std::size_t iteration = 0;
  double l_cls = 0.0;
  double l_dom = 0.0;
  double l_total = 0.0;
};

struct LossReport {
  std::vector<IterationLoss> rows;

  std::string to_csv() const;  // iter,l_cls,l_dom,l_total
  double mean_total(std::size_t first, std::size_t last) const;
};

struct CheckpointCheck {
  std::size_t iteration = 0;
  DamInvariantCheck dam;
};

struct CondensationResult {
  SyntheticDataset syn;
  std::optional<DomainMaskBank> masks;
  LossReport report;
  std::vector<CheckpointCheck> checks;
};

struct Batch {
  ad::NdValue images;
  std::vector<int> labels;
  std::vector<std::size_t> indices;
};

SyntheticDataset init_synthetic(const CondensationConfig& config, std::size_t num_classes,
                                std::size_t channels, std::size_t hw,
                                const ImageSet* real = nullptr);

// Uniform draw of n indices from pool: without replacement when the pool is
// large enough, with replacement otherwise.
std::vector<std::size_t> sample_indices(std::span<const std::size_t> pool, std::size_t n,
                                        Stream& stream);
Batch sample_class_batch(const ImageSet& real, int cls, std::size_t n, Stream& stream);
Batch sample_domain_batch(const ImageSet& real, const PseudoDomainAssignment& labels, int domain,
                          std::size_t n, Stream& stream);

// sum_c || mean_embed(real_c) - mean_embed(syn_c) ||^2 with syn class-major,
// `ipc` images per class. real_batches[c] holds the class-c real batch.
ad::Var dm_class_loss(const FeatureMap& embedder, std::span<const ad::NdValue> real_batches,
                      ad::Var syn_images, std::size_t ipc);

// sum_d || mean_embed(real_d) - mean_m embed(views[m, d]) ||^2.
ad::Var dm_domain_loss(const FeatureMap& embedder, std::span<const ad::NdValue> real_batches,
                       ad::Var views);

ad::Var total_loss(ad::Var l_cls, ad::Var l_dom, double lambda);
double total_loss(double l_cls, double l_dom, double lambda);

// Closed-form cross-entropy gradient of a bias-free linear softmax model
// W [C, P] on a flattened batch: mean_i (softmax(W x_i) - onehot(y_i)) x_i^T.
ad::NdValue linear_ce_gradient(const ad::NdValue& batch, std::span<const int> labels,
                               const ad::NdValue& weight);
ad::Var linear_ce_gradient(ad::Var batch, std::span<const int> labels, const ad::NdValue& weight);

// Row-wise cosine distance between the real-batch and synthetic-batch
// gradients of the linear model, differentiable w.r.t. the synthetic pixels.
ad::Var gm_linear_loss(const ad::NdValue& real_batch, std::span<const int> real_labels,
                       ad::Var syn_batch, std::span<const int> syn_labels,
                       const ad::NdValue& weight);

// Random W for the linear backend, uniform in +-1/sqrt(P).
ad::NdValue init_linear_weight(std::size_t classes, std::size_t pixels, std::uint64_t seed);

// Called after every checkpoint; lets callers observe the run.
using CondensationObserver = std::function<void(const CheckpointCheck&)>;

// `labels` may be null only when config.dam is false.
CondensationResult run_condensation(const CondensationConfig& config, const ImageSet& real,
                                    const PseudoDomainAssignment* labels,
                                    const CondensationObserver& observer = {});

// Echo of the resolved configuration, one `key = value` per line.
std::string format_run_meta(const CondensationConfig& config,
                            const std::map<std::string, std::string>& extra = {});

}  // namespace mddc
