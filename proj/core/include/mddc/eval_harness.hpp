#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mddc/condense.hpp"
#include "mddc/dataset.hpp"
#include "mddc/embedder.hpp"
#include "mddc/freq_labeler.hpp"
#include "mddc/synthetic_io.hpp"

namespace mddc {

struct EvalConfig {
  std::size_t epochs = 100;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t batch = 256;
  std::size_t width = 64;
  // Parallel repeats in repeat_protocol; results do not depend on it.
  std::size_t threads = 1;

  void validate() const;
  // lr is halved once at 50% and once at 75% of the epochs.
  double lr_at(std::size_t epoch) const;
};

class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual std::vector<int> predict(const ad::NdValue& batch) const = 0;
};

class ConvNetClassifier final : public Classifier {
 public:
  explicit ConvNetClassifier(EmbedderParams params) : params_(std::move(params)) {}
  std::vector<int> predict(const ad::NdValue& batch) const override;
  const EmbedderParams& params() const { return params_; }

 private:
  EmbedderParams params_;
};

struct TrainedClassifier {
  ConvNetClassifier model;
  std::vector<double> epoch_loss;  // mean cross-entropy per epoch
};

ImageSet to_image_set(const SyntheticDataset& syn);

// Fresh ConvNet (depth by resolution), SGD with momentum, cross-entropy.
// Deterministic in (data, config, seed). Throws NumericalError naming the
// epoch if the loss stops being finite.
TrainedClassifier train_classifier(const ImageSet& data, const EvalConfig& config,
                                   std::uint64_t seed);
TrainedClassifier train_on_synthetic(const SyntheticDataset& syn, const EvalConfig& config,
                                     std::uint64_t seed);

// Top-1 accuracy, optionally restricted to one ground-truth domain.
double evaluate(const Classifier& classifier, const RealDataset& test,
                std::optional<int> domain = std::nullopt);

struct RepeatResult {
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracies;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single run
};

RepeatResult summarize(std::vector<std::uint64_t> seeds, std::vector<double> accuracies);

// n_runs = seeds.size() independent train+evaluate runs.
RepeatResult repeat_protocol(const SyntheticDataset& syn, const RealDataset& test,
                             const EvalConfig& config, std::span<const std::uint64_t> seeds,
                             std::optional<int> domain = std::nullopt);

std::vector<std::uint64_t> default_eval_seeds(std::size_t runs, std::uint64_t base = 0);

// IPC random real images per class, class-major, as a synthetic set.
SyntheticDataset random_real_subset(const ImageSet& real, std::size_t ipc, std::uint64_t seed);

struct LodoResult {
  int target_domain = 0;
  CondensationResult condensation;
  RepeatResult eval;
};

// Condenses on every domain except `target` (pseudo-labelled from scratch)
// and evaluates on the held-out domain of the test split.
LodoResult leave_one_domain_out(const RealDataset& train, const RealDataset& test, int target,
                                const CondensationConfig& condense, const LabelingConfig& labeling,
                                const EvalConfig& eval, std::span<const std::uint64_t> seeds);

struct ResultRow {
  std::string protocol;
  std::string dataset;
  std::string backend;
  bool dam = false;
  std::size_t ipc = 0;
  std::size_t num_domains = 0;
  double lambda = 0.0;
  double tau = 0.0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
};

std::string results_csv(std::span<const ResultRow> rows);
// One mean/std row per distinct (protocol, dataset, backend, dam, ipc, D,
// lambda, tau), in first-seen order.
std::string summary_csv(std::span<const ResultRow> rows);

}  // namespace mddc
