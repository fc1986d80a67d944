#include "mddc/eval_harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>
#include <tuple>

#include "mddc/error.hpp"

namespace mddc {

void EvalConfig::validate() const {
  if (epochs == 0) throw InvalidArgument("eval: epochs must be >= 1");
  if (!(lr > 0.0)) throw InvalidArgument("eval: lr must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) throw InvalidArgument("eval: momentum must be in [0,1)");
  if (batch == 0) throw InvalidArgument("eval: batch must be >= 1");
  if (width == 0) throw InvalidArgument("eval: width must be >= 1");
}

double EvalConfig::lr_at(std::size_t epoch) const {
  double v = lr;
  if (2 * epoch >= epochs) v *= 0.5;
  if (4 * epoch >= 3 * epochs) v *= 0.5;
  return v;
}

std::vector<int> ConvNetClassifier::predict(const ad::NdValue& batch) const {
  constexpr std::size_t kChunk = 64;
  const std::size_t n = batch.shape.at(0);
  const std::size_t per = batch.size() / std::max<std::size_t>(n, 1);
  std::vector<int> out;
  out.reserve(n);
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t k = std::min(kChunk, n - start);
    ad::Shape shape = batch.shape;
    shape[0] = k;
    ad::NdValue chunk(shape, std::vector<double>(batch.data.begin() + static_cast<std::ptrdiff_t>(start * per),
                                                 batch.data.begin() + static_cast<std::ptrdiff_t>((start + k) * per)));
    ad::Tape tape;
    const BoundParams bound = bind(tape, params_, false);
    const ad::Var logits = classify(bound, tape.constant(std::move(chunk)));
    const std::size_t classes = logits.shape()[1];
    const auto& v = logits.value().data;
    for (std::size_t i = 0; i < k; ++i) {
      const auto row = v.begin() + static_cast<std::ptrdiff_t>(i * classes);
      out.push_back(static_cast<int>(std::max_element(row, row + static_cast<std::ptrdiff_t>(classes)) - row));
    }
  }
  return out;
}

ImageSet to_image_set(const SyntheticDataset& syn) {
  syn.validate();
  ImageSet s;
  s.channels = syn.channels;
  s.height = syn.height;
  s.width = syn.width;
  s.num_classes = syn.num_classes;
  s.pixels = syn.images.data;
  s.labels = syn.labels;
  return s;
}

TrainedClassifier train_classifier(const ImageSet& data, const EvalConfig& config,
                                   std::uint64_t seed) {
  config.validate();
  if (data.size() == 0) throw InvalidArgument("eval: empty training set");
  if (data.height != data.width) throw ShapeError("eval: images must be square");
  ConvNetConfig net = ConvNetConfig::for_resolution(data.height, config.width, data.num_classes);
  net.channels = data.channels;
  EmbedderParams params = init_convnet(net, derive_seed(seed, "eval_init"), ParamRole::theta);

  std::vector<ad::NdValue*> slots;
  for (auto& w : params.conv_weight) slots.push_back(&w);
  for (auto& b : params.conv_bias) slots.push_back(&b);
  slots.push_back(&params.head_weight);
  slots.push_back(&params.head_bias);
  std::vector<std::vector<double>> velocity;
  for (auto* s : slots) velocity.emplace_back(s->size(), 0.0);

  Stream shuffle(seed, "eval_shuffle");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  TrainedClassifier result{ConvNetClassifier(EmbedderParams{}), {}};

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle.engine());
    const double lr = config.lr_at(epoch);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t k = std::min(config.batch, order.size() - start);
      const std::span<const std::size_t> idx(order.data() + start, k);
      std::vector<int> labels;
      labels.reserve(k);
      for (auto i : idx) labels.push_back(data.labels[i]);

      ad::Tape tape;
      const BoundParams bound = bind(tape, params, true);
      const ad::Var loss = ad::cross_entropy_loss(classify(bound, tape.constant(data.gather(idx))), labels);
      if (!std::isfinite(loss.item())) {
        throw NumericalError("eval training diverged at epoch " + std::to_string(epoch));
      }
      loss_sum += loss.item() * static_cast<double>(k);
      tape.backward(loss);

      std::vector<ad::Var> vars;
      for (auto& v : bound.conv_weight) vars.push_back(v);
      for (auto& v : bound.conv_bias) vars.push_back(v);
      vars.push_back(bound.head_weight);
      vars.push_back(bound.head_bias);
      for (std::size_t p = 0; p < slots.size(); ++p) {
        auto& w = slots[p]->data;
        auto& vel = velocity[p];
        const auto g = tape.grad(vars[p]);
        for (std::size_t i = 0; i < w.size(); ++i) {
          vel[i] = config.momentum * vel[i] + g[i] + config.weight_decay * w[i];
          w[i] -= lr * vel[i];
          if (!std::isfinite(w[i])) {
            throw NumericalError("eval training diverged at epoch " + std::to_string(epoch) +
                                 " (non-finite parameter)");
          }
        }
      }
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(data.size()));
  }
  result.model = ConvNetClassifier(std::move(params));
  return result;
}

TrainedClassifier train_on_synthetic(const SyntheticDataset& syn, const EvalConfig& config,
                                     std::uint64_t seed) {
  return train_classifier(to_image_set(syn), config, seed);
}

double evaluate(const Classifier& classifier, const RealDataset& test, std::optional<int> domain) {
  if (test.size() == 0) throw InvalidArgument("evaluate: empty test set");
  std::vector<std::size_t> idx;
  if (domain) {
    if (!test.domain_labels) throw InvalidArgument("evaluate: test set has no domain labels");
    for (std::size_t i = 0; i < test.size(); ++i) {
      if ((*test.domain_labels)[i] == *domain) idx.push_back(i);
    }
    if (idx.empty()) {
      throw InvalidArgument("evaluate: no test images in domain " + std::to_string(*domain));
    }
  } else {
    idx.resize(test.size());
    std::iota(idx.begin(), idx.end(), 0);
  }
  const auto pred = classifier.predict(test.images.gather(idx));
  std::size_t hit = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) hit += pred[i] == test.images.labels[idx[i]];
  return static_cast<double>(hit) / static_cast<double>(idx.size());
}

RepeatResult summarize(std::vector<std::uint64_t> seeds, std::vector<double> accuracies) {
  RepeatResult r;
  r.seeds = std::move(seeds);
  r.accuracies = std::move(accuracies);
  const auto n = static_cast<double>(r.accuracies.size());
  if (r.accuracies.empty()) return r;
  r.mean = std::accumulate(r.accuracies.begin(), r.accuracies.end(), 0.0) / n;
  if (r.accuracies.size() > 1) {
    double ss = 0.0;
    for (double a : r.accuracies) ss += (a - r.mean) * (a - r.mean);
    r.std = std::sqrt(ss / (n - 1.0));
  }
  return r;
}

RepeatResult repeat_protocol(const SyntheticDataset& syn, const RealDataset& test,
                             const EvalConfig& config, std::span<const std::uint64_t> seeds,
                             std::optional<int> domain) {
  if (seeds.empty()) throw InvalidArgument("repeat_protocol: at least one seed is required");
  config.validate();
  const ImageSet data = to_image_set(syn);
  std::vector<double> acc(seeds.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < seeds.size();) {
      try {
        acc[i] = evaluate(train_classifier(data, config, seeds[i]).model, test, domain);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(config.threads, 1, seeds.size());
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return summarize({seeds.begin(), seeds.end()}, std::move(acc));
}

std::vector<std::uint64_t> default_eval_seeds(std::size_t runs, std::uint64_t base) {
  std::vector<std::uint64_t> out(runs);
  for (std::size_t i = 0; i < runs; ++i) out[i] = base + i;
  return out;
}

SyntheticDataset random_real_subset(const ImageSet& real, std::size_t ipc, std::uint64_t seed) {
  CondensationConfig cfg;
  cfg.ipc = ipc;
  cfg.init = InitMode::real;
  cfg.seeds.init = seed;
  return init_synthetic(cfg, real.num_classes, real.channels, real.height, &real);
}

LodoResult leave_one_domain_out(const RealDataset& train, const RealDataset& test, int target,
                                const CondensationConfig& condense, const LabelingConfig& labeling,
                                const EvalConfig& eval, std::span<const std::uint64_t> seeds) {
  if (!train.domain_labels || !test.domain_labels) {
    throw InvalidArgument("leave-one-domain-out needs ground-truth domain labels");
  }
  const auto present = [target](const std::vector<int>& d) {
    return std::find(d.begin(), d.end(), target) != d.end();
  };
  if (!present(*train.domain_labels) && !present(*test.domain_labels)) {
    throw InvalidArgument("target domain " + std::to_string(target) + " is absent");
  }
  if (!present(*test.domain_labels)) {
    throw InvalidArgument("target domain " + std::to_string(target) + " has no test images");
  }
  std::vector<int> keep;
  for (std::size_t d = 0; d < std::max(train.num_domains(), test.num_domains()); ++d) {
    if (static_cast<int>(d) != target) keep.push_back(static_cast<int>(d));
  }
  const RealDataset source = train.filter_domains(keep);
  if (source.size() == 0) throw InvalidArgument("no source-domain training images remain");

  LodoResult r;
  r.target_domain = target;
  // Only the class-labelled images cross into condensation.
  const ImageSet& images = source.images;
  std::optional<PseudoDomainAssignment> pseudo;
  if (condense.dam) {
    LabelingConfig lc = labeling;
    lc.num_domains = condense.num_domains;
    pseudo = assign_pseudo_domains(images, lc);
  }
  r.condensation = run_condensation(condense, images, pseudo ? &*pseudo : nullptr);
  r.eval = repeat_protocol(r.condensation.syn, test, eval, seeds, target);
  return r;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string key_of(const ResultRow& r) {
  return r.protocol + "," + r.dataset + "," + r.backend + "," + (r.dam ? "on" : "off") + "," +
         std::to_string(r.ipc) + "," + std::to_string(r.num_domains) + "," + fmt(r.lambda) + "," +
         fmt(r.tau);
}

}  // namespace

std::string results_csv(std::span<const ResultRow> rows) {
  std::string out = "protocol,dataset,backend,dam,ipc,D,lambda,tau,seed,accuracy\n";
  for (const auto& r : rows) {
    out += key_of(r) + "," + std::to_string(r.seed) + "," + fmt(r.accuracy) + "\n";
  }
  return out;
}

std::string summary_csv(std::span<const ResultRow> rows) {
  std::vector<std::string> keys;
  std::map<std::string, std::vector<double>> groups;
  for (const auto& r : rows) {
    const std::string k = key_of(r);
    auto [it, fresh] = groups.try_emplace(k);
    if (fresh) keys.push_back(k);
    it->second.push_back(r.accuracy);
  }
  std::string out = "protocol,dataset,backend,dam,ipc,D,lambda,tau,runs,mean,std\n";
  for (const auto& k : keys) {
    const auto& acc = groups[k];
    const RepeatResult s = summarize({}, acc);
    out += k + "," + std::to_string(acc.size()) + "," + fmt(s.mean) + "," + fmt(s.std) + "\n";
  }
  return out;
}

}  // namespace mddc
