#include "mddc/condense.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>
#include <sstream>

#include "mddc/error.hpp"
#include "mddc/kv_config.hpp"

namespace mddc {

const char* backend_name(Backend b) { return b == Backend::dm ? "dm" : "gm-linear"; }
const char* init_name(InitMode m) { return m == InitMode::gaussian ? "gaussian" : "real"; }
const char* resample_name(EmbedderResample r) {
  return r == EmbedderResample::per_iteration ? "per-iteration" : "fixed";
}

Backend parse_backend(std::string_view s) {
  if (s == "dm") return Backend::dm;
  if (s == "gm-linear") return Backend::gm_linear;
  throw InvalidArgument("unknown backend '" + std::string(s) + "'");
}

InitMode parse_init(std::string_view s) {
  if (s == "gaussian") return InitMode::gaussian;
  if (s == "real") return InitMode::real;
  throw InvalidArgument("unknown init mode '" + std::string(s) + "'");
}

EmbedderResample parse_resample(std::string_view s) {
  if (s == "per-iteration") return EmbedderResample::per_iteration;
  if (s == "fixed") return EmbedderResample::fixed;
  throw InvalidArgument("unknown embedder_resample '" + std::string(s) + "'");
}

SeedSet SeedSet::from_base(std::uint64_t base) {
  return {derive_seed(base, "init"), derive_seed(base, "embedder"), derive_seed(base, "batching"),
          derive_seed(base, "masks")};
}

void CondensationConfig::validate() const {
  if (ipc == 0) throw InvalidArgument("ipc must be >= 1");
  if (dam && num_domains == 0) throw InvalidArgument("D must be >= 1");
  if (!(lambda >= 0.0)) throw InvalidArgument("lambda must be >= 0");
  if (!(tau > 0.0)) throw InvalidArgument("tau must be > 0");
  if (batch_real == 0) throw InvalidArgument("batch_real must be >= 1");
  if (width == 0) throw InvalidArgument("width must be >= 1");
  if (check_every == 0) throw InvalidArgument("check_every must be >= 1");
}

void apply_setting(CondensationConfig& c, std::string_view key, std::string_view value) {
  auto size = [&] { return static_cast<std::size_t>(parse_u64(key, value)); };
  if (key == "ipc") c.ipc = size();
  else if (key == "D" || key == "num_domains") c.num_domains = size();
  else if (key == "lambda") c.lambda = parse_double(key, value);
  else if (key == "tau") c.tau = parse_double(key, value);
  else if (key == "mask_init" || key == "zinit") c.mask_init = parse_double(key, value);
  else if (key == "iterations") c.iterations = size();
  else if (key == "lr_images") c.lr_images = parse_double(key, value);
  else if (key == "lr_masks") c.lr_masks = parse_double(key, value);
  else if (key == "backend") c.backend = parse_backend(value);
  else if (key == "init") c.init = parse_init(value);
  else if (key == "embedder_resample") c.embedder_resample = parse_resample(value);
  else if (key == "batch_real") c.batch_real = size();
  else if (key == "width") c.width = size();
  else if (key == "dam") c.dam = parse_bool(value);
  else if (key == "separate_domain_embedder") c.separate_domain_embedder = parse_bool(value);
  else if (key == "flip_augment") c.flip_augment = parse_bool(value);
  else if (key == "check_every") c.check_every = size();
  else if (key == "seed") c.seeds = SeedSet::from_base(parse_u64(key, value));
  else if (key == "seed_init") c.seeds.init = parse_u64(key, value);
  else if (key == "seed_embedder") c.seeds.embedder = parse_u64(key, value);
  else if (key == "seed_batching") c.seeds.batching = parse_u64(key, value);
  else if (key == "seed_masks") c.seeds.masks = parse_u64(key, value);
  else throw InvalidArgument("unknown condensation setting '" + std::string(key) + "'");
}

void apply_settings(CondensationConfig& c, const std::map<std::string, std::string>& kv) {
  // A base seed expands into the whole set, so apply it before explicit
  // per-stream seeds.
  if (auto it = kv.find("seed"); it != kv.end()) apply_setting(c, it->first, it->second);
  for (const auto& [k, v] : kv) {
    if (k != "seed") apply_setting(c, k, v);
  }
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::map<std::string, std::string> to_settings(const CondensationConfig& c) {
  return {
      {"ipc", std::to_string(c.ipc)},
      {"D", std::to_string(c.num_domains)},
      {"lambda", fmt_double(c.lambda)},
      {"tau", fmt_double(c.tau)},
      {"mask_init", fmt_double(c.mask_init)},
      {"iterations", std::to_string(c.iterations)},
      {"lr_images", fmt_double(c.lr_images)},
      {"lr_masks", fmt_double(c.lr_masks)},
      {"backend", backend_name(c.backend)},
      {"init", init_name(c.init)},
      {"embedder_resample", resample_name(c.embedder_resample)},
      {"batch_real", std::to_string(c.batch_real)},
      {"width", std::to_string(c.width)},
      {"dam", c.dam ? "on" : "off"},
      {"separate_domain_embedder", c.separate_domain_embedder ? "true" : "false"},
      {"flip_augment", c.flip_augment ? "true" : "false"},
      {"check_every", std::to_string(c.check_every)},
      {"seed_init", std::to_string(c.seeds.init)},
      {"seed_embedder", std::to_string(c.seeds.embedder)},
      {"seed_batching", std::to_string(c.seeds.batching)},
      {"seed_masks", std::to_string(c.seeds.masks)},
  };
}

std::string format_run_meta(const CondensationConfig& c,
                            const std::map<std::string, std::string>& extra) {
  auto kv = to_settings(c);
  for (const auto& [k, v] : extra) kv[k] = v;
  return format_kv(kv);
}

std::string LossReport::to_csv() const {
  std::string out = "iter,l_cls,l_dom,l_total\n";
  for (const auto& r : rows) {
    out += std::to_string(r.iteration) + "," + fmt_double(r.l_cls) + "," + fmt_double(r.l_dom) +
           "," + fmt_double(r.l_total) + "\n";
  }
  return out;
}

double LossReport::mean_total(std::size_t first, std::size_t last) const {
  last = std::min(last, rows.size());
  if (first >= last) throw InvalidArgument("mean_total: empty window");
  double s = 0.0;
  for (std::size_t i = first; i < last; ++i) s += rows[i].l_total;
  return s / static_cast<double>(last - first);
}

SyntheticDataset init_synthetic(const CondensationConfig& config, std::size_t num_classes,
                                std::size_t channels, std::size_t hw, const ImageSet* real) {
  if (num_classes * config.ipc == 0) throw InvalidArgument("init_synthetic: C*IPC must be >= 1");
  SyntheticDataset syn;
  syn.num_classes = num_classes;
  syn.ipc = config.ipc;
  syn.channels = channels;
  syn.height = hw;
  syn.width = hw;
  const std::size_t m = num_classes * config.ipc;
  syn.labels.resize(m);
  for (std::size_t i = 0; i < m; ++i) syn.labels[i] = static_cast<int>(i / config.ipc);
  syn.images = ad::NdValue::zeros({m, channels, hw, hw});
  Stream stream(config.seeds.init, "init_synthetic");
  if (config.init == InitMode::gaussian) {
    for (double& v : syn.images.data) v = stream.normal();
    return syn;
  }
  if (!real) throw InvalidArgument("init_synthetic: real initialisation needs a dataset");
  if (real->channels != channels || real->height != hw || real->width != hw) {
    throw ShapeError("init_synthetic: real images do not match the synthetic shape");
  }
  const std::size_t per = syn.image_size();
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto pool = real->indices_of_class(static_cast<int>(c));
    if (pool.size() < config.ipc) {
      throw InvalidArgument("init_synthetic: class " + std::to_string(c) + " has " +
                            std::to_string(pool.size()) + " real images, IPC is " +
                            std::to_string(config.ipc));
    }
    const auto pick = sample_indices(pool, config.ipc, stream);
    for (std::size_t k = 0; k < config.ipc; ++k) {
      const auto src = real->image(pick[k]);
      std::copy(src.begin(), src.end(), syn.images.data.begin() +
                                            static_cast<std::ptrdiff_t>((c * config.ipc + k) * per));
    }
  }
  return syn;
}

std::vector<std::size_t> sample_indices(std::span<const std::size_t> pool, std::size_t n,
                                        Stream& stream) {
  if (pool.empty()) throw InvalidArgument("sample_indices: empty pool");
  std::vector<std::size_t> out;
  out.reserve(n);
  if (pool.size() < n) {
    for (std::size_t i = 0; i < n; ++i) out.push_back(pool[stream.below(pool.size())]);
    return out;
  }
  // Partial Fisher-Yates over a copy of the pool.
  std::vector<std::size_t> work(pool.begin(), pool.end());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + stream.below(work.size() - i);
    std::swap(work[i], work[j]);
    out.push_back(work[i]);
  }
  return out;
}

Batch sample_class_batch(const ImageSet& real, int cls, std::size_t n, Stream& stream) {
  const auto pool = real.indices_of_class(cls);
  if (pool.empty()) throw InvalidArgument("class " + std::to_string(cls) + " has no images");
  Batch b;
  b.indices = sample_indices(pool, n, stream);
  b.images = real.gather(b.indices);
  for (auto i : b.indices) b.labels.push_back(real.labels[i]);
  return b;
}

Batch sample_domain_batch(const ImageSet& real, const PseudoDomainAssignment& labels, int domain,
                          std::size_t n, Stream& stream) {
  if (labels.labels.size() != real.size()) {
    throw InvalidArgument("pseudo-domain labels cover " + std::to_string(labels.labels.size()) +
                          " images, dataset has " + std::to_string(real.size()));
  }
  const auto pool = labels.indices_of_domain(domain);
  if (pool.empty()) throw InvalidArgument("pseudo-domain " + std::to_string(domain) + " is empty");
  Batch b;
  b.indices = sample_indices(pool, n, stream);
  b.images = real.gather(b.indices);
  for (auto i : b.indices) b.labels.push_back(real.labels[i]);
  return b;
}

namespace {

// sum of squared differences between a constant [G,E] target and a [G,E] var.
ad::Var squared_distance(ad::Tape& tape, ad::NdValue target, ad::Var value) {
  if (target.shape != value.shape()) {
    throw ShapeError("embedding means " + ad::shape_str(target.shape) + " vs " +
                     ad::shape_str(value.shape()));
  }
  ad::Var d = ad::sub(tape.constant(std::move(target)), value);
  return ad::sum(ad::mul(d, d));
}

ad::NdValue stack_means(const FeatureMap& embedder, std::span<const ad::NdValue> batches) {
  std::vector<double> data;
  std::size_t dim = 0;
  for (const auto& b : batches) {
    ad::NdValue m = mean_embedding(embedder, b);
    dim = m.size();
    data.insert(data.end(), m.data.begin(), m.data.end());
  }
  return ad::NdValue({batches.size(), dim}, std::move(data));
}

}  // namespace

ad::Var dm_class_loss(const FeatureMap& embedder, std::span<const ad::NdValue> real_batches,
                      ad::Var syn_images, std::size_t ipc) {
  const auto& s = syn_images.shape();
  if (s.empty() || ipc == 0 || s[0] != real_batches.size() * ipc) {
    throw ShapeError("dm_class_loss: " + std::to_string(real_batches.size()) +
                     " classes x IPC " + std::to_string(ipc) + " does not match synthetic batch " +
                     ad::shape_str(s));
  }
  ad::Tape& tape = syn_images.tape();
  ad::Var emb = embedder.embed(tape, syn_images);
  const std::size_t dim = emb.shape()[1];
  ad::Var syn_means = ad::mean_axis(ad::reshape(emb, {real_batches.size(), ipc, dim}), 1);
  return squared_distance(tape, stack_means(embedder, real_batches), syn_means);
}

ad::Var dm_domain_loss(const FeatureMap& embedder, std::span<const ad::NdValue> real_batches,
                       ad::Var views) {
  const auto& s = views.shape();
  if (s.size() != 5 || s[1] != real_batches.size()) {
    throw ShapeError("dm_domain_loss: views " + ad::shape_str(s) + " vs " +
                     std::to_string(real_batches.size()) + " domain batches");
  }
  ad::Tape& tape = views.tape();
  const std::size_t m = s[0], d = s[1];
  ad::Var emb = embedder.embed(tape, ad::reshape(views, {m * d, s[2], s[3], s[4]}));
  const std::size_t dim = emb.shape()[1];
  ad::Var syn_means = ad::mean_axis(ad::reshape(emb, {m, d, dim}), 0);
  return squared_distance(tape, stack_means(embedder, real_batches), syn_means);
}

ad::Var total_loss(ad::Var l_cls, ad::Var l_dom, double lambda) {
  if (!(lambda >= 0.0)) throw InvalidArgument("total_loss: lambda must be >= 0");
  return ad::add(l_cls, ad::scale(l_dom, lambda));
}

double total_loss(double l_cls, double l_dom, double lambda) {
  if (!(lambda >= 0.0)) throw InvalidArgument("total_loss: lambda must be >= 0");
  return l_cls + lambda * l_dom;
}

namespace {

void flip_some(ad::NdValue& batch, Stream& stream) {
  const std::size_t n = batch.shape[0], c = batch.shape[1], h = batch.shape[2], w = batch.shape[3];
  for (std::size_t i = 0; i < n; ++i) {
    if (stream.below(2) == 0) continue;
    for (std::size_t p = 0; p < c * h; ++p) {
      double* row = batch.data.data() + (i * c * h + p) * w;
      std::reverse(row, row + w);
    }
  }
}

// x [A, B, P]: select x[a] ([B, P]) or x[:, b] ([A, P]).
ad::Var slice3(ad::Var x, std::size_t axis, std::size_t index) {
  const auto& s = x.shape();
  const std::size_t na = s[0], nb = s[1], p = s[2];
  const std::size_t rows = axis == 0 ? nb : na;
  std::vector<std::size_t> offsets(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    offsets[r] = (axis == 0 ? index * nb + r : r * nb + index) * p;
  }
  std::vector<double> out(rows * p);
  const auto& v = x.value().data;
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(v.data() + offsets[r], p, out.data() + r * p);
  const std::size_t ix = x.id();
  return x.tape().record("slice", {ix}, ad::NdValue({rows, p}, std::move(out)),
                         [ix, offsets, p](ad::Tape& t, std::size_t self) {
                           const auto& g = *t.value(self).grad;
                           auto& gx = t.grad_buffer(ix);
                           for (std::size_t r = 0; r < offsets.size(); ++r) {
                             for (std::size_t i = 0; i < p; ++i) gx[offsets[r] + i] += g[r * p + i];
                           }
                         });
}

ad::Var row_slice(ad::Var x, std::size_t a) { return slice3(x, 0, a); }
ad::Var column_slice(ad::Var x, std::size_t b) { return slice3(x, 1, b); }

void check_finite(double v, std::size_t iter, const char* component) {
  if (!std::isfinite(v)) {
    throw NumericalError("condensation diverged at iteration " + std::to_string(iter) + ": " +
                         component + " loss is " + std::to_string(v));
  }
}

}  // namespace

CondensationResult run_condensation(const CondensationConfig& config, const ImageSet& real,
                                    const PseudoDomainAssignment* labels,
                                    const CondensationObserver& observer) {
  config.validate();
  real.validate();
  if (real.height != real.width) throw ShapeError("condensation needs square images");
  const std::size_t classes = real.num_classes;
  for (std::size_t c = 0; c < classes; ++c) {
    if (real.indices_of_class(static_cast<int>(c)).empty()) {
      throw InvalidArgument("class " + std::to_string(c) + " has no real images");
    }
  }
  const std::size_t num_domains = config.dam ? config.num_domains : 0;
  if (config.dam) {
    if (!labels) throw InvalidArgument("DAM is enabled but no pseudo-domain labels were given");
    if (labels->labels.size() != real.size()) {
      throw InvalidArgument("pseudo-domain labels cover " + std::to_string(labels->labels.size()) +
                            " of " + std::to_string(real.size()) + " images");
    }
    if (labels->num_domains() != num_domains) {
      throw InvalidArgument("labels were built for D=" + std::to_string(labels->num_domains()) +
                            " but the configuration asks for D=" + std::to_string(num_domains));
    }
    for (std::size_t d = 0; d < num_domains; ++d) {
      if (labels->indices_of_domain(static_cast<int>(d)).empty()) {
        throw InvalidArgument("pseudo-domain " + std::to_string(d) + " is empty");
      }
    }
  }

  CondensationResult result;
  result.syn = init_synthetic(config, classes, real.channels, real.height, &real);
  if (config.dam) {
    result.masks = DomainMaskBank::create(result.syn.size(), num_domains, real.channels,
                                          real.height, real.width, config.mask_init);
  }

  ConvNetConfig net = ConvNetConfig::for_resolution(real.height, config.width, classes);
  net.channels = real.channels;
  const std::size_t pixels = real.image_size();
  const std::size_t m = result.syn.size();

  Stream embed_stream(config.seeds.embedder, "theta");
  Stream prime_stream(config.seeds.embedder, "prime");
  Stream class_stream(config.seeds.batching, "class");
  Stream domain_stream(config.seeds.batching, "domain");
  Stream class_aug(config.seeds.batching, "class_augment");
  Stream domain_aug(config.seeds.masks, "domain_augment");

  const bool use_prime = config.backend == Backend::gm_linear || config.separate_domain_embedder;
  std::uint64_t theta_seed = embed_stream.next_u64();
  std::uint64_t prime_seed = prime_stream.next_u64();

  auto checkpoint = [&](std::size_t iter) {
    if (!result.masks) return;
    CheckpointCheck chk{iter, check_dam_invariants(result.syn.images, result.masks->logits,
                                                   config.tau)};
    result.checks.push_back(chk);
    if (observer) observer(chk);
  };

  for (std::size_t iter = 0; iter < config.iterations; ++iter) {
    if (iter % config.check_every == 0) checkpoint(iter);
    if (iter > 0 && config.embedder_resample == EmbedderResample::per_iteration) {
      theta_seed = embed_stream.next_u64();
      prime_seed = prime_stream.next_u64();
    }

    std::vector<Batch> class_batches;
    for (std::size_t c = 0; c < classes; ++c) {
      class_batches.push_back(
          sample_class_batch(real, static_cast<int>(c), config.batch_real, class_stream));
      if (config.flip_augment) flip_some(class_batches.back().images, class_aug);
    }

    ad::Tape tape;
    ad::NdValue images = result.syn.images;
    images.tracked = true;
    ad::Var x = tape.leaf(std::move(images));

    std::shared_ptr<const EmbedderParams> theta;
    ad::Var l_cls;
    if (config.backend == Backend::dm) {
      theta = std::make_shared<EmbedderParams>(init_convnet(net, theta_seed, ParamRole::theta));
      std::vector<ad::NdValue> real_batches;
      for (auto& b : class_batches) real_batches.push_back(std::move(b.images));
      l_cls = dm_class_loss(ConvNetFeatureMap(theta), real_batches, x, config.ipc);
    } else {
      const ad::NdValue w = init_linear_weight(classes, pixels, theta_seed);
      ad::Var flat = ad::reshape(x, {classes, config.ipc, pixels});
      for (std::size_t c = 0; c < classes; ++c) {
        ad::Var xc = row_slice(flat, c);
        std::vector<int> syn_labels(config.ipc, static_cast<int>(c));
        ad::Var term = gm_linear_loss(class_batches[c].images, class_batches[c].labels, xc,
                                      syn_labels, w);
        l_cls = l_cls.valid() ? ad::add(l_cls, term) : term;
      }
    }
    check_finite(l_cls.item(), iter, "class");

    ad::Var z;
    ad::Var l_dom;
    if (config.dam) {
      ad::NdValue logits = result.masks->logits;
      logits.tracked = true;
      z = tape.leaf(std::move(logits));
      ad::Var views = domain_views(x, domain_weights(z, config.tau));
      std::vector<Batch> domain_batches;
      for (std::size_t d = 0; d < num_domains; ++d) {
        domain_batches.push_back(sample_domain_batch(real, *labels, static_cast<int>(d),
                                                     config.batch_real, domain_stream));
        if (config.flip_augment) flip_some(domain_batches.back().images, domain_aug);
      }
      if (config.backend == Backend::dm) {
        std::shared_ptr<const EmbedderParams> dom_params =
            use_prime ? std::make_shared<EmbedderParams>(
                            init_convnet(net, prime_seed, ParamRole::theta_prime))
                      : theta;
        std::vector<ad::NdValue> real_batches;
        for (auto& b : domain_batches) real_batches.push_back(std::move(b.images));
        l_dom = dm_domain_loss(ConvNetFeatureMap(dom_params), real_batches, views);
      } else {
        const ad::NdValue w = init_linear_weight(classes, pixels, prime_seed);
        ad::Var flat = ad::reshape(views, {m, num_domains, pixels});
        for (std::size_t d = 0; d < num_domains; ++d) {
          ad::Var vd = column_slice(flat, d);
          ad::Var term = gm_linear_loss(domain_batches[d].images, domain_batches[d].labels, vd,
                                        result.syn.labels, w);
          l_dom = l_dom.valid() ? ad::add(l_dom, term) : term;
        }
      }
      check_finite(l_dom.item(), iter, "domain");
    }

    ad::Var total = l_dom.valid() ? total_loss(l_cls, l_dom, config.lambda) : l_cls;
    result.report.rows.push_back(
        {iter, l_cls.item(), l_dom.valid() ? l_dom.item() : 0.0, total.item()});

    tape.backward(total);
    if (tape.has_grad(x)) {
      const auto g = tape.grad(x);
      auto& px = result.syn.images.data;
      for (std::size_t i = 0; i < px.size(); ++i) px[i] -= config.lr_images * g[i];
    }
    if (z.valid() && tape.has_grad(z)) {
      const auto g = tape.grad(z);
      auto& pz = result.masks->logits.data;
      for (std::size_t i = 0; i < pz.size(); ++i) pz[i] -= config.lr_masks * g[i];
    }
  }
  checkpoint(config.iterations);
  return result;
}

}  // namespace mddc
