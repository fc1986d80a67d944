#include "mddc/freq_labeler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mddc/error.hpp"
#include "mddc/rng.hpp"

namespace mddc {

const char* order_name(SortOrder order) {
  return order == SortOrder::ascending ? "ascending" : "descending";
}

const char* method_name(LabelMethod method) {
  switch (method) {
    case LabelMethod::fft_meansort: return "fft-meansort";
    case LabelMethod::fft_kmeans: return "fft-kmeans";
    case LabelMethod::logvar_meansort: return "logvar-meansort";
    case LabelMethod::logvar_kmeans: return "logvar-kmeans";
    case LabelMethod::random: return "random";
  }
  return "?";
}

SortOrder parse_order(std::string_view text) {
  if (text == "ascending") return SortOrder::ascending;
  if (text == "descending") return SortOrder::descending;
  throw InvalidArgument("unknown sort order '" + std::string(text) + "'");
}

LabelMethod parse_method(std::string_view text) {
  for (auto m : {LabelMethod::fft_meansort, LabelMethod::fft_kmeans, LabelMethod::logvar_meansort,
                 LabelMethod::logvar_kmeans, LabelMethod::random}) {
    if (text == method_name(m)) return m;
  }
  throw InvalidArgument("unknown labeling method '" + std::string(text) + "'");
}

std::vector<SpectrumGrid> image_spectrum(std::span<const double> chw, std::size_t channels,
                                         std::size_t height, std::size_t width) {
  if (chw.size() != channels * height * width) {
    throw ShapeError("image_spectrum: pixel count does not match " + std::to_string(channels) +
                     "x" + std::to_string(height) + "x" + std::to_string(width));
  }
  std::vector<SpectrumGrid> out;
  out.reserve(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    out.push_back(fftshift(dft2d(chw.subspan(c * height * width, height * width), height, width)));
  }
  return out;
}

std::size_t crop_extent(std::size_t n, double beta) {
  const auto e = static_cast<std::size_t>(std::llround(beta * static_cast<double>(n)));
  return std::clamp<std::size_t>(e, 1, n);
}

double mean_amplitude(std::span<const SpectrumGrid> channels, double beta) {
  if (!(beta > 0.0 && beta <= 1.0)) {
    throw InvalidArgument("mean_amplitude: beta must lie in (0,1], got " + std::to_string(beta));
  }
  if (channels.empty()) throw InvalidArgument("mean_amplitude: no channels");
  const std::size_t h = channels[0].height, w = channels[0].width;
  const std::size_t ch = crop_extent(h, beta), cw = crop_extent(w, beta);
  const std::size_t u0 = h / 2 - ch / 2, v0 = w / 2 - cw / 2;
  double total = 0.0;
  for (const auto& s : channels) {
    if (!s.shifted) throw InvalidArgument("mean_amplitude: spectrum must be shifted");
    if (s.height != h || s.width != w) throw ShapeError("mean_amplitude: channel sizes differ");
    for (std::size_t u = u0; u < u0 + ch; ++u) {
      for (std::size_t v = v0; v < v0 + cw; ++v) total += std::abs(s.at(u, v));
    }
  }
  return total / (static_cast<double>(channels.size()) * beta * beta * static_cast<double>(h) *
                  static_cast<double>(w));
}

double image_mu(std::span<const double> chw, std::size_t channels, std::size_t height,
                std::size_t width, double beta) {
  const auto spectra = image_spectrum(chw, channels, height, width);
  return mean_amplitude(spectra, beta);
}

std::vector<int> rank_and_slice(std::span<const double> values, std::size_t num_domains,
                                SortOrder order) {
  const std::size_t n = values.size();
  if (num_domains == 0) throw InvalidArgument("rank_and_slice: D must be >= 1");
  if (num_domains > n) {
    throw InvalidArgument("rank_and_slice: D=" + std::to_string(num_domains) +
                          " exceeds N=" + std::to_string(n));
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return order == SortOrder::ascending ? values[a] < values[b] : values[a] > values[b];
  });
  // floor((rank-1) / (N/D)) == floor((rank-1) * D / N), evaluated exactly.
  std::vector<int> labels(n);
  for (std::size_t r = 0; r < n; ++r) {
    labels[idx[r]] = static_cast<int>(r * num_domains / n);
  }
  return labels;
}

std::vector<int> kmeans_1d(std::span<const double> values, std::size_t k, std::uint64_t seed,
                           std::size_t max_iters) {
  const std::size_t n = values.size();
  if (k == 0) throw InvalidArgument("kmeans_1d: K must be >= 1");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> distinct = sorted;
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (k > distinct.size()) {
    throw InvalidArgument("kmeans_1d: K=" + std::to_string(k) + " exceeds " +
                          std::to_string(distinct.size()) + " distinct values");
  }

  Stream stream(seed, "kmeans_1d");
  std::vector<double> centroids(k);
  for (std::size_t j = 0; j < k; ++j) {
    centroids[j] = sorted[std::min(n - 1, (2 * j + 1) * n / (2 * k))];
  }
  // Heavy ties can place two quantiles on one value; replace duplicates by
  // randomly chosen unused distinct values.
  for (std::size_t j = 1; j < k; ++j) {
    while (std::find(centroids.begin(), centroids.begin() + static_cast<std::ptrdiff_t>(j),
                     centroids[j]) != centroids.begin() + static_cast<std::ptrdiff_t>(j)) {
      centroids[j] = distinct[stream.below(distinct.size())];
    }
  }

  auto nearest = [&](double x) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (std::abs(x - centroids[j]) < std::abs(x - centroids[best])) best = j;
    }
    return best;
  };

  std::vector<std::size_t> assign(n, k);
  for (std::size_t iter = 0; iter < std::max<std::size_t>(max_iters, 1); ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t a = nearest(values[i]);
      if (a != assign[i]) {
        assign[i] = a;
        changed = true;
      }
    }
    if (!changed) break;
    std::vector<double> total(k, 0.0);
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      total[assign[i]] += values[i];
      ++count[assign[i]];
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (count[j] > 0) {
        centroids[j] = total[j] / static_cast<double>(count[j]);
        continue;
      }
      // Empty cluster: move it onto the point worst served by its centroid.
      std::size_t worst = 0;
      double worst_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = std::abs(values[i] - centroids[assign[i]]);
        if (d > worst_d) {
          worst_d = d;
          worst = i;
        }
      }
      centroids[j] = values[worst];
    }
  }

  std::vector<std::size_t> by_centroid(k);
  std::iota(by_centroid.begin(), by_centroid.end(), 0);
  std::stable_sort(by_centroid.begin(), by_centroid.end(),
                   [&](std::size_t a, std::size_t b) { return centroids[a] < centroids[b]; });
  std::vector<int> remap(k);
  for (std::size_t r = 0; r < k; ++r) remap[by_centroid[r]] = static_cast<int>(r);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = remap[assign[i]];
  return labels;
}

std::vector<double> logvar_features(const ImageSet& images, const EmbedderParams& params) {
  if (params.config.depth < 2) {
    throw InvalidArgument("logvar_features: embedder needs at least two blocks");
  }
  constexpr std::size_t kChunk = 16;
  constexpr double kEps = 1e-8;
  std::vector<double> out;
  out.reserve(images.size());
  for (std::size_t first = 0; first < images.size(); first += kChunk) {
    const std::size_t count = std::min(kChunk, images.size() - first);
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), first);
    ad::Tape tape;
    const BoundParams bound = bind(tape, params, false);
    const auto blocks = block_outputs(bound, tape.constant(images.gather(idx)));
    for (std::size_t n = 0; n < count; ++n) {
      double acc = 0.0;
      std::size_t maps = 0;
      for (std::size_t b = 0; b < 2; ++b) {
        const ad::NdValue& v = blocks[b].value();
        const std::size_t c = v.shape[1], plane = v.shape[2] * v.shape[3];
        for (std::size_t m = 0; m < c; ++m) {
          const double* p = v.data.data() + (n * c + m) * plane;
          double mean = 0.0;
          for (std::size_t i = 0; i < plane; ++i) mean += p[i];
          mean /= static_cast<double>(plane);
          double var = 0.0;
          for (std::size_t i = 0; i < plane; ++i) var += (p[i] - mean) * (p[i] - mean);
          var /= static_cast<double>(plane);
          acc += std::log(var + kEps);
          ++maps;
        }
      }
      out.push_back(acc / static_cast<double>(maps));
    }
  }
  return out;
}

std::vector<int> random_labels(std::size_t n, std::size_t num_domains, std::uint64_t seed) {
  if (num_domains == 0) throw InvalidArgument("random_labels: D must be >= 1");
  Stream stream(seed, "random_labels");
  std::vector<int> labels(n);
  for (auto& l : labels) l = static_cast<int>(stream.below(num_domains));
  return labels;
}

void LabelingConfig::validate() const {
  if (num_domains == 0) throw InvalidArgument("labeling: D must be >= 1");
  if (!(beta > 0.0 && beta <= 1.0)) throw InvalidArgument("labeling: beta must lie in (0,1]");
}

std::vector<std::size_t> PseudoDomainAssignment::indices_of_domain(int d) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == d) out.push_back(i);
  }
  return out;
}

PseudoDomainAssignment assign_pseudo_domains(const ImageSet& images,
                                             const LabelingConfig& config) {
  config.validate();
  const std::size_t n = images.size();
  if (config.num_domains > n) {
    throw InvalidArgument("labeling: D=" + std::to_string(config.num_domains) +
                          " exceeds dataset size " + std::to_string(n));
  }
  PseudoDomainAssignment a;
  a.config = config;
  switch (config.method) {
    case LabelMethod::fft_meansort:
    case LabelMethod::fft_kmeans:
      a.statistic.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        a.statistic[i] =
            image_mu(images.image(i), images.channels, images.height, images.width, config.beta);
      }
      break;
    case LabelMethod::logvar_meansort:
    case LabelMethod::logvar_kmeans: {
      ConvNetConfig net = ConvNetConfig::for_resolution(images.height, config.logvar_width, 1);
      net.channels = images.channels;
      a.statistic = logvar_features(images, init_convnet(net, config.seed, ParamRole::theta));
      break;
    }
    case LabelMethod::random:
      a.statistic.assign(n, 0.0);
      a.labels = random_labels(n, config.num_domains, config.seed);
      return a;
  }
  if (config.method == LabelMethod::fft_meansort || config.method == LabelMethod::logvar_meansort) {
    a.labels = rank_and_slice(a.statistic, config.num_domains, config.order);
  } else {
    a.labels = kmeans_1d(a.statistic, config.num_domains, config.seed);
    if (config.order == SortOrder::descending) {
      for (int& l : a.labels) l = static_cast<int>(config.num_domains) - 1 - l;
    }
  }
  return a;
}

std::string format_labels(const PseudoDomainAssignment& a) {
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", a.config.beta);
  os << "# method=" << method_name(a.config.method) << " D=" << a.config.num_domains
     << " beta=" << buf << " order=" << order_name(a.config.order) << " seed=" << a.config.seed
     << '\n';
  for (std::size_t i = 0; i < a.labels.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", a.statistic[i]);
    os << i << ',' << buf << ',' << a.labels[i] << '\n';
  }
  return os.str();
}

void write_labels(const PseudoDomainAssignment& a, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << format_labels(a);
  if (!out) throw Error("failed writing " + path.string());
}

PseudoDomainAssignment parse_labels(std::string_view text) {
  PseudoDomainAssignment a;
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) {
    throw FormatError("labels: missing header line");
  }
  std::istringstream header(line.substr(2));
  std::string field;
  bool have_d = false;
  while (header >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw FormatError("labels: bad header field '" + field + "'");
    const std::string key = field.substr(0, eq), val = field.substr(eq + 1);
    try {
      if (key == "method") a.config.method = parse_method(val);
      else if (key == "D") { a.config.num_domains = std::stoul(val); have_d = true; }
      else if (key == "beta") a.config.beta = std::stod(val);
      else if (key == "order") a.config.order = parse_order(val);
      else if (key == "seed") a.config.seed = std::stoull(val);
      else throw FormatError("labels: unknown header key '" + key + "'");
    } catch (const std::logic_error&) {
      throw FormatError("labels: bad value for '" + key + "'");
    }
  }
  if (!have_d || a.config.num_domains == 0) throw FormatError("labels: header lacks D");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto c1 = line.find(','), c2 = line.rfind(',');
    if (c1 == std::string::npos || c1 == c2) {
      throw FormatError("labels: line " + std::to_string(lineno) + " is not index,stat,label");
    }
    try {
      const std::size_t idx = std::stoul(line.substr(0, c1));
      if (idx != a.labels.size()) {
        throw FormatError("labels: line " + std::to_string(lineno) + " has index " +
                          std::to_string(idx) + ", expected " + std::to_string(a.labels.size()));
      }
      a.statistic.push_back(std::stod(line.substr(c1 + 1, c2 - c1 - 1)));
      const int label = std::stoi(line.substr(c2 + 1));
      if (label < 0 || static_cast<std::size_t>(label) >= a.config.num_domains) {
        throw FormatError("labels: line " + std::to_string(lineno) + " label out of range");
      }
      a.labels.push_back(label);
    } catch (const std::logic_error&) {
      throw FormatError("labels: malformed number on line " + std::to_string(lineno));
    }
  }
  return a;
}

PseudoDomainAssignment read_labels(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open labels file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_labels(ss.str());
}

}  // namespace mddc
