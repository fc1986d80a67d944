#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <string>

#include "mddc/dataset.hpp"
#include "mddc/error.hpp"
#include "mddc/kv_config.hpp"
#include "mddc/synthetic_io.hpp"

namespace fs = std::filesystem;

namespace mddc {

const char* split_name(Split split) { return split == Split::train ? "train" : "test"; }

std::span<const double> ImageSet::image(std::size_t n) const {
  if (n >= size()) throw InvalidArgument("image index " + std::to_string(n) + " out of range");
  return std::span<const double>(pixels).subspan(n * image_size(), image_size());
}

ad::NdValue ImageSet::gather(std::span<const std::size_t> indices) const {
  const std::size_t per = image_size();
  std::vector<double> out;
  out.reserve(indices.size() * per);
  for (auto i : indices) {
    const auto src = image(i);
    out.insert(out.end(), src.begin(), src.end());
  }
  return ad::NdValue({indices.size(), channels, height, width}, std::move(out));
}

std::vector<std::size_t> ImageSet::indices_of_class(int c) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == c) out.push_back(i);
  }
  return out;
}

void ImageSet::validate() const {
  if (pixels.size() != size() * image_size()) {
    throw FormatError("image set: " + std::to_string(pixels.size()) + " pixel values for " +
                      std::to_string(size()) + " images of " + std::to_string(image_size()));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw FormatError("image " + std::to_string(i) + ": label " + std::to_string(labels[i]) +
                        " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    if (!(pixels[i] >= 0.0 && pixels[i] <= 1.0)) {
      throw FormatError("image " + std::to_string(i / std::max<std::size_t>(image_size(), 1)) +
                        ": pixel value outside [0,1]");
    }
  }
}

std::size_t RealDataset::num_domains() const {
  if (!domain_labels) return 0;
  if (!domain_names.empty()) return domain_names.size();
  int hi = -1;
  for (int d : *domain_labels) hi = std::max(hi, d);
  return static_cast<std::size_t>(hi + 1);
}

RealDataset RealDataset::filter_domains(std::span<const int> keep) const {
  if (!domain_labels) throw InvalidArgument("dataset has no ground-truth domain labels");
  RealDataset out;
  out.images.channels = images.channels;
  out.images.height = images.height;
  out.images.width = images.width;
  out.images.num_classes = images.num_classes;
  out.class_names = class_names;
  out.domain_names = domain_names;
  out.split = split;
  out.domain_labels.emplace();
  for (std::size_t i = 0; i < size(); ++i) {
    const int d = (*domain_labels)[i];
    if (std::find(keep.begin(), keep.end(), d) == keep.end()) continue;
    const auto src = images.image(i);
    out.images.pixels.insert(out.images.pixels.end(), src.begin(), src.end());
    out.images.labels.push_back(images.labels[i]);
    out.domain_labels->push_back(d);
  }
  return out;
}

void RealDataset::validate() const {
  images.validate();
  if (domain_labels && domain_labels->size() != size()) {
    throw FormatError("dataset: " + std::to_string(domain_labels->size()) +
                      " domain labels for " + std::to_string(size()) + " images");
  }
  if (split == Split::train) {
    for (std::size_t c = 0; c < images.num_classes; ++c) {
      if (images.indices_of_class(static_cast<int>(c)).empty()) {
        throw FormatError("train split: class " + std::to_string(c) + " has no images");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// CIFAR-10

namespace {

constexpr std::size_t kCifarPixels = 3 * 32 * 32;
constexpr std::size_t kCifarRecord = 1 + kCifarPixels;

const std::vector<std::string> kCifarClasses = {"airplane", "automobile", "bird",  "cat",
                                                "deer",     "dog",        "frog",  "horse",
                                                "ship",     "truck"};

RealDataset empty_cifar(Split split) {
  RealDataset ds;
  ds.images.channels = 3;
  ds.images.height = 32;
  ds.images.width = 32;
  ds.images.num_classes = 10;
  ds.class_names = kCifarClasses;
  ds.split = split;
  return ds;
}

void append_cifar(RealDataset& ds, std::span<const std::uint8_t> bytes, std::size_t base_offset,
                  const std::string& name) {
  if (bytes.size() % kCifarRecord != 0) {
    const std::size_t off = base_offset + bytes.size() / kCifarRecord * kCifarRecord;
    throw FormatError(name + ": truncated record at byte offset " + std::to_string(off));
  }
  const std::size_t n = bytes.size() / kCifarRecord;
  ds.images.pixels.reserve(ds.images.pixels.size() + n * kCifarPixels);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t at = r * kCifarRecord;
    const std::uint8_t label = bytes[at];
    if (label >= 10) {
      throw FormatError(name + ": label " + std::to_string(label) + " at byte offset " +
                        std::to_string(base_offset + at));
    }
    ds.images.labels.push_back(label);
    for (std::size_t p = 0; p < kCifarPixels; ++p) {
      ds.images.pixels.push_back(bytes[at + 1 + p] / 255.0);
    }
  }
}

}  // namespace

RealDataset parse_cifar10(std::span<const std::uint8_t> bytes, Split split,
                          std::size_t base_offset) {
  RealDataset ds = empty_cifar(split);
  append_cifar(ds, bytes, base_offset, "cifar-10");
  return ds;
}

RealDataset load_cifar10(const fs::path& path, Split split) {
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    if (split == Split::train) {
      for (int i = 1; i <= 5; ++i) files.push_back(path / ("data_batch_" + std::to_string(i) + ".bin"));
    } else {
      files.push_back(path / "test_batch.bin");
    }
  } else {
    files.push_back(path);
  }
  RealDataset ds = empty_cifar(split);
  for (const auto& f : files) {
    if (!fs::exists(f)) throw Error("missing CIFAR-10 batch file " + f.string());
    append_cifar(ds, read_file_bytes(f), 0, f.string());
  }
  ds.images.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// PPM

namespace {

class PpmHeader {
 public:
  PpmHeader(std::span<const std::uint8_t> b, const std::string& name) : b_(b), name_(name) {}

  std::size_t number(const char* what) {
    skip_space();
    if (pos_ >= b_.size() || !std::isdigit(b_[pos_])) fail(std::string("expected ") + what);
    std::size_t v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + (b_[pos_++] - '0');
      if (v > (1u << 24)) fail(std::string(what) + " too large");
    }
    return v;
  }
  void magic() {
    if (b_.size() < 2 || b_[0] != 'P' || b_[1] != '6') fail("not a binary P6 PPM");
    pos_ = 2;
  }
  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_start() {
    if (pos_ >= b_.size() || !std::isspace(b_[pos_])) fail("missing whitespace before raster");
    return pos_ + 1;
  }
  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError(name_ + ": malformed PPM header: " + msg);
  }

 private:
  void skip_space() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(b_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> b_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace

PpmImage parse_ppm(std::span<const std::uint8_t> bytes, const std::string& name) {
  PpmHeader h(bytes, name);
  h.magic();
  PpmImage img;
  img.width = h.number("width");
  img.height = h.number("height");
  const std::size_t maxval = h.number("maxval");
  if (img.width == 0 || img.height == 0) h.fail("zero dimension");
  if (maxval != 255) h.fail("maxval " + std::to_string(maxval) + ", expected 255");
  const std::size_t start = h.raster_start();
  const std::size_t n = img.width * img.height * 3;
  if (bytes.size() - start < n) {
    throw FormatError(name + ": raster truncated (" + std::to_string(bytes.size() - start) +
                      " of " + std::to_string(n) + " bytes)");
  }
  img.rgb.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start),
                 bytes.begin() + static_cast<std::ptrdiff_t>(start + n));
  return img;
}

std::vector<std::uint8_t> encode_ppm(std::span<const double> chw, std::size_t height,
                                     std::size_t width) {
  const std::size_t plane = height * width;
  if (chw.size() != 3 * plane) throw ShapeError("encode_ppm: expected 3 channels");
  const std::string header = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + 3 * plane);
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(chw[c * plane + p], 0.0, 1.0);
      out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
    }
  }
  return out;
}

namespace {

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (directories ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

RealDataset load_image_dir(const fs::path& root, Split split) {
  if (!fs::is_directory(root)) throw Error("image directory " + root.string() + " not found");
  RealDataset ds;
  ds.split = split;
  ds.domain_labels.emplace();
  const auto domains = sorted_entries(root, true);
  if (domains.empty()) throw FormatError(root.string() + ": no domain directories");
  std::map<std::string, int> class_ids;
  for (const auto& d : domains) {
    for (const auto& c : sorted_entries(d, true)) class_ids.emplace(c.filename().string(), 0);
  }
  if (class_ids.empty()) throw FormatError(root.string() + ": no class directories");
  int next = 0;
  for (auto& [name, id] : class_ids) {
    id = next++;
    ds.class_names.push_back(name);
  }
  ds.images.num_classes = class_ids.size();
  bool first = true;
  for (std::size_t di = 0; di < domains.size(); ++di) {
    ds.domain_names.push_back(domains[di].filename().string());
    for (const auto& c : sorted_entries(domains[di], true)) {
      const int cls = class_ids.at(c.filename().string());
      for (const auto& f : sorted_entries(c, false)) {
        if (f.extension() != ".ppm") continue;
        const PpmImage img = parse_ppm(read_file_bytes(f), f.string());
        if (first) {
          ds.images.height = img.height;
          ds.images.width = img.width;
          first = false;
        } else if (img.height != ds.images.height || img.width != ds.images.width) {
          throw FormatError(f.string() + ": " + std::to_string(img.width) + "x" +
                            std::to_string(img.height) + " differs from " +
                            std::to_string(ds.images.width) + "x" +
                            std::to_string(ds.images.height));
        }
        const std::size_t plane = img.height * img.width;
        const std::size_t base = ds.images.pixels.size();
        ds.images.pixels.resize(base + 3 * plane);
        for (std::size_t p = 0; p < plane; ++p) {
          for (std::size_t ch = 0; ch < 3; ++ch) {
            ds.images.pixels[base + ch * plane + p] = img.rgb[p * 3 + ch] / 255.0;
          }
        }
        ds.images.labels.push_back(cls);
        ds.domain_labels->push_back(static_cast<int>(di));
      }
    }
  }
  if (ds.size() == 0) throw FormatError(root.string() + ": no .ppm files");
  ds.validate();
  return ds;
}

RealDataset load_dataset(const fs::path& path, Split split) {
  if (fs::is_directory(path)) {
    if (fs::exists(path / "manifest.txt")) {
      const auto kv = read_kv_file(path / "manifest.txt");
      if (auto it = kv.find("format"); it != kv.end() && it->second != "mddc-toy") {
        throw FormatError(path.string() + ": unknown corpus format '" + it->second + "'");
      }
      return load_image_dir(path / split_name(split), split);
    }
    if (fs::exists(path / "data_batch_1.bin") || fs::exists(path / "test_batch.bin")) {
      return load_cifar10(path, split);
    }
    if (fs::is_directory(path / split_name(split))) {
      return load_image_dir(path / split_name(split), split);
    }
    return load_image_dir(path, split);
  }
  if (!fs::exists(path)) throw Error("dataset " + path.string() + " not found");
  if (path.extension() == ".bin") return load_cifar10(path, split);
  throw FormatError(path.string() + ": unrecognised dataset");
}

}  // namespace mddc
