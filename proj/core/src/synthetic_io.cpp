#include "mddc/synthetic_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "mddc/error.hpp"

namespace mddc {

void SyntheticDataset::validate() const {
  const std::size_t m = num_classes * ipc;
  if (m == 0) throw ShapeError("synthetic set: C*IPC must be positive");
  if (labels.size() != m) {
    throw ShapeError("synthetic set: " + std::to_string(labels.size()) + " labels, expected C*IPC=" +
                     std::to_string(m));
  }
  const ad::Shape want{m, channels, height, width};
  if (images.shape != want) {
    throw ShapeError("synthetic set: images " + ad::shape_str(images.shape) + ", expected " +
                     ad::shape_str(want));
  }
  for (std::size_t i = 0; i < m; ++i) {
    if (labels[i] != static_cast<int>(i / ipc)) {
      throw ShapeError("synthetic set: image " + std::to_string(i) + " has label " +
                       std::to_string(labels[i]) + ", expected " + std::to_string(i / ipc));
    }
  }
}

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u16(std::uint16_t v) {
    out_.push_back(static_cast<std::uint8_t>(v & 0xff));
    out_.push_back(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) out_.push_back(static_cast<std::uint8_t>((v >> s) & 0xff));
  }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  void need(std::size_t n, const char* what) const {
    if (pos_ + n > b_.size()) {
      throw FormatError(std::string("container truncated reading ") + what + " at byte " +
                        std::to_string(pos_));
    }
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    const auto v = static_cast<std::uint16_t>(b_[pos_] | (b_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

void write_header(Writer& w, const SyntheticDataset& syn) {
  w.bytes("MDDC", 4);
  w.u16(kContainerVersion);
  w.u32(static_cast<std::uint32_t>(syn.num_classes));
  w.u32(static_cast<std::uint32_t>(syn.ipc));
  w.u32(static_cast<std::uint32_t>(syn.height));
  w.u32(static_cast<std::uint32_t>(syn.width));
  w.u32(static_cast<std::uint32_t>(syn.channels));
}

struct Header {
  std::size_t c, ipc, h, w, channels;
};

Header read_header(Reader& r) {
  const auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), "MDDC", 4) != 0) throw FormatError("container: bad magic");
  const std::uint16_t version = r.u16("version");
  if (version != kContainerVersion) {
    throw FormatError("container: unsupported version " + std::to_string(version));
  }
  Header h{};
  h.c = r.u32("C");
  h.ipc = r.u32("IPC");
  h.h = r.u32("H");
  h.w = r.u32("W");
  h.channels = r.u32("channels");
  return h;
}

}  // namespace

std::vector<std::uint8_t> encode_container(const SyntheticDataset& syn) {
  syn.validate();
  if (syn.num_classes > 0xffff) throw ShapeError("container: class ids must fit in u16");
  Writer w;
  write_header(w, syn);
  for (int label : syn.labels) w.u16(static_cast<std::uint16_t>(label));
  for (double v : syn.images.data) w.f32(static_cast<float>(v));
  return w.take();
}

SyntheticDataset decode_container(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const Header h = read_header(r);
  SyntheticDataset syn;
  syn.num_classes = h.c;
  syn.ipc = h.ipc;
  syn.height = h.h;
  syn.width = h.w;
  syn.channels = h.channels;
  const std::size_t m = h.c * h.ipc;
  syn.labels.resize(m);
  for (auto& l : syn.labels) l = r.u16("labels");
  const std::size_t n = m * h.channels * h.h * h.w;
  r.need(n * 4, "pixels");
  std::vector<double> px(n);
  for (auto& v : px) v = r.f32("pixels");
  if (r.remaining() != 0) throw FormatError("container: trailing bytes after pixel data");
  syn.images = ad::NdValue({m, h.channels, h.h, h.w}, std::move(px));
  syn.validate();
  return syn;
}

std::vector<std::uint8_t> encode_sidecar(const SyntheticDataset& syn, const ad::NdValue& logits) {
  syn.validate();
  if (logits.rank() != 5 || logits.shape[0] != syn.size() || logits.shape[2] != syn.channels ||
      logits.shape[3] != syn.height || logits.shape[4] != syn.width) {
    throw ShapeError("sidecar: mask logits " + ad::shape_str(logits.shape) +
                     " do not match the synthetic set");
  }
  Writer w;
  write_header(w, syn);
  w.u32(static_cast<std::uint32_t>(logits.shape[1]));
  for (double v : logits.data) w.f32(static_cast<float>(v));
  return w.take();
}

MaskSidecar decode_sidecar(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const Header h = read_header(r);
  MaskSidecar s;
  s.num_classes = h.c;
  s.ipc = h.ipc;
  s.height = h.h;
  s.width = h.w;
  s.channels = h.channels;
  s.num_domains = r.u32("D");
  const std::size_t n = s.mask_planes() * h.h * h.w;
  r.need(n * 4, "mask logits");
  s.logits.resize(n);
  for (auto& v : s.logits) v = r.f32("mask logits");
  if (r.remaining() != 0) throw FormatError("sidecar: trailing bytes after mask data");
  return s;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

void write_container(const SyntheticDataset& syn, const std::filesystem::path& path) {
  write_file_bytes(path, encode_container(syn));
}

SyntheticDataset read_container(const std::filesystem::path& path) {
  return decode_container(read_file_bytes(path));
}

}  // namespace mddc
