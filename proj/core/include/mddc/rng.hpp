#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mddc {

// SplitMix64 finaliser; used to decorrelate derived seeds.
std::uint64_t mix64(std::uint64_t x);

// Stable 64-bit FNV-1a hash of a stream tag.
std::uint64_t tag_hash(std::string_view tag);

// Seed for an independent child stream identified by `tag`.
std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag);
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index);

// A named random stream. Every consumer of randomness owns one, so adding
// or removing a consumer never shifts the numbers another one sees.
class Stream {
 public:
  explicit Stream(std::uint64_t seed) : seed_(seed), engine_(mix64(seed)) {}
  Stream(std::uint64_t parent, std::string_view tag) : Stream(derive_seed(parent, tag)) {}

  std::uint64_t seed() const { return seed_; }
  std::mt19937_64& engine() { return engine_; }

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, n).
  std::size_t below(std::size_t n);
  double uniform(double lo, double hi);
  double normal();

  Stream child(std::string_view tag) const { return Stream(seed_, tag); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace mddc
