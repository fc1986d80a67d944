#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "mddc/autodiff.hpp"

namespace mddc {

struct ConvNetConfig {
  std::size_t depth = 3;
  std::size_t width = 64;
  std::size_t input_hw = 32;
  std::size_t channels = 3;
  std::size_t num_outputs = 10;

  // Depth 3 up to 32x32 inputs, 4 above.
  static ConvNetConfig for_resolution(std::size_t hw, std::size_t width,
                                      std::size_t num_outputs);

  // Throws InvalidArgument on zero width/depth or when `depth` halvings
  // leave no spatial extent.
  void validate() const;
  std::size_t feature_hw() const { return input_hw >> depth; }
  std::size_t embedding_dim() const { return width * feature_hw() * feature_hw(); }
};

enum class ParamRole { theta, theta_prime };

const char* role_name(ParamRole role);

struct EmbedderParams {
  ConvNetConfig config;
  ParamRole role = ParamRole::theta;
  std::vector<ad::NdValue> conv_weight;  // [width, cin, 3, 3] per block
  std::vector<ad::NdValue> conv_bias;    // [width] per block
  ad::NdValue head_weight;               // [num_outputs, embedding_dim]
  ad::NdValue head_bias;                 // [num_outputs]

  std::size_t parameter_count() const;
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias. The
// role is folded into the seed, so theta and theta_prime drawn from one
// seed are still different parameter sets.
EmbedderParams init_convnet(const ConvNetConfig& config, std::uint64_t seed,
                            ParamRole role);

// Parameters placed on a tape, either frozen or as tracked leaves.
struct BoundParams {
  const ConvNetConfig* config = nullptr;
  std::vector<ad::Var> conv_weight;
  std::vector<ad::Var> conv_bias;
  ad::Var head_weight;
  ad::Var head_bias;
};

BoundParams bind(ad::Tape& tape, const EmbedderParams& params, bool trainable);

// conv3x3(pad 1) -> ReLU -> avgpool2 per block, then flatten: [B,E].
ad::Var embed(const BoundParams& params, ad::Var batch);
// Outputs of every block before flattening (used for feature statistics).
std::vector<ad::Var> block_outputs(const BoundParams& params, ad::Var batch);
// embed followed by the linear head: [B, num_outputs].
ad::Var classify(const BoundParams& params, ad::Var batch);

// Interface used by the matching losses, so tests can substitute a
// pass-through feature map for the ConvNet.
class FeatureMap {
 public:
  virtual ~FeatureMap() = default;
  virtual ad::Var embed(ad::Tape& tape, ad::Var batch) const = 0;
};

class ConvNetFeatureMap final : public FeatureMap {
 public:
  explicit ConvNetFeatureMap(std::shared_ptr<const EmbedderParams> params)
      : params_(std::move(params)) {}
  ad::Var embed(ad::Tape& tape, ad::Var batch) const override;
  const EmbedderParams& params() const { return *params_; }

 private:
  std::shared_ptr<const EmbedderParams> params_;
};

// Flattens each image unchanged.
class IdentityFeatureMap final : public FeatureMap {
 public:
  ad::Var embed(ad::Tape& tape, ad::Var batch) const override;
};

// Mean embedding of a batch computed on a scratch tape: shape [E].
ad::NdValue mean_embedding(const FeatureMap& map, const ad::NdValue& batch);

}  // namespace mddc
