#include "mddc/embedder.hpp"

#include <cmath>
#include <string>

#include "mddc/error.hpp"
#include "mddc/rng.hpp"

namespace mddc {

ConvNetConfig ConvNetConfig::for_resolution(std::size_t hw, std::size_t width,
                                            std::size_t num_outputs) {
  ConvNetConfig c;
  c.depth = hw <= 32 ? 3 : 4;
  c.width = width;
  c.input_hw = hw;
  c.num_outputs = num_outputs;
  return c;
}

void ConvNetConfig::validate() const {
  if (width == 0) throw InvalidArgument("ConvNetConfig: width must be positive");
  if (depth == 0) throw InvalidArgument("ConvNetConfig: depth must be positive");
  if (channels == 0) throw InvalidArgument("ConvNetConfig: channels must be positive");
  if (num_outputs == 0) throw InvalidArgument("ConvNetConfig: num_outputs must be positive");
  if (depth >= 64 || (input_hw >> depth) == 0) {
    throw InvalidArgument("ConvNetConfig: " + std::to_string(depth) +
                          " poolings leave no spatial extent for " +
                          std::to_string(input_hw) + "px input");
  }
}

const char* role_name(ParamRole role) {
  return role == ParamRole::theta ? "theta" : "theta_prime";
}

std::size_t EmbedderParams::parameter_count() const {
  std::size_t n = head_weight.size() + head_bias.size();
  for (const auto& w : conv_weight) n += w.size();
  for (const auto& b : conv_bias) n += b.size();
  return n;
}

namespace {

ad::NdValue uniform_fan_in(ad::Shape shape, std::size_t fan_in, Stream& stream) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  ad::NdValue v = ad::NdValue::zeros(std::move(shape));
  for (double& d : v.data) d = stream.uniform(-bound, bound);
  return v;
}

}  // namespace

EmbedderParams init_convnet(const ConvNetConfig& config, std::uint64_t seed,
                            ParamRole role) {
  config.validate();
  Stream stream(seed, role_name(role));
  EmbedderParams p;
  p.config = config;
  p.role = role;
  std::size_t cin = config.channels;
  for (std::size_t b = 0; b < config.depth; ++b) {
    const std::size_t fan_in = cin * 9;
    p.conv_weight.push_back(uniform_fan_in({config.width, cin, 3, 3}, fan_in, stream));
    p.conv_bias.push_back(uniform_fan_in({config.width}, fan_in, stream));
    cin = config.width;
  }
  const std::size_t e = config.embedding_dim();
  p.head_weight = uniform_fan_in({config.num_outputs, e}, e, stream);
  p.head_bias = uniform_fan_in({config.num_outputs}, e, stream);
  return p;
}

BoundParams bind(ad::Tape& tape, const EmbedderParams& params, bool trainable) {
  auto put = [&](const ad::NdValue& v) {
    ad::NdValue copy = v;
    copy.tracked = trainable;
    return tape.leaf(std::move(copy));
  };
  BoundParams b;
  b.config = &params.config;
  for (const auto& w : params.conv_weight) b.conv_weight.push_back(put(w));
  for (const auto& c : params.conv_bias) b.conv_bias.push_back(put(c));
  b.head_weight = put(params.head_weight);
  b.head_bias = put(params.head_bias);
  return b;
}

namespace {

void check_batch(const ConvNetConfig& c, ad::Var batch) {
  const auto& s = batch.shape();
  if (s.size() != 4 || s[1] != c.channels || s[2] != c.input_hw || s[3] != c.input_hw) {
    throw ShapeError("embedder expects [B," + std::to_string(c.channels) + "," +
                     std::to_string(c.input_hw) + "," + std::to_string(c.input_hw) +
                     "], got " + ad::shape_str(s));
  }
}

}  // namespace

std::vector<ad::Var> block_outputs(const BoundParams& params, ad::Var batch) {
  check_batch(*params.config, batch);
  std::vector<ad::Var> outs;
  ad::Var h = batch;
  for (std::size_t b = 0; b < params.conv_weight.size(); ++b) {
    h = ad::conv2d(h, params.conv_weight[b], 1, 1, params.conv_bias[b]);
    h = ad::relu(h);
    h = ad::avg_pool2d(h, 2);
    outs.push_back(h);
  }
  return outs;
}

ad::Var embed(const BoundParams& params, ad::Var batch) {
  return ad::flatten(block_outputs(params, batch).back());
}

ad::Var classify(const BoundParams& params, ad::Var batch) {
  return ad::linear(embed(params, batch), params.head_weight, params.head_bias);
}

ad::Var ConvNetFeatureMap::embed(ad::Tape& tape, ad::Var batch) const {
  return mddc::embed(bind(tape, *params_, false), batch);
}

ad::Var IdentityFeatureMap::embed(ad::Tape&, ad::Var batch) const {
  return ad::flatten(batch);
}

ad::NdValue mean_embedding(const FeatureMap& map, const ad::NdValue& batch) {
  if (batch.rank() < 1 || batch.shape[0] == 0) {
    throw ShapeError("mean_embedding: empty batch " + ad::shape_str(batch.shape));
  }
  // Fixed-size chunks bound the scratch tape; the summation order depends
  // only on the batch size.
  constexpr std::size_t kChunk = 16;
  const std::size_t n = batch.shape[0];
  const std::size_t per_image = batch.size() / n;
  std::vector<double> total;
  for (std::size_t first = 0; first < n; first += kChunk) {
    const std::size_t count = std::min(kChunk, n - first);
    ad::Shape shape = batch.shape;
    shape[0] = count;
    std::vector<double> part(batch.data.begin() + static_cast<std::ptrdiff_t>(first * per_image),
                             batch.data.begin() +
                                 static_cast<std::ptrdiff_t>((first + count) * per_image));
    ad::Tape tape;
    ad::Var x = tape.constant(ad::NdValue(std::move(shape), std::move(part)));
    const ad::NdValue& e = map.embed(tape, x).value();
    const std::size_t dim = e.size() / count;
    if (total.empty()) total.assign(dim, 0.0);
    for (std::size_t r = 0; r < count; ++r) {
      for (std::size_t j = 0; j < dim; ++j) total[j] += e.data[r * dim + j];
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (double& d : total) d *= inv;
  const std::size_t dim = total.size();
  return ad::NdValue({dim}, std::move(total));
}

}  // namespace mddc
