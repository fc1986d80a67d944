#include <cmath>
#include <string>

#include "mddc/condense.hpp"
#include "mddc/error.hpp"

namespace mddc {

namespace {

ad::Var as_rows(ad::Var x) {
  const auto& s = x.shape();
  if (s.size() == 2) return x;
  if (s.empty()) throw ShapeError("linear backend: scalar batch");
  return ad::reshape(x, {s[0], x.size() / s[0]});
}

ad::NdValue onehot(std::span<const int> labels, std::size_t classes) {
  ad::NdValue out = ad::NdValue::zeros({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw InvalidArgument("label " + std::to_string(labels[i]) + " outside [0, " +
                            std::to_string(classes) + ")");
    }
    out.data[i * classes + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return out;
}

}  // namespace

ad::Var linear_ce_gradient(ad::Var batch, std::span<const int> labels, const ad::NdValue& weight) {
  ad::Tape& tape = batch.tape();
  ad::Var x = as_rows(batch);
  const std::size_t n = x.shape()[0];
  if (n == 0 || labels.size() != n) {
    throw ShapeError("linear gradient: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  if (weight.rank() != 2 || weight.shape[1] != x.shape()[1]) {
    throw ShapeError("linear gradient: weight " + ad::shape_str(weight.shape) + " vs batch " +
                     ad::shape_str(x.shape()));
  }
  ad::Var w = tape.constant(weight);
  ad::Var p = ad::softmax(ad::matmul(x, w, false, true), 1);
  ad::Var diff = ad::sub(p, tape.constant(onehot(labels, weight.shape[0])));
  return ad::scale(ad::matmul(diff, x, true, false), 1.0 / static_cast<double>(n));
}

ad::NdValue linear_ce_gradient(const ad::NdValue& batch, std::span<const int> labels,
                               const ad::NdValue& weight) {
  ad::Tape tape;
  return linear_ce_gradient(tape.constant(batch), labels, weight).value();
}

ad::Var gm_linear_loss(const ad::NdValue& real_batch, std::span<const int> real_labels,
                       ad::Var syn_batch, std::span<const int> syn_labels,
                       const ad::NdValue& weight) {
  ad::Tape& tape = syn_batch.tape();
  ad::Var g_real = tape.constant(linear_ce_gradient(real_batch, real_labels, weight));
  ad::Var g_syn = linear_ce_gradient(syn_batch, syn_labels, weight);
  return ad::rowwise_cosine_distance(g_real, g_syn);
}

ad::NdValue init_linear_weight(std::size_t classes, std::size_t pixels, std::uint64_t seed) {
  if (classes == 0 || pixels == 0) throw InvalidArgument("linear weight: empty shape");
  Stream stream(seed, "linear_weight");
  const double bound = 1.0 / std::sqrt(static_cast<double>(pixels));
  ad::NdValue w = ad::NdValue::zeros({classes, pixels});
  for (double& v : w.data) v = stream.uniform(-bound, bound);
  return w;
}

}  // namespace mddc
