#pragma once

#include <functional>
#include <span>
#include <vector>

#include "mddc/autodiff.hpp"
#include "mddc/rng.hpp"
#include "oracles.hpp"

namespace mddc::testing {

using ad::NdValue;
using ad::Shape;
using ad::Tape;
using ad::Var;

// One randomized gradient case per seed, cycling through every
// differentiable op plus small compositions of them.
struct OpCase {
  const char* name;
  std::function<std::vector<NdValue>(Stream&)> inputs;
  testing::Builder build;
};

inline std::vector<OpCase> op_cases() {
  auto dims = [](Stream& s, std::size_t lo, std::size_t hi) { return lo + s.below(hi - lo + 1); };
  // Values kept away from relu's kink so finite differences are valid.
  auto away_from_zero = [](NdValue v, Stream& s) {
    for (double& x : v.data) x = (s.below(2) ? 1 : -1) * s.uniform(0.1, 1.0);
    return v;
  };
  const std::vector<int> targets{0, 2, 1, 2, 0};
  std::vector<OpCase> cases;
  cases.push_back({"conv2d", [=](Stream& s) {
                     const std::size_t c = dims(s, 1, 3), h = dims(s, 3, 6);
                     return std::vector{random_value({dims(s, 1, 2), c, h, h}, s),
                                        random_value({dims(s, 1, 3), c, 3, 3}, s),
                                        random_value({1}, s)};
                   },
                   [](Tape&, std::span<const Var> v) {
                     const Var y = ad::conv2d(v[0], v[1], 1 + v[0].shape()[2] % 2, 1);
                     return ad::sum(ad::mul(ad::mul(y, y), v[2]));
                   }});
  cases.push_back({"conv2d_bias", [=](Stream& s) {
                     const std::size_t o = dims(s, 1, 3);
                     return std::vector{random_value({2, 2, 5, 5}, s), random_value({o, 2, 3, 3}, s),
                                        random_value({o}, s)};
                   },
                   [](Tape&, std::span<const Var> v) {
                     const Var y = ad::conv2d(v[0], v[1], 1, 0, v[2]);
                     return ad::sum(ad::mul(y, y));
                   }});
  cases.push_back({"relu", [=](Stream& s) {
                     return std::vector{away_from_zero(NdValue::zeros({dims(s, 1, 4), 5}, true), s),
                                        random_value({1}, s)};
                   },
                   [](Tape&, std::span<const Var> v) {
                     return ad::sum(ad::mul(ad::relu(ad::mul(v[0], v[1])), v[0]));
                   }});
  cases.push_back({"add_sub_mul", [=](Stream& s) {
                     const Shape sh{dims(s, 1, 3), dims(s, 1, 4)};
                     return std::vector{random_value(sh, s), random_value(sh, s), random_value({1}, s)};
                   },
                   [](Tape&, std::span<const Var> v) {
                     const Var a = ad::add(ad::mul(v[0], v[1]), v[2]);
                     const Var b = ad::sub(v[2], ad::mul(v[1], v[1]));
                     return ad::sum(ad::mul(a, b));
                   }});
  cases.push_back({"scale_exp", [=](Stream& s) {
                     return std::vector{random_value({dims(s, 1, 6)}, s)};
                   },
                   [](Tape&, std::span<const Var> v) {
                     return ad::sum(ad::exp(ad::scale(ad::mul(v[0], v[0]), -0.7)));
                   }});
  cases.push_back({"softmax", [=](Stream& s) {
                     return std::vector{random_value({dims(s, 1, 3), dims(s, 2, 5), dims(s, 1, 3)}, s, -3, 3),
                                        random_value({1}, s)};
                   },
                   [](Tape&, std::span<const Var> v) {
                     const Var p = ad::softmax(ad::scale(v[0], 1.0 / 0.3), 1);
                     return ad::sum(ad::mul(ad::mul(p, p), ad::add(v[0], v[1])));
                   }});
  cases.push_back({"avg_pool", [=](Stream& s) {
                     const std::size_t h = dims(s, 2, 7);
                     return std::vector{random_value({1, 2, h, h + 1}, s)};
                   },
                   [](Tape&, std::span<const Var> v) {
                     const Var p = ad::avg_pool2d(v[0], 2);
                     return ad::sum(ad::mul(p, p));
                   }});
  cases.push_back({"means", [=](Stream& s) {
                     return std::vector{random_value({dims(s, 1, 3), dims(s, 1, 4), 3}, s)};
                   },
                   [](Tape&, std::span<const Var> v) {
                     const Var m = ad::mean_axis(v[0], 1);
                     const Var g = ad::global_mean(ad::mul(v[0], v[0]));
                     return ad::add(ad::sum(ad::mul(m, m)), g);
                   }});
  cases.push_back({"reshape_expand", [=](Stream& s) {
                     return std::vector{random_value({2, dims(s, 1, 3)}, s)};
                   },
                   [](Tape&, std::span<const Var> v) {
                     const Var e = ad::expand(v[0], 0, 3);
                     const Var f = ad::flatten(ad::reshape(e, {3, 2, v[0].shape()[1]}));
                     return ad::sum(ad::mul(f, ad::exp(f)));
                   }});
  cases.push_back({"linear", [=](Stream& s) {
                     const std::size_t in = dims(s, 1, 5), out = dims(s, 1, 4);
                     return std::vector{random_value({dims(s, 1, 3), in}, s), random_value({out, in}, s),
                                        random_value({out}, s)};
                   },
                   [](Tape&, std::span<const Var> v) {
                     const Var y = ad::linear(v[0], v[1], v[2]);
                     return ad::sum(ad::mul(y, y));
                   }});
  cases.push_back({"matmul", [=](Stream& s) {
                     const std::size_t a = dims(s, 1, 4), b = dims(s, 1, 4), c = dims(s, 1, 4);
                     return std::vector{random_value({b, a}, s), random_value({c, b}, s)};
                   },
                   [](Tape&, std::span<const Var> v) {
                     const Var y = ad::matmul(v[0], v[1], true, true);
                     return ad::sum(ad::mul(y, y));
                   }});
  cases.push_back({"cosine", [=](Stream& s) {
                     const Shape sh{dims(s, 1, 4), dims(s, 2, 5)};
                     return std::vector{random_value(sh, s), random_value(sh, s)};
                   },
                   [](Tape&, std::span<const Var> v) { return ad::rowwise_cosine_distance(v[0], v[1]); }});
  cases.push_back({"mse", [=](Stream& s) {
                     const Shape sh{dims(s, 1, 4), dims(s, 1, 5)};
                     return std::vector{random_value(sh, s), random_value(sh, s)};
                   },
                   [](Tape&, std::span<const Var> v) { return ad::mse_loss(v[0], v[1]); }});
  cases.push_back({"cross_entropy", [=](Stream& s) {
                     return std::vector{random_value({5, 3}, s, -2, 2)};
                   },
                   [targets](Tape&, std::span<const Var> v) {
                     return ad::cross_entropy_loss(v[0], targets);
                   }});
  return cases;
}

}  // namespace mddc::testing
