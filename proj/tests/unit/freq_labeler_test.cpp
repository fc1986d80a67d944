#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

#include "mddc/error.hpp"
#include "mddc/freq_labeler.hpp"
#include "oracles.hpp"

namespace mddc {
namespace {

ImageSet make_images(std::size_t n, std::size_t hw, Stream& s) {
  ImageSet set;
  set.height = set.width = hw;
  set.num_classes = 1;
  set.pixels.resize(n * 3 * hw * hw);
  for (double& p : set.pixels) p = s.uniform(0, 1);
  set.labels.assign(n, 0);
  return set;
}

std::vector<std::size_t> group_sizes(const std::vector<int>& labels, std::size_t d) {
  std::vector<std::size_t> sizes(d, 0);
  for (int l : labels) ++sizes.at(static_cast<std::size_t>(l));
  return sizes;
}

TEST(RankAndSlice, WorkedExample) {
  const std::vector<double> mu{5, 1, 3, 7, 2, 8, 4, 6};
  EXPECT_EQ(rank_and_slice(mu, 4, SortOrder::ascending), (std::vector<int>{2, 0, 1, 3, 0, 3, 1, 2}));
}

TEST(RankAndSlice, TiesBrokenByIndex) {
  const std::vector<double> mu(8, 0.5);
  EXPECT_EQ(rank_and_slice(mu, 4, SortOrder::ascending), (std::vector<int>{0, 0, 1, 1, 2, 2, 3, 3}));
  EXPECT_EQ(rank_and_slice(mu, 4, SortOrder::descending), (std::vector<int>{0, 0, 1, 1, 2, 2, 3, 3}));
}

TEST(RankAndSlice, RealValuedGroupWidth) {
  std::vector<double> mu(10);
  for (std::size_t i = 0; i < 10; ++i) mu[i] = static_cast<double>(i);
  EXPECT_EQ(group_sizes(rank_and_slice(mu, 4, SortOrder::ascending), 4),
            (std::vector<std::size_t>{3, 2, 3, 2}));
}

TEST(RankAndSlice, DescendingReversesGroups) {
  const std::vector<double> mu{5, 1, 3, 7, 2, 8, 4, 6};
  EXPECT_EQ(rank_and_slice(mu, 4, SortOrder::descending), (std::vector<int>{1, 3, 2, 0, 3, 0, 2, 1}));
}

TEST(RankAndSlice, RejectsDomainCountOutsideOneToN) {
  const std::vector<double> mu{1, 2};
  EXPECT_THROW(rank_and_slice(mu, 3, SortOrder::ascending), InvalidArgument);
  EXPECT_THROW(rank_and_slice(mu, 0, SortOrder::ascending), InvalidArgument);
}

TEST(RankAndSlice, ExhaustiveGroupSizesAndBruteForceAgreement) {
  Stream s(1);
  for (std::size_t n = 1; n <= 64; ++n) {
    std::vector<double> mu(n);
    // Coarse values force plenty of ties.
    for (double& m : mu) m = static_cast<double>(s.below(n / 2 + 1));
    for (std::size_t d = 1; d <= n; ++d) {
      for (SortOrder order : {SortOrder::ascending, SortOrder::descending}) {
        const auto labels = rank_and_slice(mu, d, order);
        ASSERT_EQ(labels, testing::brute_rank_labels(mu, d, order == SortOrder::ascending));
        const auto sizes = group_sizes(labels, d);
        const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
        ASSERT_LE(*hi - *lo, 1u) << "N=" << n << " D=" << d;
        ASSERT_GE(*lo, 1u);
      }
    }
  }
}

TEST(RankAndSlice, InvariantUnderMonotoneTransforms) {
  Stream s(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + s.below(64);
    std::vector<double> mu(n);
    for (double& m : mu) m = s.uniform(0.01, 5.0);
    const std::size_t d = 1 + s.below(n);
    const auto base = rank_and_slice(mu, d, SortOrder::ascending);
    const std::vector<std::function<double(double)>> transforms{
        [](double x) { return std::log(x); }, [](double x) { return std::exp(3 * x); },
        [](double x) { return 7 * x - 100; }, [](double x) { return x * x * x; },
        [](double x) { return std::sqrt(x) + 1e6; }};
    for (const auto& f : transforms) {
      std::vector<double> t(n);
      std::transform(mu.begin(), mu.end(), t.begin(), f);
      EXPECT_EQ(rank_and_slice(t, d, SortOrder::ascending), base);
    }
  }
}

TEST(MeanAmplitude, ConstantImageOnFourByFour) {
  const double c = 0.4;
  const std::vector<double> img(3 * 16, c);
  EXPECT_EQ(crop_extent(4, 0.25), 1u);
  EXPECT_NEAR(image_mu(img, 3, 4, 4, 0.25), 16 * c, 1e-12);
}

TEST(MeanAmplitude, ImpulseIsRoughlyOneForAnyBeta) {
  std::vector<double> img(3 * 8 * 8, 0.0);
  for (std::size_t c = 0; c < 3; ++c) img[c * 64 + 9] = 1.0;
  for (double beta : {0.1, 0.25, 0.5, 0.8, 1.0}) {
    const double ch = static_cast<double>(crop_extent(8, beta));
    EXPECT_NEAR(image_mu(img, 3, 8, 8, beta), ch * ch / (beta * beta * 64), 1e-12) << beta;
  }
  EXPECT_NEAR(image_mu(img, 3, 8, 8, 0.25), 1.0, 1e-12);
}

TEST(MeanAmplitude, LowPassNoiseBeatsWhiteNoiseOfEqualVariance) {
  Stream s(3);
  const std::size_t hw = 32;
  std::vector<double> white(hw * hw), smooth(hw * hw, 0.0);
  for (double& v : white) v = s.normal();
  // 5x5 circular box blur, then rescale to the same variance.
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t j = 0; j < hw; ++j) {
      double acc = 0;
      for (int a = -2; a <= 2; ++a)
        for (int b = -2; b <= 2; ++b) acc += white[((i + hw + a) % hw) * hw + (j + hw + b) % hw];
      smooth[i * hw + j] = acc;
    }
  auto variance = [](const std::vector<double>& v) {
    double m = 0, q = 0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    for (double x : v) q += (x - m) * (x - m);
    return q / static_cast<double>(v.size());
  };
  const double k = std::sqrt(variance(white) / variance(smooth));
  for (double& v : smooth) v *= k;
  std::vector<double> w3, s3;
  for (int c = 0; c < 3; ++c) {
    w3.insert(w3.end(), white.begin(), white.end());
    s3.insert(s3.end(), smooth.begin(), smooth.end());
  }
  EXPECT_GT(image_mu(s3, 3, hw, hw, 0.25), image_mu(w3, 3, hw, hw, 0.25));
}

TEST(MeanAmplitude, RejectsBadBetaAndUnshiftedSpectra) {
  const std::vector<double> img(3 * 16, 0.1);
  EXPECT_THROW(image_mu(img, 3, 4, 4, 0.0), InvalidArgument);
  EXPECT_THROW(image_mu(img, 3, 4, 4, 1.5), InvalidArgument);
  const std::vector<SpectrumGrid> raw{dft2d(std::span(img).first(16), 4, 4)};
  EXPECT_THROW(mean_amplitude(raw, 0.5), InvalidArgument);
}

TEST(KMeans1d, SeparatedClustersAndSingleCluster) {
  const std::vector<double> v{0, 0.1, 10, 10.1};
  EXPECT_EQ(kmeans_1d(v, 2, 0), (std::vector<int>{0, 0, 1, 1}));
  EXPECT_EQ(kmeans_1d(v, 1, 0), (std::vector<int>{0, 0, 0, 0}));
  const std::vector<double> reversed{10.1, 0, 10, 0.1};
  EXPECT_EQ(kmeans_1d(reversed, 2, 5), (std::vector<int>{1, 0, 1, 0}));
}

TEST(KMeans1d, RejectsMoreClustersThanDistinctValues) {
  const std::vector<double> v{1, 1, 2, 2};
  EXPECT_THROW(kmeans_1d(v, 3, 0), InvalidArgument);
  EXPECT_NO_THROW(kmeans_1d(v, 2, 0));
}

TEST(KMeans1d, SseNoWorseThanRankSlicing) {
  auto sse = [](const std::vector<double>& v, const std::vector<int>& l, std::size_t k) {
    std::vector<double> sum(k, 0), cnt(k, 0);
    for (std::size_t i = 0; i < v.size(); ++i) {
      sum[l[i]] += v[i];
      cnt[l[i]] += 1;
    }
    double e = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double m = sum[l[i]] / cnt[l[i]];
      e += (v[i] - m) * (v[i] - m);
    }
    return e;
  };
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Stream s(seed);
    std::vector<double> v(200);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = s.normal() + 4.0 * static_cast<double>(s.below(4));
    const auto km = kmeans_1d(v, 4, seed);
    const auto rs = rank_and_slice(v, 4, SortOrder::ascending);
    EXPECT_LE(sse(v, km, 4), sse(v, rs, 4) + 1e-9);
  }
}

EmbedderParams zero_bias_embedder(std::size_t hw) {
  ConvNetConfig c = ConvNetConfig::for_resolution(hw, 8, 1);
  auto p = init_convnet(c, 4, ParamRole::theta);
  for (auto& b : p.conv_bias) std::fill(b.data.begin(), b.data.end(), 0.0);
  return p;
}

TEST(LogvarFeatures, ZeroImageGivesLogEpsilon) {
  ImageSet set;
  set.height = set.width = 16;
  set.num_classes = 1;
  set.pixels.assign(3 * 256, 0.0);
  set.labels = {0};
  const auto f = logvar_features(set, zero_bias_embedder(16));
  ASSERT_EQ(f.size(), 1u);
  EXPECT_NEAR(f[0], std::log(1e-8), 1e-12);
}

TEST(LogvarFeatures, DuplicateImagesMatchAndNoiseRaisesVariance) {
  Stream s(5);
  ImageSet set;
  set.height = set.width = 16;
  set.num_classes = 1;
  const std::size_t img = 3 * 256;
  set.pixels.resize(3 * img);
  for (std::size_t i = 0; i < img; ++i) {
    const double smooth = 0.5 + 0.1 * std::sin(static_cast<double>(i % 16) / 5.0);
    set.pixels[i] = set.pixels[img + i] = smooth;
    set.pixels[2 * img + i] = std::clamp(smooth + 0.3 * s.normal(), 0.0, 1.0);
  }
  set.labels = {0, 0, 0};
  const auto f = logvar_features(set, init_convnet(ConvNetConfig::for_resolution(16, 8, 1), 5, ParamRole::theta));
  EXPECT_EQ(f[0], f[1]);
  EXPECT_GT(f[2], f[0]);
}

TEST(RandomLabels, DeterministicAndInRange) {
  const auto a = random_labels(500, 4, 9);
  EXPECT_EQ(a, random_labels(500, 4, 9));
  EXPECT_NE(a, random_labels(500, 4, 10));
  for (int l : a) EXPECT_TRUE(l >= 0 && l < 4);
  for (std::size_t n : group_sizes(a, 4)) EXPECT_GT(n, 80u);
}

TEST(AssignPseudoDomains, EveryMethodIsReproducibleAndCoversDomains) {
  Stream s(6);
  const ImageSet set = make_images(24, 16, s);
  for (LabelMethod m : {LabelMethod::fft_meansort, LabelMethod::fft_kmeans, LabelMethod::logvar_meansort,
                        LabelMethod::logvar_kmeans, LabelMethod::random}) {
    LabelingConfig cfg;
    cfg.method = m;
    cfg.num_domains = 3;
    cfg.seed = 11;
    cfg.logvar_width = 8;
    const auto a = assign_pseudo_domains(set, cfg);
    const auto b = assign_pseudo_domains(set, cfg);
    EXPECT_EQ(format_labels(a), format_labels(b)) << method_name(m);
    ASSERT_EQ(a.labels.size(), 24u);
    for (int l : a.labels) EXPECT_TRUE(l >= 0 && l < 3);
    EXPECT_EQ(parse_method(method_name(m)), m);
  }
}

TEST(AssignPseudoDomains, FftMeanSortUsesMuRanking) {
  Stream s(7);
  const ImageSet set = make_images(12, 8, s);
  LabelingConfig cfg;
  cfg.num_domains = 4;
  const auto a = assign_pseudo_domains(set, cfg);
  for (std::size_t i = 0; i < set.size(); ++i)
    EXPECT_DOUBLE_EQ(a.statistic[i], image_mu(set.image(i), 3, 8, 8, 0.25));
  EXPECT_EQ(a.labels, rank_and_slice(a.statistic, 4, SortOrder::ascending));
  cfg.num_domains = 13;
  EXPECT_THROW(assign_pseudo_domains(set, cfg), InvalidArgument);
}

TEST(LabelsFile, RoundTripsThroughText) {
  Stream s(8);
  const ImageSet set = make_images(10, 8, s);
  LabelingConfig cfg;
  cfg.num_domains = 3;
  cfg.beta = 0.5;
  cfg.order = SortOrder::descending;
  cfg.seed = 77;
  const auto a = assign_pseudo_domains(set, cfg);
  const std::string text = format_labels(a);
  EXPECT_EQ(text.rfind("# method=fft-meansort D=3 beta=0.5 order=descending seed=77\n", 0), 0u);
  const auto b = parse_labels(text);
  EXPECT_EQ(b.labels, a.labels);
  EXPECT_EQ(b.statistic, a.statistic);
  EXPECT_EQ(b.config.num_domains, 3u);
  EXPECT_EQ(b.config.order, SortOrder::descending);
  EXPECT_EQ(format_labels(b), text);

  const auto path = std::filesystem::temp_directory_path() / "mddc_labels_roundtrip.txt";
  write_labels(a, path);
  EXPECT_EQ(read_labels(path).labels, a.labels);
  std::filesystem::remove(path);
}

TEST(LabelsFile, MalformedInputRejected) {
  EXPECT_THROW(parse_labels(""), FormatError);
  EXPECT_THROW(parse_labels("# method=random beta=0.25\n0,0,0\n"), FormatError);
  EXPECT_THROW(parse_labels("# method=random D=2\n0,0,5\n"), FormatError);
  EXPECT_THROW(parse_labels("# method=random D=2\n1,0,0\n"), FormatError);
  EXPECT_THROW(parse_labels("# method=random D=2\n0;0;0\n"), FormatError);
  EXPECT_THROW(parse_order("sideways"), InvalidArgument);
}

}  // namespace
}  // namespace mddc
