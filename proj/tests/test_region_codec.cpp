#include <gtest/gtest.h>

#include "helpers.hpp"
#include "tumorkit/region_codec.hpp"

using namespace tumorkit;

namespace {

ProbabilityStack constant_stack(Dims d, float wt, float tc, float et) {
  return {Volume3(d, {}, wt), Volume3(d, {}, tc), Volume3(d, {}, et)};
}

LabelVolume random_labels(Dims d, Rng &rng) {
  LabelVolume l(d, {});
  for (std::size_t i = 0; i < l.size(); ++i)
    l[i] = static_cast<std::uint8_t>(rng.below(4));
  return l;
}

ProbabilityStack random_stack(Dims d, Rng &rng) {
  return {testutil::random_volume(d, rng), testutil::random_volume(d, rng),
          testutil::random_volume(d, rng)};
}

} // namespace

TEST(LabelsToRegions, NestingPerLabel) {
  LabelVolume l({1, 1, 4}, {}, std::vector<std::uint8_t>{0, 1, 2, 3});
  const auto s = labels_to_regions(l);
  const float expect[4][3] = {{0, 0, 0}, {1, 1, 0}, {1, 0, 0}, {1, 1, 1}};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(s.wt()[i], expect[i][0]);
    EXPECT_EQ(s.tc()[i], expect[i][1]);
    EXPECT_EQ(s.et()[i], expect[i][2]);
  }
}

TEST(LabelsToRegions, InvalidLabel) {
  LabelVolume l({1, 1, 2}, {}, std::vector<std::uint8_t>{0, 4});
  EXPECT_THROW(labels_to_regions(l), LabelError);
}

TEST(Decode, Examples) {
  EXPECT_EQ(regions_to_labels(constant_stack({1, 1, 1}, 0.9f, 0.9f, 0.9f))[0], 3);
  EXPECT_EQ(regions_to_labels(constant_stack({1, 1, 1}, 0.9f, 0.2f, 0.1f))[0], 2);
  EXPECT_EQ(regions_to_labels(constant_stack({1, 1, 1}, 0.4f, 0.4f, 0.4f))[0], 0);
  EXPECT_EQ(regions_to_labels(constant_stack({1, 1, 1}, 0.9f, 0.7f, 0.1f))[0], 1);
}

TEST(Decode, ThresholdsAreInclusive) {
  EXPECT_EQ(regions_to_labels(constant_stack({1, 1, 1}, 0.5f, 0.0f, 0.0f))[0], 2);
}

TEST(Decode, RejectsBadThreshold) {
  DecodeConfig cfg;
  cfg.tau_tc = 1.0;
  EXPECT_THROW(regions_to_labels(constant_stack({1, 1, 1}, 0, 0, 0), cfg),
               ConfigError);
}

TEST(Decode, RoundTripIdentity) {
  Rng rng(1);
  for (int t = 0; t < 10; ++t) {
    const auto l = random_labels({6, 7, 8}, rng);
    EXPECT_EQ(regions_to_labels(labels_to_regions(l)), l);
  }
}

TEST(Decode, OutputIsNested) {
  Rng rng(2);
  for (int t = 0; t < 10; ++t) {
    const auto s = labels_to_regions(regions_to_labels(random_stack({5, 5, 5}, rng)));
    for (std::size_t i = 0; i < s.dims().voxels(); ++i) {
      EXPECT_GE(s.wt()[i], s.tc()[i]);
      EXPECT_GE(s.tc()[i], s.et()[i]);
    }
  }
}

TEST(Fuse, SingleStackIdentity) {
  Rng rng(3);
  const auto s = random_stack({4, 5, 6}, rng);
  const auto f = fuse_ensemble(std::span<const ProbabilityStack>(&s, 1));
  EXPECT_EQ(f.wt(), s.wt());
  EXPECT_EQ(f.tc(), s.tc());
  EXPECT_EQ(f.et(), s.et());
}

TEST(Fuse, CopiesAreIdentity) {
  Rng rng(4);
  const auto s = random_stack({4, 5, 6}, rng);
  for (std::size_t k : {2u, 3u, 5u, 7u}) {
    const std::vector<ProbabilityStack> copies(k, s);
    const auto f = fuse_ensemble(copies);
    EXPECT_EQ(f.wt(), s.wt());
    EXPECT_EQ(f.tc(), s.tc());
    EXPECT_EQ(f.et(), s.et());
  }
}

TEST(Fuse, MeanOfTwo) {
  const std::vector<ProbabilityStack> s{constant_stack({2, 2, 2}, 0.2f, 0.2f, 0.2f),
                                        constant_stack({2, 2, 2}, 0.6f, 0.6f, 0.6f)};
  const auto f = fuse_ensemble(s);
  EXPECT_FLOAT_EQ(f.wt()[0], 0.4f);
  EXPECT_FLOAT_EQ(f.et()[7], 0.4f);
}

TEST(Fuse, WeightsSelectFirst) {
  Rng rng(5);
  const std::vector<ProbabilityStack> s{random_stack({3, 3, 3}, rng),
                                        random_stack({3, 3, 3}, rng)};
  const std::vector<double> w{1.0, 0.0};
  const auto f = fuse_ensemble(s, std::span<const double>(w));
  EXPECT_EQ(f.wt(), s[0].wt());
  EXPECT_EQ(f.tc(), s[0].tc());
  EXPECT_EQ(f.et(), s[0].et());
}

TEST(Fuse, OutputStaysInUnitInterval) {
  Rng rng(6);
  std::vector<ProbabilityStack> s;
  for (int k = 0; k < 5; ++k)
    s.push_back(random_stack({4, 4, 4}, rng));
  const std::vector<double> w{0.1, 3.0, 0.7, 2.2, 1.0};
  const auto f = fuse_ensemble(s, std::span<const double>(w));
  for (auto r : kRegions)
    for (float v : f.channel(r).data()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
}

TEST(Fuse, Errors) {
  const std::vector<ProbabilityStack> none;
  EXPECT_THROW(fuse_ensemble(none), ArityError);
  const std::vector<ProbabilityStack> mixed{constant_stack({2, 2, 2}, 0, 0, 0),
                                            constant_stack({2, 2, 3}, 0, 0, 0)};
  EXPECT_THROW(fuse_ensemble(mixed), ShapeError);
  const std::vector<ProbabilityStack> two{constant_stack({2, 2, 2}, 0, 0, 0),
                                          constant_stack({2, 2, 2}, 0, 0, 0)};
  const std::vector<double> short_w{1.0}, zero_w{0.0, 0.0}, neg_w{1.0, -1.0};
  EXPECT_THROW(fuse_ensemble(two, std::span<const double>(short_w)), ArityError);
  EXPECT_THROW(fuse_ensemble(two, std::span<const double>(zero_w)), ConfigError);
  EXPECT_THROW(fuse_ensemble(two, std::span<const double>(neg_w)), ConfigError);
}

TEST(Postprocess, SmallTotalDropsAllEnhancing) {
  LabelVolume l({10, 10, 10}, {});
  for (std::size_t i = 0; i < 199; ++i)
    l[i] = kEnhancing;
  l[500] = kEdema;
  const auto out = postprocess_enhancing(l);
  for (std::size_t i = 0; i < 199; ++i)
    EXPECT_EQ(out[i], kNonEnhancing);
  EXPECT_EQ(out[500], kEdema);
}

TEST(Postprocess, TotalAtThresholdIsKept) {
  LabelVolume l({10, 10, 10}, {});
  for (std::size_t i = 0; i < 200; ++i)
    l[i] = kEnhancing;
  EXPECT_EQ(postprocess_enhancing(l), l);
}

TEST(Postprocess, SmallComponentRemoved) {
  LabelVolume l({12, 12, 12}, {});
  // 300 voxels: 3 full 10x10 slabs.
  testutil::fill_box(l, 0, 2, 0, 9, 0, 9, std::uint8_t{kEnhancing});
  // 5 voxels far away.
  testutil::fill_box(l, 10, 10, 11, 11, 5, 9, std::uint8_t{kEnhancing});
  const auto out = postprocess_enhancing(l);
  std::size_t et = 0;
  for (auto v : out.data())
    et += v == kEnhancing;
  EXPECT_EQ(et, 300u);
  EXPECT_EQ(out.at(10, 11, 7), kNonEnhancing);
}

TEST(Postprocess, NoEnhancingIsIdentity) {
  Rng rng(7);
  LabelVolume l({6, 6, 6}, {});
  for (std::size_t i = 0; i < l.size(); ++i)
    l[i] = static_cast<std::uint8_t>(rng.below(3));
  EXPECT_EQ(postprocess_enhancing(l), l);
}

TEST(Postprocess, RelabelTargetIsConfigurable) {
  LabelVolume l({4, 4, 4}, {});
  l[0] = kEnhancing;
  PostprocessConfig cfg;
  cfg.relabel_target = kBackground;
  EXPECT_EQ(postprocess_enhancing(l, cfg)[0], kBackground);
  cfg.relabel_target = kEnhancing;
  EXPECT_THROW(postprocess_enhancing(l, cfg), ConfigError);
}

TEST(Postprocess, IdempotentAndTouchesOnlyEnhancing) {
  Rng rng(8);
  PostprocessConfig cfg;
  cfg.et_total_min = 40;
  cfg.et_component_min = 4;
  for (int t = 0; t < 30; ++t) {
    LabelVolume l({8, 8, 8}, {});
    const double p = 0.02 + 0.01 * t;
    for (std::size_t i = 0; i < l.size(); ++i)
      l[i] = rng.uniform() < p ? std::uint8_t{kEnhancing}
                               : static_cast<std::uint8_t>(rng.below(3));
    const auto once = postprocess_enhancing(l, cfg);
    EXPECT_EQ(postprocess_enhancing(once, cfg), once);
    for (std::size_t i = 0; i < l.size(); ++i)
      if (l[i] != kEnhancing) {
        EXPECT_EQ(once[i], l[i]);
      }
  }
}

TEST(Postprocess, RecheckAfterComponentRemoval) {
  // 203 ET voxels, 5 of them in a small component: after removal 198 < 200,
  // so a second pass would drop everything. The single pass already does.
  LabelVolume l({12, 12, 12}, {});
  for (std::size_t i = 0; i < 198; ++i)
    l[i] = kEnhancing;
  testutil::fill_box(l, 10, 10, 11, 11, 5, 9, std::uint8_t{kEnhancing});
  const auto out = postprocess_enhancing(l);
  for (auto v : out.data())
    EXPECT_NE(v, kEnhancing);
}
