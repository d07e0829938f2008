#include <gtest/gtest.h>

#include "helpers.hpp"
#include "lesion_scenarios.hpp"
#include "tumorkit/region_codec.hpp"
#include "tumorkit/seg_metrics.hpp"
#include "tumorkit/verify/brute_force.hpp"

using namespace tumorkit;
using scenarios::Box;
using scenarios::mask_of;

class LesionScenario : public ::testing::TestWithParam<scenarios::Scenario> {};

TEST_P(LesionScenario, MatchesHandComputedMean) {
  const auto &s = GetParam();
  const auto m = lesionwise_region_metrics(s.pred, s.gt, s.cfg);
  EXPECT_EQ(m.dsc, s.dsc);
  EXPECT_EQ(m.hd95, s.hd95);
}

TEST_P(LesionScenario, EntriesArePairScoresOrExactPenalties) {
  const auto &s = GetParam();
  const auto m = lesionwise_region_metrics(s.pred, s.gt, s.cfg);
  for (const auto &e : m.entries) {
    if (e.kind == LesionEntry::Kind::matched) {
      EXPECT_GE(e.dsc, 0.0);
      EXPECT_LE(e.dsc, 1.0);
      EXPECT_GE(e.hd95, 0.0);
    } else {
      EXPECT_EQ(e.dsc, s.cfg.penalty_dsc);
      EXPECT_EQ(e.hd95, s.cfg.penalty_hd95);
    }
  }
}

INSTANTIATE_TEST_SUITE_P(
    Scenarios, LesionScenario, ::testing::ValuesIn(scenarios::all()),
    [](const ::testing::TestParamInfo<scenarios::Scenario> &info) {
      return info.param.name;
    });

TEST(LesionWise, EntryBookkeeping) {
  const auto m = lesionwise_region_metrics(mask_of({scenarios::kA, scenarios::kFar}),
                                           mask_of({scenarios::kA, scenarios::kC, scenarios::kSmall}),
                                           {});
  std::size_t matched = 0, missed = 0, fp = 0;
  for (const auto &e : m.entries) {
    matched += e.kind == LesionEntry::Kind::matched;
    missed += e.kind == LesionEntry::Kind::missed;
    fp += e.kind == LesionEntry::Kind::false_positive;
  }
  EXPECT_EQ(matched, 1u);
  EXPECT_EQ(missed, 1u);
  EXPECT_EQ(fp, 1u);
  EXPECT_EQ(m.dropped_gt, 1u);
}

TEST(LesionWise, PredictionOverlappingDroppedLesionIsNotFalsePositive) {
  const auto m = lesionwise_region_metrics(
      mask_of({scenarios::kA, {10, 13, 10, 13, 10, 13}}),
      mask_of({scenarios::kA, scenarios::kSmall}), {});
  EXPECT_EQ(m.entries.size(), 1u);
  EXPECT_EQ(m.dsc, 1.0);
}

TEST(LesionWise, SingleLesionEqualsWholeMaskScore) {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    auto gt = mask_of({{4, 9, 4, 9, 4, 9}});
    auto pred = mask_of({{4 + rng.below(3), 9, 3, 8 + rng.below(3), 4, 10}});
    const auto m = lesionwise_region_metrics(pred, gt, {});
    ASSERT_EQ(m.entries.size(), 1u);
    EXPECT_EQ(m.dsc, dice(pred, gt));
    EXPECT_EQ(m.hd95, hd95(pred, gt));
  }
}

TEST(LesionWise, AddingFalsePositiveGivesKOverKPlusOne) {
  const Box lesions[] = {{0, 3, 0, 3, 0, 3}, {11, 14, 0, 3, 0, 3},
                         {0, 3, 11, 14, 0, 3}};
  const Box fp{11, 14, 11, 14, 11, 14};
  for (std::size_t k = 1; k <= 3; ++k) {
    BinaryMask gt({16, 16, 16}, {});
    for (std::size_t i = 0; i < k; ++i)
      testutil::fill_box(gt, lesions[i].z0, lesions[i].z1, lesions[i].y0,
                         lesions[i].y1, lesions[i].x0, lesions[i].x1,
                         std::uint8_t{1});
    auto pred = gt;
    testutil::fill_box(pred, fp.z0, fp.z1, fp.y0, fp.y1, fp.x0, fp.x1,
                       std::uint8_t{1});
    EXPECT_EQ(lesionwise_region_metrics(gt, gt, {}).dsc, 1.0);
    EXPECT_EQ(lesionwise_region_metrics(pred, gt, {}).dsc,
              static_cast<double>(k) / static_cast<double>(k + 1));
  }
}

TEST(LesionWise, VoxelUnitsSwitch) {
  const Spacing aniso{1.0, 1.0, 2.0};
  auto cfg = LesionWiseConfig{};
  cfg.units = DistanceUnits::voxel;
  const auto m = lesionwise_region_metrics(mask_of({{2, 5, 2, 5, 4, 7}}, aniso),
                                           mask_of({{2, 5, 2, 5, 2, 5}}, aniso), cfg);
  EXPECT_EQ(m.hd95, 2.0);
}

TEST(LesionWise, CaseWithMissingEnhancingTumor) {
  LabelVolume gt({16, 16, 16}, {});
  testutil::fill_box(gt, 2, 10, 2, 10, 2, 10, std::uint8_t{kEdema});
  testutil::fill_box(gt, 4, 7, 4, 7, 4, 7, std::uint8_t{kEnhancing});
  auto pred = gt;
  testutil::fill_box(pred, 4, 7, 4, 7, 4, 7, std::uint8_t{kNonEnhancing});
  const auto r = lesionwise_case_metrics(pred, gt, {}, "c1");
  EXPECT_EQ(r.region(Region::ET).dsc, 0.0);
  EXPECT_EQ(r.region(Region::ET).hd95, 374.0);
  EXPECT_EQ(r.region(Region::TC).dsc, 1.0);
  EXPECT_EQ(r.region(Region::WT).dsc, 1.0);
  EXPECT_EQ(r.avg.dsc, 2.0 / 3.0);
  EXPECT_EQ(r.avg.hd95, 374.0 / 3.0);
  EXPECT_EQ(r.avg.region, "Avg");
}

TEST(LesionWise, RejectsGeometryMismatch) {
  LabelVolume a({4, 4, 4}, {}), b({4, 4, 5}, {}), c({4, 4, 4}, {2.0, 1.0, 1.0});
  EXPECT_THROW(lesionwise_case_metrics(a, b), ShapeError);
  EXPECT_THROW(lesionwise_case_metrics(a, c), ShapeError);
}

TEST(LesionWise, RejectsBadConfig) {
  LabelVolume a({4, 4, 4}, {});
  LesionWiseConfig cfg;
  cfg.dilation_radius = -1;
  EXPECT_THROW(lesionwise_case_metrics(a, a, cfg), ConfigError);
  cfg = {};
  cfg.penalty_hd95 = -2.0;
  EXPECT_THROW(lesionwise_case_metrics(a, a, cfg), ConfigError);
}
