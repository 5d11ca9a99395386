/* Copyright 2026 The ShiftLab Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "shiftlab/cbc.h"

#include <cmath>
#include <limits>
#include <stdexcept>

#include <gtest/gtest.h>

#include "shiftlab/rng.h"

namespace shiftlab {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double Logit(double p) { return std::log(p / (1.0 - p)); }

Sample Positive(const BoxH& pred, const BoxH& anchor, double prob, int label = 0,
                int categories = 1) {
  Sample s{pred, anchor, std::vector<double>(categories, -10.0), label};
  s.logits[static_cast<std::size_t>(label)] = Logit(prob);
  return s;
}

Bag BagWithScores(std::size_t gt, std::initializer_list<double> scores,
                  Point center = {0, 0}) {
  Bag bag{gt, {}};
  for (double sc : scores) {
    const BoxH b(center.x, center.y, 2, 2);
    bag.members.push_back({Positive(b, b, sc), sc, 1.0});
  }
  return bag;
}

TEST(Hlq, Examples) {
  QafConfig cfg;
  cfg.similarity = Similarity::IoU();
  const BoxH gt(0, 0, 10, 10);
  // IoU of a horizontal shift d on 10x10 boxes is (10 - d) / (10 + d).
  const Sample s{gt.Translated(2.5, 0), gt.Translated(70.0 / 13.0, 0), {0.0}, 0};
  EXPECT_NEAR(cfg.similarity(s.anchor, gt), 0.3, 1e-12);
  EXPECT_NEAR(Hlq(s, gt, cfg), 0.6, 1e-12);
  EXPECT_EQ(Hlq(Sample{gt, gt, {0.0}, 0}, gt, cfg), 1.0);
  const Sample far{gt.Translated(50, 0), gt.Translated(0, 60), {0.0}, 0};
  EXPECT_EQ(Hlq(far, gt, cfg), 0.0);
}

TEST(Qaf, Examples) {
  EXPECT_NEAR(QafBlend(0.64, 0.25, 0.5), 0.4, 1e-15);
  EXPECT_NEAR(std::max(QafBlend(0.81, 0.09, 0.5), QafBlend(0.25, 0.49, 0.5)), 0.35, 1e-15);
  EXPECT_THROW(QafBlend(0.5, 0.5, 1.5), std::invalid_argument);

  QafConfig cfg;
  cfg.similarity = Similarity::IoU();
  const LabeledBox gt{BoxH(0, 0, 10, 10), 0};
  // Anchor equal to the GT gives HLQ 1, so QAF is sqrt(prob).
  const Sample in = Positive(BoxH(3, 0, 10, 10), gt.box, 0.25);
  EXPECT_NEAR(QafPair(in, gt, cfg), 0.5, 1e-12);
  // Anchor center outside the GT closes the gate.
  const Sample out = Positive(gt.box, BoxH(6, 0, 10, 10), 0.99);
  EXPECT_FALSE(SpatialPrior(out, gt.box));
  EXPECT_EQ(QafPair(out, gt, cfg), 0.0);
  const std::vector<LabeledBox> gts{gt};
  EXPECT_EQ(Qaf(out, gts, cfg), 0.0);
  EXPECT_THROW(Qaf(in, std::span<const LabeledBox>(), cfg), std::invalid_argument);
}

TEST(Qaf, MaxOverGroundTruths) {
  QafConfig cfg;
  cfg.similarity = Similarity::IoU();
  // Two overlapping GTs of different categories; the anchor is inside both.
  const std::vector<LabeledBox> gts{{BoxH(0, 0, 10, 10), 0}, {BoxH(2, 0, 10, 10), 1}};
  Sample s{BoxH(1, 0, 10, 10), BoxH(1, 0, 10, 10), {Logit(0.09), Logit(0.49)}, 0};
  const double q0 = QafPair(s, gts[0], cfg);
  const double q1 = QafPair(s, gts[1], cfg);
  EXPECT_NEAR(q0, std::sqrt(9.0 / 11.0 * 0.09), 1e-12);
  EXPECT_NEAR(q1, std::sqrt(9.0 / 11.0 * 0.49), 1e-12);
  EXPECT_EQ(Qaf(s, gts, cfg), std::max(q0, q1));
}

TEST(Qaf, BoundedOnRandomSamples) {
  Rng rng(1);
  for (const auto sim : {Similarity::IoU(), Similarity::GIoU(), Similarity::GaussianWasserstein()}) {
    QafConfig cfg;
    cfg.similarity = sim;
    for (int i = 0; i < 2000; ++i) {
      cfg.alpha = rng.Uniform();
      const LabeledBox gt{BoxH(rng.Uniform(0, 20), rng.Uniform(0, 20), rng.Uniform(1, 8), rng.Uniform(1, 8)), 0};
      const Sample s = Positive(BoxH(rng.Uniform(0, 20), rng.Uniform(0, 20), rng.Uniform(1, 8), rng.Uniform(1, 8)),
                                BoxH(rng.Uniform(0, 20), rng.Uniform(0, 20), rng.Uniform(1, 8), rng.Uniform(1, 8)),
                                rng.Uniform(0.001, 0.999));
      const double q = QafPair(s, gt, cfg);
      EXPECT_GE(q, 0.0);
      EXPECT_LE(q, 1.0);
      if (!SpatialPrior(s, gt.box)) EXPECT_EQ(q, 0.0);
    }
  }
}

TEST(SampleScore, Examples) {
  const BoxH b(0, 0, 1, 1);
  EXPECT_EQ(SampleScore(Sample{b, b, {0.0}, 0}), 0.5);
  EXPECT_EQ(SampleScore(Sample{b, b, {5.0}, std::nullopt}), 0.0);
  EXPECT_NEAR(SampleScore(Sample{b, b, {2.0}, 0}), 0.8808, 5e-5);
  EXPECT_DOUBLE_EQ(SampleScore(Sample{b, b, {2.0}, 0}), 1.0 / (1.0 + std::exp(-2.0)));
  EXPECT_EQ(Sigmoid(-800.0), 0.0);
  EXPECT_EQ(Sigmoid(800.0), 1.0);
}

TEST(BuildBags, TopQByQaf) {
  QafConfig cfg;
  cfg.similarity = Similarity::IoU();
  const BoxH gt(0, 0, 10, 10);
  const auto state = CorrectionState::Initial({{gt, 0}}, 24, 0.5);
  // With the anchor on the GT, QAF = sqrt(prob).
  const std::vector<Sample> samples{Positive(gt, gt, 0.16),
                                    Positive(gt, gt.Translated(8, 0), 0.9),
                                    Positive(gt, gt, 0.49)};
  const auto bags = BuildBags(samples, state, cfg, 2);
  ASSERT_EQ(bags.size(), 1u);
  ASSERT_EQ(bags[0].members.size(), 2u);
  EXPECT_NEAR(bags[0].members[0].qaf, 0.7, 1e-12);
  EXPECT_NEAR(bags[0].members[1].qaf, 0.4, 1e-12);
  EXPECT_EQ(bags[0].members[0].score, SampleScore(samples[2]));
}

TEST(BuildBags, GatedOutGivesEmptyBag) {
  QafConfig cfg;
  const BoxH gt(0, 0, 10, 10);
  const auto state = CorrectionState::Initial({{gt, 0}}, 24, 0.5);
  const std::vector<Sample> samples{Positive(gt, gt.Translated(0, 7), 0.9),
                                    Positive(gt, gt.Translated(-9, 0), 0.9)};
  const auto bags = BuildBags(samples, state, cfg, 7);
  ASSERT_EQ(bags.size(), 1u);
  EXPECT_TRUE(bags[0].members.empty());
}

TEST(BuildBags, BackgroundAndOtherCategoriesExcluded) {
  QafConfig cfg;
  const BoxH gt(0, 0, 10, 10);
  const auto state = CorrectionState::Initial({{gt, 0}}, 24, 0.5);
  Sample bg = Positive(gt, gt, 0.9, 0, 2);
  bg.label = std::nullopt;
  const std::vector<Sample> samples{bg, Positive(gt, gt, 0.9, 1, 2)};
  EXPECT_TRUE(BuildBags(samples, state, cfg, 7)[0].members.empty());
}

TEST(BuildBags, MatchesBruteForceAssignment) {
  QafConfig cfg;  // GW similarity
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const std::vector<LabeledBox> gts{{BoxH(20, 20, 12, 10), 0},
                                      {BoxH(24, 22, 9, 14), 0}};
    std::vector<Sample> samples;
    for (int i = 0; i < 10; ++i) {
      const BoxH pred(rng.Uniform(10, 35), rng.Uniform(10, 35), rng.Uniform(6, 14), rng.Uniform(6, 14));
      const BoxH anchor(rng.Uniform(12, 30), rng.Uniform(12, 30), rng.Uniform(6, 14), rng.Uniform(6, 14));
      samples.push_back(Positive(pred, anchor, rng.Uniform(0.05, 0.95)));
    }
    auto state = CorrectionState::Initial(gts, 24, 0.5);
    const auto bags = BuildBags(samples, state, cfg, samples.size());

    // Oracle from the formulas directly.
    std::vector<int> expected(samples.size(), -1);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& s = samples[i];
      const double prob = 1.0 / (1.0 + std::exp(-s.logits[0]));
      double best = 0.0;
      for (std::size_t j = 0; j < gts.size(); ++j) {
        const BoxH& g = gts[j].box;
        const bool inside = std::abs(s.anchor.cx() - g.cx()) <= g.w() / 2 &&
                            std::abs(s.anchor.cy() - g.cy()) <= g.h() / 2;
        if (!inside) continue;
        const double hlq = std::max(GwSimilarity(s.anchor, g), GwSimilarity(s.pred, g));
        const double q = std::sqrt(hlq * prob);
        if (q > best + 1e-12) {
          best = q;
          expected[i] = static_cast<int>(j);
        }
      }
    }
    for (std::size_t j = 0; j < gts.size(); ++j) {
      std::vector<bool> in(samples.size(), false);
      for (const auto& m : bags[j].members) {
        for (std::size_t i = 0; i < samples.size(); ++i) {
          if (m.sample.pred == samples[i].pred && m.sample.anchor == samples[i].anchor) in[i] = true;
        }
      }
      for (std::size_t i = 0; i < samples.size(); ++i) {
        EXPECT_EQ(in[i], expected[i] == static_cast<int>(j)) << "seed " << seed << " sample " << i;
      }
      for (std::size_t k = 1; k < bags[j].members.size(); ++k) {
        EXPECT_GE(bags[j].members[k - 1].qaf, bags[j].members[k].qaf);
      }
    }
  }
}

TEST(BatchThreshold, Examples) {
  const std::vector<double> a{0.2, 0.4, 0.6};
  EXPECT_NEAR(BatchThreshold(a), 0.4 + std::sqrt(0.08 / 3.0), 1e-15);
  EXPECT_NEAR(BatchThreshold(a), 0.5633, 5e-5);
  const std::vector<double> one{0.37};
  EXPECT_EQ(BatchThreshold(one), 0.37);
  const std::vector<double> same{0.25, 0.25, 0.25, 0.25};
  EXPECT_EQ(BatchThreshold(same), 0.25);
  EXPECT_THROW(BatchThreshold(std::vector<double>{}), std::invalid_argument);
}

TEST(PoolScores, BackgroundOnlyWithAllPool) {
  const std::vector<Bag> bags{BagWithScores(0, {0.6, 0.8}), BagWithScores(1, {0.4})};
  const BoxH b(0, 0, 2, 2);
  const std::vector<Sample> samples{Positive(b, b, 0.6), Sample{b, b, {3.0}, std::nullopt},
                                    Sample{b, b, {-1.0}, std::nullopt}};
  EXPECT_EQ(PoolScores(bags, samples, ThresholdPool::kPositives),
            (std::vector<double>{0.6, 0.8, 0.4}));
  EXPECT_EQ(PoolScores(bags, samples, ThresholdPool::kAll),
            (std::vector<double>{0.6, 0.8, 0.4, 0.0, 0.0}));
  // Zeros in the pool pull the threshold down.
  EXPECT_LT(BatchThreshold(PoolScores(bags, samples, ThresholdPool::kAll)),
            BatchThreshold(PoolScores(bags, samples, ThresholdPool::kPositives)));
  EXPECT_EQ(ParseThresholdPool("all"), ThresholdPool::kAll);
  EXPECT_STREQ(ThresholdPoolName(ThresholdPool::kPositives), "positives");
  EXPECT_THROW(ParseThresholdPool("some"), std::invalid_argument);
}

TEST(SelectTop1, Examples) {
  EXPECT_EQ(SelectTop1(BagWithScores(0, {0.3, 0.7}), 0.5), 1u);
  EXPECT_FALSE(SelectTop1(BagWithScores(0, {0.3, 0.4}), 0.5));
  EXPECT_EQ(SelectTop1(BagWithScores(0, {0.6, 0.9, 0.9}), kNegInf), 1u);
  EXPECT_FALSE(SelectTop1(BagWithScores(0, {}), kNegInf));
  // Strictly above: a score equal to the threshold does not qualify.
  EXPECT_FALSE(SelectTop1(BagWithScores(0, {0.5}), 0.5));
}

TEST(CorrectEpoch, Examples) {
  auto state = CorrectionState::Initial({{BoxH(6, 2, 3, 4), 0}}, 24, 0.5);
  state.epoch = 11;
  const std::vector<Bag> bags{BagWithScores(0, {0.8}, {10, 10})};
  const auto next = CorrectEpoch(state, bags, kNegInf);
  EXPECT_EQ(next.sensed_gts[0].box, BoxH(10, 10, 3, 4));
  EXPECT_EQ(next.epoch, 12);

  state.epoch = 0;
  EXPECT_EQ(CorrectEpoch(state, bags, kNegInf).sensed_gts, state.sensed_gts);

  state.epoch = 11;
  const std::vector<Bag> empty{Bag{0, {}}};
  EXPECT_EQ(CorrectEpoch(state, empty, kNegInf).sensed_gts, state.sensed_gts);
}

TEST(CorrectEpoch, RejectsMismatchedBags) {
  const auto state = CorrectionState::Initial({{BoxH(0, 0, 1, 1), 0}, {BoxH(5, 5, 1, 1), 0}}, 24, 0.5);
  EXPECT_THROW(CorrectEpoch(state, std::vector<Bag>{Bag{0, {}}}, kNegInf), std::invalid_argument);
  EXPECT_THROW(CorrectEpoch(state, std::vector<Bag>{Bag{1, {}}, Bag{0, {}}}, kNegInf),
               std::invalid_argument);
}

TEST(CorrectEpoch, ConvergesToFixedSampleAtFirstFullBeta) {
  const Point p{13.25, -4.5};
  auto state = CorrectionState::Initial({{BoxH(0, 0, 5, 7), 0}}, 24, 0.5);
  for (int k = 0; k < 24; ++k) {
    state = CorrectEpoch(state, std::vector<Bag>{BagWithScores(0, {0.9}, p)}, kNegInf);
    const bool reached = state.sensed_gts[0].box.center() == p;
    EXPECT_EQ(reached, k >= 11) << "epoch " << k;
    EXPECT_EQ(state.sensed_gts[0].box.w(), 5.0);
    EXPECT_EQ(state.sensed_gts[0].box.h(), 7.0);
  }
}

TEST(CorrectEpoch, IndexSizeAndThresholdInvariants) {
  QafConfig cfg;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::vector<LabeledBox> gts;
    for (int j = 0; j < 6; ++j) {
      gts.push_back({BoxH(40.0 * j, rng.Uniform(0, 30), rng.Uniform(4, 12), rng.Uniform(4, 12)),
                     static_cast<int>(rng.Below(2))});
    }
    auto state = CorrectionState::Initial(gts, 12, 0.5);
    for (int k = 0; k < 12; ++k) {
      std::vector<Sample> samples;
      for (const auto& g : state.sensed_gts) {
        for (int s = 0; s < 5; ++s) {
          const BoxH pred = g.box.Translated(rng.Normal(0, 2), rng.Normal(0, 2));
          const BoxH anchor = g.box.Translated(rng.Uniform(-0.4, 0.4) * g.box.w(),
                                               rng.Uniform(-0.4, 0.4) * g.box.h());
          samples.push_back(Positive(pred, anchor, rng.Uniform(0.05, 0.95), g.category, 2));
        }
      }
      const auto bags = BuildBags(samples, state, cfg, 3);
      const double thr = BatchThreshold(PoolScores(bags));
      for (const auto& bag : bags) {
        if (const auto pick = SelectTop1(bag, thr)) {
          EXPECT_GT(bag.members[*pick].score, thr);
        }
      }
      const auto next = CorrectEpoch(state, bags, thr);
      EXPECT_EQ(next.sensed_gts, CorrectEpoch(state, bags, thr).sensed_gts);
      ASSERT_EQ(next.sensed_gts.size(), gts.size());
      for (std::size_t j = 0; j < gts.size(); ++j) {
        EXPECT_EQ(next.sensed_gts[j].box.w(), gts[j].box.w());
        EXPECT_EQ(next.sensed_gts[j].box.h(), gts[j].box.h());
        EXPECT_EQ(next.sensed_gts[j].category, gts[j].category);
        if (!SelectTop1(bags[j], thr)) EXPECT_EQ(next.sensed_gts[j], state.sensed_gts[j]);
      }
      EXPECT_EQ(next.reference_gts, gts);
      state = next;
    }
  }
}

TEST(Ema, Examples) {
  EmaState s{{0.0}, 0.9997};
  const std::vector<double> one{1.0};
  EXPECT_NEAR(EmaUpdate(s, one).teacher[0], 0.0003, 1e-16);
  EXPECT_EQ(EmaUpdate(EmaState{{3.0, -2.0}, 0.0}, std::vector<double>{1.0, 5.0}).teacher,
            (std::vector<double>{1.0, 5.0}));
  EXPECT_THROW(EmaUpdate(s, std::vector<double>{1.0, 2.0}), std::invalid_argument);
  EXPECT_THROW(EmaUpdate(EmaState{{0.0}, 1.5}, one), std::invalid_argument);
}

TEST(Ema, ClosedFormAndGeometricDecay) {
  EmaState s{{0.0, 4.0}, 0.9997};
  const std::vector<double> target{1.0, -2.0};
  double prev_gap = 6.0;
  for (int n = 1; n <= 10000; ++n) {
    EmaUpdateInPlace(s, target);
    EXPECT_NEAR(s.teacher[0], 1.0 - std::pow(0.9997, n), 1e-9);
    const double gap = std::abs(s.teacher[1] - target[1]);
    EXPECT_NEAR(gap / prev_gap, 0.9997, 1e-9);
    prev_gap = gap;
  }
}

TEST(ModalityLosses, Examples) {
  const BoxH b(5, 5, 2, 3);
  const std::vector<Sample> one{Sample{b, b, {0.0}, 0}};
  const std::vector<std::optional<BoxH>> t1{b};
  const auto l = ModalityLosses(one, t1);
  EXPECT_NEAR(l.cls, std::log(2.0), 1e-15);
  EXPECT_EQ(l.reg, 0.0);

  const std::vector<Sample> bg{Sample{b, b, {1.5}, std::nullopt},
                               Sample{b, b, {-0.5}, std::nullopt}};
  const std::vector<std::optional<BoxH>> none(2);
  const auto lb = ModalityLosses(bg, none);
  EXPECT_EQ(lb.reg, 0.0);
  const double expected = (-std::log(1 - Sigmoid(1.5)) - std::log(1 - Sigmoid(-0.5))) / 2;
  EXPECT_NEAR(lb.cls, expected, 1e-12);

  // L1 averaged over box parameters of positives.
  const std::vector<Sample> off{Sample{b.Translated(1, -2), b, {0.0}, 0}};
  EXPECT_NEAR(ModalityLosses(off, t1).reg, 0.75, 1e-15);
  EXPECT_THROW(ModalityLosses(one, none), std::invalid_argument);
}

TEST(CbcLoss, Examples) {
  EXPECT_NEAR(CbcLoss(1.0, 0.5, 0.2, 0.4), 1.05, 1e-15);
  EXPECT_EQ(CbcLoss(0, 0, 0, 0), 0.0);
  EXPECT_EQ(CbcLoss(0.8, 0.0, 0.6, 0.0), 0.7);
}

TEST(SelectionMode, Names) {
  EXPECT_EQ(ParseSelectionMode("top1"), SelectionMode::kTop1);
  EXPECT_EQ(ParseSelectionMode("threshold+top1"), SelectionMode::kThresholdTop1);
  EXPECT_STREQ(SelectionModeName(SelectionMode::kThresholdTop1), "threshold+top1");
  EXPECT_THROW(ParseSelectionMode("top2"), std::invalid_argument);
}

}  // namespace
}  // namespace shiftlab
