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

#include "shiftlab/swca.h"

#include <cmath>
#include <stdexcept>
#include <tuple>

#include <gtest/gtest.h>

#include "shiftlab/rng.h"

namespace shiftlab {
namespace {

FeatureGrid RandomGrid(Rng& rng, int h, int w, int c) {
  FeatureGrid g(h, w, c);
  for (double& v : g.data()) v = rng.Normal();
  return g;
}

Eigen::MatrixXd RandomMatrix(Rng& rng, int rows, int cols) {
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = rng.Normal();
  }
  return m;
}

SwcaInit Init(int channels, int window, std::uint64_t seed, double offset_std = 0.0,
              int heads = 1) {
  SwcaInit init;
  init.channels = channels;
  init.d_k = 8;
  init.heads = heads;
  init.window = window;
  init.seed = seed;
  init.offset_init_std = offset_std;
  return init;
}

// Separable hat-kernel interpolation summed over every grid node, with the
// sample point clamped into the grid first.
double HatSample(const FeatureGrid& g, double x, double y, int ch) {
  x = std::min(std::max(x, 0.0), g.w() - 1.0);
  y = std::min(std::max(y, 0.0), g.h() - 1.0);
  double v = 0.0;
  for (int j = 0; j < g.h(); ++j) {
    const double ky = std::max(0.0, 1.0 - std::abs(y - j));
    if (ky == 0.0) continue;
    for (int i = 0; i < g.w(); ++i) {
      const double kx = std::max(0.0, 1.0 - std::abs(x - i));
      v += kx * ky * g.at(j, i, ch);
    }
  }
  return v;
}

TEST(PartitionWindows, CountAndPadding) {
  Rng rng(1);
  const FeatureGrid g = RandomGrid(rng, 8, 8, 3);
  EXPECT_EQ(PartitionWindows(g, {4, 0}).windows.size(), 4u);
  EXPECT_TRUE(PartitionWindows(g, {4, 0}).masks.empty());

  const FeatureGrid odd = RandomGrid(rng, 6, 6, 3);
  const WindowPartition p = PartitionWindows(odd, {4, 0});
  EXPECT_EQ(p.padded_h, 8);
  EXPECT_EQ(p.padded_w, 8);
  EXPECT_EQ(p.windows.size(), 4u);
  const FeatureGrid back = ReverseWindows(p);
  EXPECT_EQ(back.h(), 6);
  EXPECT_EQ(back, odd);
}

TEST(PartitionWindows, RowMajorTilesWithoutShift) {
  FeatureGrid g(4, 6, 1);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 6; ++x) g.at(y, x, 0) = 10 * y + x;
  }
  const WindowPartition p = PartitionWindows(g, {2, 0});
  ASSERT_EQ(p.windows.size(), 6u);
  // Window 4 is row 1, column 1: cells (2..3, 2..3).
  EXPECT_EQ(p.windows[4](0, 0), 22);
  EXPECT_EQ(p.windows[4](1, 0), 23);
  EXPECT_EQ(p.windows[4](2, 0), 32);
  EXPECT_EQ(p.windows[4](3, 0), 33);
}

TEST(PartitionWindows, ShiftRollsCyclically) {
  FeatureGrid g(4, 4, 1);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) g.at(y, x, 0) = 10 * y + x;
  }
  const WindowPartition p = PartitionWindows(g, {2, 1});
  // First rolled window starts at (1, 1); the last wraps to row/col 0.
  EXPECT_EQ(p.windows[0](0, 0), 11);
  EXPECT_EQ(p.windows[3](0, 0), 33);
  EXPECT_EQ(p.windows[3](3, 0), 0);
  // Tokens from opposite sides of the wrap may not attend to each other.
  ASSERT_EQ(p.masks.size(), 4u);
  EXPECT_EQ(p.masks[3](0, 0), 0.0);
  EXPECT_TRUE(std::isinf(p.masks[3](0, 3)));
  EXPECT_TRUE(std::isinf(p.masks[3](0, 1)));
  EXPECT_EQ(p.masks[0](0, 3), 0.0);
}

TEST(PartitionWindows, MaskSeparatesWrappedContent) {
  for (const auto& [h, w, win] : {std::tuple{8, 8, 4}, std::tuple{10, 7, 4}, std::tuple{16, 16, 8}}) {
    const WindowPartition p = PartitionWindows(FeatureGrid(h, w, 1), {win, win / 2});
    const int shift = win / 2;
    for (int wy = 0; wy < p.windows_y(); ++wy) {
      for (int wx = 0; wx < p.windows_x(); ++wx) {
        const auto& mask = p.masks[static_cast<std::size_t>(wy * p.windows_x() + wx)];
        for (int i = 0; i < win * win; ++i) {
          for (int j = 0; j < win * win; ++j) {
            const auto wrapped = [&](int t) {
              const int ry = wy * win + t / win;
              const int rx = wx * win + t % win;
              return std::pair{ry + shift >= p.padded_h, rx + shift >= p.padded_w};
            };
            EXPECT_EQ(mask(i, j) == 0.0, wrapped(i) == wrapped(j));
          }
        }
      }
    }
  }
}

TEST(PartitionWindows, RoundTripBitExact) {
  Rng rng(2);
  for (int t = 0; t < 60; ++t) {
    const int h = 1 + static_cast<int>(rng.Below(20));
    const int w = 1 + static_cast<int>(rng.Below(20));
    const int win = 1 + static_cast<int>(rng.Below(8));
    const int shift = static_cast<int>(rng.Below(static_cast<std::uint64_t>(win)));
    const FeatureGrid g = RandomGrid(rng, h, w, 1 + static_cast<int>(rng.Below(4)));
    const WindowPartition p = PartitionWindows(g, {win, shift});
    EXPECT_EQ(p.padded_h % win, 0);
    EXPECT_EQ(p.windows.size(),
              static_cast<std::size_t>(p.padded_h / win * (p.padded_w / win)));
    EXPECT_EQ(ReverseWindows(p), g) << h << "x" << w << " window " << win << " shift " << shift;
  }
}

TEST(PartitionWindows, RejectsBadLayout) {
  const FeatureGrid g(4, 4, 1);
  EXPECT_THROW(PartitionWindows(g, {0, 0}), std::invalid_argument);
  EXPECT_THROW(PartitionWindows(g, {4, 4}), std::invalid_argument);
}

TEST(CrossAttention, SingleTokenWindowReturnsValue) {
  const SwcaParams params = MakeSwcaParams(Init(4, 1, 3));
  const AttentionParams& a = params.blocks[0].attention;
  Rng rng(3);
  const Eigen::MatrixXd xr = RandomMatrix(rng, 1, 4);
  const Eigen::MatrixXd xs = RandomMatrix(rng, 1, 4);
  const CrossAttentionResult r = CrossAttention(xr, xs, a);
  EXPECT_EQ(r.attn_r2s[0](0, 0), 1.0);
  const Eigen::MatrixXd vr = a.reference.v.Apply(a.reference.norm.Apply(xr));
  const Eigen::MatrixXd vs = a.sensed.v.Apply(a.sensed.norm.Apply(xs));
  EXPECT_LT((r.r2s - vr).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((r.s2r - vs).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(CrossAttention, EqualKeysGiveMeanOfValues) {
  SwcaParams params = MakeSwcaParams(Init(4, 3, 4));
  AttentionParams& a = params.blocks[0].attention;
  a.reference.k.weight.setZero();
  a.reference.k.bias.setConstant(0.7);
  a.reference.position_bias[0].setZero();
  Rng rng(4);
  const Eigen::MatrixXd xr = RandomMatrix(rng, 9, 4);
  const Eigen::MatrixXd xs = RandomMatrix(rng, 9, 4);
  const CrossAttentionResult r = CrossAttention(xr, xs, a);
  const Eigen::MatrixXd vr = a.reference.v.Apply(a.reference.norm.Apply(xr));
  const Eigen::RowVectorXd mean = vr.colwise().mean();
  for (int i = 0; i < 9; ++i) {
    EXPECT_LT((r.r2s.row(i) - mean).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((r.attn_r2s[0].row(i).array() - 1.0 / 9).abs().maxCoeff(), 1e-15);
  }
}

TEST(CrossAttention, RowsAreStochastic) {
  Rng rng(5);
  for (int heads : {1, 2, 4}) {
    const SwcaParams params = MakeSwcaParams(Init(6, 4, 5 + heads, 0.0, heads));
    const AttentionParams& a = params.blocks[0].attention;
    const FeatureGrid g = RandomGrid(rng, 8, 8, 6);
    const WindowPartition p = PartitionWindows(g, {4, 2});
    for (std::size_t w = 0; w < p.windows.size(); ++w) {
      const Eigen::MatrixXd xr = 5.0 * RandomMatrix(rng, 16, 6);
      const Eigen::MatrixXd xs = 5.0 * RandomMatrix(rng, 16, 6);
      const auto r = CrossAttention(xr, xs, a, p.masks[w]);
      for (int h = 0; h < heads; ++h) {
        for (int i = 0; i < 16; ++i) {
          EXPECT_NEAR(r.attn_r2s[h].row(i).sum(), 1.0, 1e-6);
          EXPECT_NEAR(r.attn_s2r[h].row(i).sum(), 1.0, 1e-6);
          for (int j = 0; j < 16; ++j) {
            if (std::isinf(p.masks[w](i, j))) EXPECT_EQ(r.attn_r2s[h](i, j), 0.0);
          }
        }
      }
    }
  }
}

TEST(CrossAttention, MatchesDirectFormula) {
  const SwcaParams params = MakeSwcaParams(Init(5, 2, 6));
  const AttentionParams& a = params.blocks[1].attention;
  Rng rng(6);
  const Eigen::MatrixXd xr = RandomMatrix(rng, 4, 5);
  const Eigen::MatrixXd xs = RandomMatrix(rng, 4, 5);
  const auto r = CrossAttention(xr, xs, a);
  const auto norm = [](const Eigen::MatrixXd& x, int i) {
    const double mean = x.row(i).mean();
    double var = 0.0;
    for (int c = 0; c < x.cols(); ++c) var += (x(i, c) - mean) * (x(i, c) - mean);
    var /= x.cols();
    return Eigen::RowVectorXd((x.row(i).array() - mean) / std::sqrt(var + 1e-5));
  };
  for (int i = 0; i < 4; ++i) {
    const Eigen::RowVectorXd q = norm(xs, i) * a.sensed.q.weight;
    Eigen::VectorXd logits(4);
    for (int j = 0; j < 4; ++j) {
      const Eigen::RowVectorXd k = norm(xr, j) * a.reference.k.weight;
      const int dy = i / 2 - j / 2 + 1;
      const int dx = i % 2 - j % 2 + 1;
      logits(j) = q.dot(k) / std::sqrt(8.0) + a.reference.position_bias[0](dy * 3 + dx);
    }
    const Eigen::VectorXd p = logits.array().exp() / logits.array().exp().sum();
    Eigen::RowVectorXd expect = Eigen::RowVectorXd::Zero(8);
    for (int j = 0; j < 4; ++j) expect += p(j) * (norm(xr, j) * a.reference.v.weight);
    EXPECT_LT((r.r2s.row(i) - expect).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(PredictOffsets, ZeroWeightsAndBias) {
  Rng rng(7);
  const FeatureGrid g = RandomGrid(rng, 5, 7, 2);
  const WindowPartition p = PartitionWindows(g, {4, 0});
  std::vector<Eigen::MatrixXd> r2s, s2r;
  for (std::size_t i = 0; i < p.windows.size(); ++i) {
    r2s.push_back(RandomMatrix(rng, 16, 3));
    s2r.push_back(RandomMatrix(rng, 16, 3));
  }
  OffsetPredictor op{Linear{Eigen::MatrixXd::Zero(6, 2), Eigen::RowVectorXd::Zero(2)}};
  const OffsetField zero = PredictOffsets(r2s, s2r, op, p);
  EXPECT_EQ(zero, OffsetField(5, 7, 2));
  op.map.bias << 1.0, 0.0;
  const OffsetField bias = PredictOffsets(r2s, s2r, op, p);
  for (int y = 0; y < 5; ++y) {
    for (int x = 0; x < 7; ++x) {
      EXPECT_EQ(bias.at(y, x, 0), 1.0);
      EXPECT_EQ(bias.at(y, x, 1), 0.0);
    }
  }
}

TEST(PredictOffsets, MatchesDenseOracle) {
  Rng rng(8);
  for (int shift : {0, 2}) {
    const int h = 10, w = 9, win = 4, dk = 3;
    const FeatureGrid g(h, w, 1);
    const WindowPartition p = PartitionWindows(g, {win, shift});
    std::vector<Eigen::MatrixXd> r2s, s2r;
    for (std::size_t i = 0; i < p.windows.size(); ++i) {
      r2s.push_back(RandomMatrix(rng, win * win, dk));
      s2r.push_back(RandomMatrix(rng, win * win, dk));
    }
    const OffsetPredictor op{Linear{RandomMatrix(rng, 2 * dk, 2), RandomMatrix(rng, 1, 2)}};
    const OffsetField f = PredictOffsets(r2s, s2r, op, p);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        // Position of cell (y, x) in the rolled, padded grid.
        const int ry = ((y - shift) % p.padded_h + p.padded_h) % p.padded_h;
        const int rx = ((x - shift) % p.padded_w + p.padded_w) % p.padded_w;
        const std::size_t win_idx = static_cast<std::size_t>(ry / win * (p.padded_w / win) + rx / win);
        const int tok = ry % win * win + rx % win;
        for (int o = 0; o < 2; ++o) {
          double v = op.map.bias(o);
          for (int k = 0; k < dk; ++k) {
            v += r2s[win_idx](tok, k) * op.map.weight(k, o);
            v += s2r[win_idx](tok, k) * op.map.weight(dk + k, o);
          }
          EXPECT_NEAR(f.at(y, x, o), v, 1e-6);
        }
      }
    }
  }
}

TEST(Warp, ZeroOffsetIsIdentity) {
  Rng rng(9);
  const FeatureGrid g = RandomGrid(rng, 7, 11, 3);
  EXPECT_EQ(Warp(g, OffsetField(7, 11, 2)), g);
}

TEST(Warp, RampExamples) {
  FeatureGrid ramp(6, 8, 1);
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 8; ++x) ramp.at(y, x, 0) = x;
  }
  OffsetField one(6, 8, 2);
  OffsetField half(6, 8, 2);
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 8; ++x) {
      one.at(y, x, 0) = 1.0;
      half.at(y, x, 0) = 0.5;
    }
  }
  const FeatureGrid a = Warp(ramp, one);
  const FeatureGrid b = Warp(ramp, half);
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 7; ++x) {
      EXPECT_NEAR(a.at(y, x, 0), x + 1.0, 1e-12);
      EXPECT_NEAR(b.at(y, x, 0), x + 0.5, 1e-12);
    }
    EXPECT_EQ(a.at(y, 7, 0), 7.0);  // clamped at the border
  }
}

TEST(Warp, MatchesHatKernelOracle) {
  Rng rng(10);
  const FeatureGrid g = RandomGrid(rng, 12, 15, 2);
  OffsetField off(12, 15, 2);
  for (double& v : off.data()) v = rng.Uniform(-3.0, 3.0);
  const FeatureGrid out = Warp(g, off);
  for (int y = 0; y < 12; ++y) {
    for (int x = 0; x < 15; ++x) {
      for (int ch = 0; ch < 2; ++ch) {
        EXPECT_NEAR(out.at(y, x, ch),
                    HatSample(g, x + off.at(y, x, 0), y + off.at(y, x, 1), ch), 1e-5);
      }
    }
  }
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.Uniform(-2.0, 17.0);
    const double y = rng.Uniform(-2.0, 14.0);
    EXPECT_NEAR(SampleBilinear(g, x, y, i % 2), HatSample(g, x, y, i % 2), 1e-5);
  }
}

TEST(Warp, LinearInFeatures) {
  Rng rng(11);
  const FeatureGrid g1 = RandomGrid(rng, 9, 9, 2);
  const FeatureGrid g2 = RandomGrid(rng, 9, 9, 2);
  OffsetField off(9, 9, 2);
  for (double& v : off.data()) v = rng.Uniform(-2.0, 2.0);
  FeatureGrid mix(9, 9, 2);
  for (std::size_t i = 0; i < mix.size(); ++i) {
    mix.data()[i] = 2.5 * g1.data()[i] - 0.75 * g2.data()[i];
  }
  const FeatureGrid lhs = Warp(mix, off);
  const FeatureGrid w1 = Warp(g1, off);
  const FeatureGrid w2 = Warp(g2, off);
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    EXPECT_NEAR(lhs.data()[i], 2.5 * w1.data()[i] - 0.75 * w2.data()[i], 1e-12);
  }
}

TEST(Warp, RejectsBadOffsets) {
  const FeatureGrid g(4, 4, 1);
  EXPECT_THROW(Warp(g, OffsetField(4, 5, 2)), std::invalid_argument);
  OffsetField nan(4, 4, 2);
  nan.at(1, 1, 0) = NAN;
  EXPECT_THROW(Warp(g, nan), std::invalid_argument);
}

TEST(SwcaAlign, ZeroInitializedIsExactIdentity) {
  Rng rng(12);
  for (const auto& [h, w] : {std::pair{16, 16}, std::pair{13, 21}, std::pair{5, 3}}) {
    const FeatureGrid fr = RandomGrid(rng, h, w, 6);
    const FeatureGrid fs = RandomGrid(rng, h, w, 6);
    const SwcaOutput out = SwcaAlign(fr, fs, MakeSwcaParams(Init(6, 8, 12)));
    EXPECT_EQ(out.aligned, fs);
    EXPECT_EQ(out.offsets[0], OffsetField(h, w, 2));
  }
}

TEST(SwcaAlign, ShapeReferenceAndDeterminism) {
  Rng rng(13);
  for (int t = 0; t < 6; ++t) {
    const int h = 3 + static_cast<int>(rng.Below(14));
    const int w = 3 + static_cast<int>(rng.Below(14));
    const FeatureGrid fr = RandomGrid(rng, h, w, 4);
    const FeatureGrid fs = RandomGrid(rng, h, w, 4);
    const FeatureGrid fr_copy = fr;
    const SwcaParams params = MakeSwcaParams(Init(4, 4, 100 + t, 0.3));
    const SwcaOutput a = SwcaAlign(fr, fs, params);
    const SwcaOutput b = SwcaAlign(fr, fs, MakeSwcaParams(Init(4, 4, 100 + t, 0.3)));
    EXPECT_TRUE(a.aligned.SameShape(fs));
    EXPECT_EQ(a.aligned, b.aligned);
    EXPECT_EQ(a.offsets[1], b.offsets[1]);
    EXPECT_EQ(fr, fr_copy);
  }
  EXPECT_THROW(SwcaAlign(FeatureGrid(4, 4, 4), FeatureGrid(4, 5, 4),
                         MakeSwcaParams(Init(4, 4, 1))),
               std::invalid_argument);
}

TEST(SwcaAlign, ZeroSecondBlockEqualsFirstBlockAlone) {
  Rng rng(14);
  const FeatureGrid fr = RandomGrid(rng, 12, 10, 4);
  const FeatureGrid fs = RandomGrid(rng, 12, 10, 4);
  SwcaParams params = MakeSwcaParams(Init(4, 4, 14, 0.5));
  params.blocks[1].offsets.map.weight.setZero();
  params.blocks[1].offsets.map.bias.setZero();
  const SwcaOutput out = SwcaAlign(fr, fs, params);
  const OffsetField first = SwcaBlockOffsets(fr, fs, params.blocks[0], {4, 0});
  EXPECT_EQ(out.aligned, Warp(fs, first));
  EXPECT_GT(first.data()[0] * first.data()[0], 0.0);
}

}  // namespace
}  // namespace shiftlab
