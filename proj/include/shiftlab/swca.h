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

#ifndef SHIFTLAB_SWCA_H_
#define SHIFTLAB_SWCA_H_

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace shiftlab {

// H x W x C feature map, channels fastest.
class FeatureGrid {
 public:
  FeatureGrid() = default;
  FeatureGrid(int h, int w, int c, double fill = 0.0);

  int h() const { return h_; }
  int w() const { return w_; }
  int c() const { return c_; }
  std::size_t size() const { return data_.size(); }

  double& at(int y, int x, int ch) { return data_[Index(y, x, ch)]; }
  double at(int y, int x, int ch) const { return data_[Index(y, x, ch)]; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  bool SameShape(const FeatureGrid& o) const {
    return h_ == o.h_ && w_ == o.w_ && c_ == o.c_;
  }
  friend bool operator==(const FeatureGrid&, const FeatureGrid&) = default;

 private:
  std::size_t Index(int y, int x, int ch) const {
    return (static_cast<std::size_t>(y) * w_ + x) * c_ + ch;
  }

  int h_ = 0;
  int w_ = 0;
  int c_ = 0;
  std::vector<double> data_;
};

// Per-cell (dx, dy) displacement in feature-cell units.
using OffsetField = FeatureGrid;

struct WindowLayout {
  int window = 8;
  int shift = 0;

  void Validate() const;
};

// Tokens of every window, each window a (window^2 x C) matrix in
// row-major in-window order. Windows are ordered row-major over the padded,
// rolled grid.
struct WindowPartition {
  WindowLayout layout;
  int orig_h = 0;
  int orig_w = 0;
  int padded_h = 0;
  int padded_w = 0;
  std::vector<Eigen::MatrixXd> windows;
  // Additive attention masks (0 or -inf), one per window; empty when the
  // layout has no shift.
  std::vector<Eigen::MatrixXd> masks;

  int windows_y() const { return padded_h / layout.window; }
  int windows_x() const { return padded_w / layout.window; }
};

// Zero-pads to a multiple of the window, rolls by (-shift, -shift) and
// tiles. The inverse crops the padding away again.
WindowPartition PartitionWindows(const FeatureGrid& grid,
                                 const WindowLayout& layout);
FeatureGrid ReverseWindows(const WindowPartition& partition);

// Rebuilds a grid from per-window token matrices laid out like `geometry`.
FeatureGrid ReverseWindows(const WindowPartition& geometry,
                           const std::vector<Eigen::MatrixXd>& windows);

struct LayerNorm {
  Eigen::VectorXd gamma;
  Eigen::VectorXd beta;
  double eps = 1e-5;

  Eigen::MatrixXd Apply(const Eigen::MatrixXd& tokens) const;
};

// Affine token map: tokens (T x in) * weight (in x out) + bias.
struct Linear {
  Eigen::MatrixXd weight;
  Eigen::RowVectorXd bias;

  Eigen::MatrixXd Apply(const Eigen::MatrixXd& tokens) const;
};

struct ModalityProjection {
  LayerNorm norm;
  Linear q;
  Linear k;
  Linear v;
  // Relative position bias, one (2W-1)^2 table per head.
  std::vector<Eigen::VectorXd> position_bias;
};

struct AttentionParams {
  int window = 8;
  int heads = 1;
  int d_k = 0;
  ModalityProjection reference;
  ModalityProjection sensed;

  void Validate(int channels) const;
};

struct CrossAttentionResult {
  Eigen::MatrixXd r2s;  // T x d_k: reference values gathered by sensed queries
  Eigen::MatrixXd s2r;  // T x d_k
  std::vector<Eigen::MatrixXd> attn_r2s;  // per head, T x T
  std::vector<Eigen::MatrixXd> attn_s2r;
};

// Windowed cross-attention for one window. Layer norm is applied to both
// inputs before projection; `mask` is empty or T x T additive.
CrossAttentionResult CrossAttention(const Eigen::MatrixXd& x_ref,
                                    const Eigen::MatrixXd& x_sensed,
                                    const AttentionParams& params,
                                    const Eigen::MatrixXd& mask = {});

// Relative position index (T x T) into a (2W-1)^2 table.
Eigen::MatrixXi RelativePositionIndex(int window);

// Offset predictor: (2 d_k) -> 2 on the concatenated cross embeddings.
struct OffsetPredictor {
  Linear map;
};

// Applies the predictor token-wise and reverses the windows into an
// orig_h x orig_w x 2 field.
OffsetField PredictOffsets(const std::vector<Eigen::MatrixXd>& r2s,
                           const std::vector<Eigen::MatrixXd>& s2r,
                           const OffsetPredictor& predictor,
                           const WindowPartition& geometry);

// out(y, x) = bilinear sample at (x + dx, y + dy), coordinates clamped to
// the border.
FeatureGrid Warp(const FeatureGrid& grid, const OffsetField& offsets);

double SampleBilinear(const FeatureGrid& grid, double x, double y, int ch);

struct SwcaBlockParams {
  AttentionParams attention;
  OffsetPredictor offsets;
};

struct SwcaParams {
  int window = 8;
  // Block 0 uses regular windows, block 1 windows shifted by window / 2.
  std::array<SwcaBlockParams, 2> blocks;
};

struct SwcaInit {
  int channels = 16;
  int d_k = 16;
  int heads = 1;
  int window = 8;
  // Standard deviation of the offset-predictor weights; zero starts the
  // module as the identity.
  double offset_init_std = 0.0;
  std::uint64_t seed = 0;
};

SwcaParams MakeSwcaParams(const SwcaInit& init);

struct SwcaOutput {
  FeatureGrid aligned;
  std::array<OffsetField, 2> offsets;
};

// Offsets for one block: partition, cross-attend, predict, reverse.
OffsetField SwcaBlockOffsets(const FeatureGrid& f_ref,
                             const FeatureGrid& f_sensed,
                             const SwcaBlockParams& block,
                             const WindowLayout& layout);

// Two cascaded blocks; the second re-predicts offsets from the already
// warped sensed grid. `f_ref` is never modified.
SwcaOutput SwcaAlign(const FeatureGrid& f_ref, const FeatureGrid& f_sensed,
                     const SwcaParams& params);

}  // namespace shiftlab

#endif  // SHIFTLAB_SWCA_H_
