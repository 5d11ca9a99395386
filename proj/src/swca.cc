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

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "shiftlab/rng.h"

namespace shiftlab {

FeatureGrid::FeatureGrid(int h, int w, int c, double fill)
    : h_(h), w_(w), c_(c) {
  if (h <= 0 || w <= 0 || c <= 0) {
    throw std::invalid_argument("feature grid dimensions must be positive");
  }
  data_.assign(static_cast<std::size_t>(h) * w * c, fill);
}

void WindowLayout::Validate() const {
  if (window < 1) throw std::invalid_argument("window must be >= 1");
  if (shift < 0 || shift >= window) {
    throw std::invalid_argument("shift must lie in [0, window)");
  }
}

namespace {

int RoundUp(int v, int m) { return (v + m - 1) / m * m; }

int Wrap(int v, int n) { return ((v % n) + n) % n; }

// Region label of a rolled-grid coordinate along one axis: the last
// `window` cells split at `shift` from the end, where wrapped content starts.
int AxisRegion(int v, int n, const WindowLayout& l) {
  if (v < n - l.window) return 0;
  if (v < n - l.shift) return 1;
  return 2;
}

}  // namespace

WindowPartition PartitionWindows(const FeatureGrid& grid,
                                 const WindowLayout& layout) {
  layout.Validate();
  WindowPartition p;
  p.layout = layout;
  p.orig_h = grid.h();
  p.orig_w = grid.w();
  p.padded_h = RoundUp(grid.h(), layout.window);
  p.padded_w = RoundUp(grid.w(), layout.window);
  const int ws = layout.window;
  const int tokens = ws * ws;
  const int c = grid.c();

  for (int wy = 0; wy < p.windows_y(); ++wy) {
    for (int wx = 0; wx < p.windows_x(); ++wx) {
      Eigen::MatrixXd win = Eigen::MatrixXd::Zero(tokens, c);
      for (int r = 0; r < ws; ++r) {
        for (int col = 0; col < ws; ++col) {
          // Rolled coordinate (wy*ws + r) reads padded coordinate + shift.
          const int y = Wrap(wy * ws + r + layout.shift, p.padded_h);
          const int x = Wrap(wx * ws + col + layout.shift, p.padded_w);
          if (y >= grid.h() || x >= grid.w()) continue;
          for (int ch = 0; ch < c; ++ch) win(r * ws + col, ch) = grid.at(y, x, ch);
        }
      }
      p.windows.push_back(std::move(win));

      if (layout.shift == 0) continue;
      Eigen::VectorXi region(tokens);
      for (int r = 0; r < ws; ++r) {
        for (int col = 0; col < ws; ++col) {
          region(r * ws + col) = AxisRegion(wy * ws + r, p.padded_h, layout) * 3 +
                                 AxisRegion(wx * ws + col, p.padded_w, layout);
        }
      }
      Eigen::MatrixXd mask(tokens, tokens);
      for (int i = 0; i < tokens; ++i) {
        for (int j = 0; j < tokens; ++j) {
          mask(i, j) = region(i) == region(j)
                           ? 0.0
                           : -std::numeric_limits<double>::infinity();
        }
      }
      p.masks.push_back(std::move(mask));
    }
  }
  return p;
}

FeatureGrid ReverseWindows(const WindowPartition& geometry,
                           const std::vector<Eigen::MatrixXd>& windows) {
  const int ws = geometry.layout.window;
  if (windows.size() !=
      static_cast<std::size_t>(geometry.windows_y() * geometry.windows_x())) {
    throw std::invalid_argument("window count does not match the layout");
  }
  const int c = static_cast<int>(windows.front().cols());
  FeatureGrid out(geometry.orig_h, geometry.orig_w, c);
  std::size_t idx = 0;
  for (int wy = 0; wy < geometry.windows_y(); ++wy) {
    for (int wx = 0; wx < geometry.windows_x(); ++wx, ++idx) {
      const Eigen::MatrixXd& win = windows[idx];
      if (win.rows() != ws * ws || win.cols() != c) {
        throw std::invalid_argument("window token shape mismatch");
      }
      for (int r = 0; r < ws; ++r) {
        for (int col = 0; col < ws; ++col) {
          const int y = Wrap(wy * ws + r + geometry.layout.shift, geometry.padded_h);
          const int x = Wrap(wx * ws + col + geometry.layout.shift, geometry.padded_w);
          if (y >= geometry.orig_h || x >= geometry.orig_w) continue;
          for (int ch = 0; ch < c; ++ch) out.at(y, x, ch) = win(r * ws + col, ch);
        }
      }
    }
  }
  return out;
}

FeatureGrid ReverseWindows(const WindowPartition& partition) {
  return ReverseWindows(partition, partition.windows);
}

Eigen::MatrixXd LayerNorm::Apply(const Eigen::MatrixXd& tokens) const {
  if (gamma.size() != tokens.cols() || beta.size() != tokens.cols()) {
    throw std::invalid_argument("layer norm width mismatch");
  }
  Eigen::MatrixXd out(tokens.rows(), tokens.cols());
  for (Eigen::Index t = 0; t < tokens.rows(); ++t) {
    const double mean = tokens.row(t).mean();
    const Eigen::RowVectorXd centered =
        tokens.row(t).array() - mean;
    const double var = centered.squaredNorm() / static_cast<double>(tokens.cols());
    out.row(t) = (centered / std::sqrt(var + eps)).cwiseProduct(gamma.transpose()) +
                 beta.transpose();
  }
  return out;
}

Eigen::MatrixXd Linear::Apply(const Eigen::MatrixXd& tokens) const {
  if (tokens.cols() != weight.rows() || bias.size() != weight.cols()) {
    throw std::invalid_argument("linear layer shape mismatch: input width " +
                                std::to_string(tokens.cols()) + ", weight " +
                                std::to_string(weight.rows()) + "x" +
                                std::to_string(weight.cols()));
  }
  return (tokens * weight).rowwise() + bias;
}

void AttentionParams::Validate(int channels) const {
  if (window < 1 || heads < 1 || d_k < 1 || d_k % heads != 0) {
    throw std::invalid_argument("attention needs window, heads, d_k >= 1 and "
                                "d_k divisible by heads");
  }
  const Eigen::Index table = static_cast<Eigen::Index>(2 * window - 1) * (2 * window - 1);
  for (const ModalityProjection* m : {&reference, &sensed}) {
    if (m->q.weight.rows() != channels || m->q.weight.cols() != d_k ||
        m->k.weight.rows() != channels || m->k.weight.cols() != d_k ||
        m->v.weight.rows() != channels || m->v.weight.cols() != d_k) {
      throw std::invalid_argument("projection shapes must be channels x d_k");
    }
    if (m->position_bias.size() != static_cast<std::size_t>(heads)) {
      throw std::invalid_argument("one position bias table per head required");
    }
    for (const auto& t : m->position_bias) {
      if (t.size() != table) {
        throw std::invalid_argument("position bias table must hold (2W-1)^2 entries");
      }
    }
  }
}

Eigen::MatrixXi RelativePositionIndex(int window) {
  const int t = window * window;
  Eigen::MatrixXi idx(t, t);
  for (int i = 0; i < t; ++i) {
    for (int j = 0; j < t; ++j) {
      const int dy = i / window - j / window + window - 1;
      const int dx = i % window - j % window + window - 1;
      idx(i, j) = dy * (2 * window - 1) + dx;
    }
  }
  return idx;
}

namespace {

void SoftmaxRows(Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp();
    m.row(r) /= m.row(r).sum();
  }
}

}  // namespace

CrossAttentionResult CrossAttention(const Eigen::MatrixXd& x_ref,
                                    const Eigen::MatrixXd& x_sensed,
                                    const AttentionParams& params,
                                    const Eigen::MatrixXd& mask) {
  if (x_ref.rows() != x_sensed.rows() || x_ref.cols() != x_sensed.cols()) {
    throw std::invalid_argument("reference and sensed windows differ in shape");
  }
  params.Validate(static_cast<int>(x_ref.cols()));
  const Eigen::Index t = x_ref.rows();
  if (t != static_cast<Eigen::Index>(params.window) * params.window) {
    throw std::invalid_argument("window holds " + std::to_string(t) +
                                " tokens, expected window^2");
  }
  if (mask.size() != 0 && (mask.rows() != t || mask.cols() != t)) {
    throw std::invalid_argument("attention mask must be T x T");
  }

  const Eigen::MatrixXd nr = params.reference.norm.Apply(x_ref);
  const Eigen::MatrixXd ns = params.sensed.norm.Apply(x_sensed);
  const Eigen::MatrixXd qr = params.reference.q.Apply(nr);
  const Eigen::MatrixXd kr = params.reference.k.Apply(nr);
  const Eigen::MatrixXd vr = params.reference.v.Apply(nr);
  const Eigen::MatrixXd qs = params.sensed.q.Apply(ns);
  const Eigen::MatrixXd ks = params.sensed.k.Apply(ns);
  const Eigen::MatrixXd vs = params.sensed.v.Apply(ns);

  const Eigen::MatrixXi rel = RelativePositionIndex(params.window);
  const int dh = params.d_k / params.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  CrossAttentionResult out;
  out.r2s.resize(t, params.d_k);
  out.s2r.resize(t, params.d_k);
  for (int h = 0; h < params.heads; ++h) {
    const auto cols = [&](const Eigen::MatrixXd& m) {
      return m.middleCols(h * dh, dh);
    };
    Eigen::MatrixXd a_r2s = cols(qs) * cols(kr).transpose() * scale;
    Eigen::MatrixXd a_s2r = cols(qr) * cols(ks).transpose() * scale;
    const Eigen::VectorXd& pr = params.reference.position_bias[h];
    const Eigen::VectorXd& ps = params.sensed.position_bias[h];
    for (Eigen::Index i = 0; i < t; ++i) {
      for (Eigen::Index j = 0; j < t; ++j) {
        a_r2s(i, j) += pr(rel(i, j));
        a_s2r(i, j) += ps(rel(i, j));
      }
    }
    if (mask.size() != 0) {
      a_r2s += mask;
      a_s2r += mask;
    }
    SoftmaxRows(a_r2s);
    SoftmaxRows(a_s2r);
    out.r2s.middleCols(h * dh, dh) = a_r2s * cols(vr);
    out.s2r.middleCols(h * dh, dh) = a_s2r * cols(vs);
    out.attn_r2s.push_back(std::move(a_r2s));
    out.attn_s2r.push_back(std::move(a_s2r));
  }
  return out;
}

OffsetField PredictOffsets(const std::vector<Eigen::MatrixXd>& r2s,
                           const std::vector<Eigen::MatrixXd>& s2r,
                           const OffsetPredictor& predictor,
                           const WindowPartition& geometry) {
  if (r2s.size() != s2r.size()) {
    throw std::invalid_argument("cross embedding window counts differ");
  }
  if (predictor.map.weight.cols() != 2) {
    throw std::invalid_argument("offset predictor must emit 2 values per token");
  }
  std::vector<Eigen::MatrixXd> per_window;
  per_window.reserve(r2s.size());
  for (std::size_t i = 0; i < r2s.size(); ++i) {
    if (r2s[i].rows() != s2r[i].rows() || r2s[i].cols() != s2r[i].cols()) {
      throw std::invalid_argument("cross embedding shapes differ");
    }
    Eigen::MatrixXd cat(r2s[i].rows(), r2s[i].cols() + s2r[i].cols());
    cat << r2s[i], s2r[i];
    per_window.push_back(predictor.map.Apply(cat));
  }
  return ReverseWindows(geometry, per_window);
}

double SampleBilinear(const FeatureGrid& grid, double x, double y, int ch) {
  x = std::clamp(x, 0.0, static_cast<double>(grid.w() - 1));
  y = std::clamp(y, 0.0, static_cast<double>(grid.h() - 1));
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, grid.w() - 1);
  const int y1 = std::min(y0 + 1, grid.h() - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  return (1.0 - fy) * ((1.0 - fx) * grid.at(y0, x0, ch) + fx * grid.at(y0, x1, ch)) +
         fy * ((1.0 - fx) * grid.at(y1, x0, ch) + fx * grid.at(y1, x1, ch));
}

FeatureGrid Warp(const FeatureGrid& grid, const OffsetField& offsets) {
  if (offsets.h() != grid.h() || offsets.w() != grid.w() || offsets.c() != 2) {
    throw std::invalid_argument("offset field must be h x w x 2 of the grid");
  }
  FeatureGrid out(grid.h(), grid.w(), grid.c());
  for (int y = 0; y < grid.h(); ++y) {
    for (int x = 0; x < grid.w(); ++x) {
      const double dx = offsets.at(y, x, 0);
      const double dy = offsets.at(y, x, 1);
      if (!std::isfinite(dx) || !std::isfinite(dy)) {
        throw std::invalid_argument("offset field has non-finite entries");
      }
      for (int ch = 0; ch < grid.c(); ++ch) {
        out.at(y, x, ch) = SampleBilinear(grid, x + dx, y + dy, ch);
      }
    }
  }
  return out;
}

namespace {

Linear RandomLinear(Rng& rng, int in, int out, double std) {
  Linear l;
  l.weight.resize(in, out);
  for (int i = 0; i < in; ++i) {
    for (int j = 0; j < out; ++j) l.weight(i, j) = std == 0.0 ? 0.0 : rng.Normal(0.0, std);
  }
  l.bias = Eigen::RowVectorXd::Zero(out);
  return l;
}

ModalityProjection RandomProjection(Rng& rng, const SwcaInit& init) {
  ModalityProjection m;
  m.norm.gamma = Eigen::VectorXd::Ones(init.channels);
  m.norm.beta = Eigen::VectorXd::Zero(init.channels);
  const double std = 1.0 / std::sqrt(static_cast<double>(init.channels));
  m.q = RandomLinear(rng, init.channels, init.d_k, std);
  m.k = RandomLinear(rng, init.channels, init.d_k, std);
  m.v = RandomLinear(rng, init.channels, init.d_k, std);
  const int table = (2 * init.window - 1) * (2 * init.window - 1);
  for (int h = 0; h < init.heads; ++h) {
    Eigen::VectorXd bias(table);
    for (int i = 0; i < table; ++i) bias(i) = rng.Normal(0.0, 0.02);
    m.position_bias.push_back(std::move(bias));
  }
  return m;
}

}  // namespace

SwcaParams MakeSwcaParams(const SwcaInit& init) {
  if (init.channels < 1 || init.d_k < 1 || init.heads < 1 || init.window < 1 ||
      init.d_k % init.heads != 0 || !(init.offset_init_std >= 0.0)) {
    throw std::invalid_argument("invalid SWCA initialization");
  }
  Rng rng(init.seed);
  SwcaParams p;
  p.window = init.window;
  for (auto& block : p.blocks) {
    block.attention.window = init.window;
    block.attention.heads = init.heads;
    block.attention.d_k = init.d_k;
    block.attention.reference = RandomProjection(rng, init);
    block.attention.sensed = RandomProjection(rng, init);
    block.offsets.map = RandomLinear(rng, 2 * init.d_k, 2, init.offset_init_std);
  }
  return p;
}

OffsetField SwcaBlockOffsets(const FeatureGrid& f_ref,
                             const FeatureGrid& f_sensed,
                             const SwcaBlockParams& block,
                             const WindowLayout& layout) {
  const WindowPartition pr = PartitionWindows(f_ref, layout);
  const WindowPartition ps = PartitionWindows(f_sensed, layout);
  std::vector<Eigen::MatrixXd> r2s, s2r;
  r2s.reserve(pr.windows.size());
  s2r.reserve(pr.windows.size());
  for (std::size_t i = 0; i < pr.windows.size(); ++i) {
    const Eigen::MatrixXd mask = pr.masks.empty() ? Eigen::MatrixXd() : pr.masks[i];
    CrossAttentionResult a =
        CrossAttention(pr.windows[i], ps.windows[i], block.attention, mask);
    r2s.push_back(std::move(a.r2s));
    s2r.push_back(std::move(a.s2r));
  }
  return PredictOffsets(r2s, s2r, block.offsets, pr);
}

SwcaOutput SwcaAlign(const FeatureGrid& f_ref, const FeatureGrid& f_sensed,
                     const SwcaParams& params) {
  if (!f_ref.SameShape(f_sensed)) {
    throw std::invalid_argument("reference and sensed grids differ in shape");
  }
  SwcaOutput out;
  const WindowLayout regular{params.window, 0};
  const WindowLayout shifted{params.window, params.window / 2};
  out.offsets[0] = SwcaBlockOffsets(f_ref, f_sensed, params.blocks[0], regular);
  const FeatureGrid stage1 = Warp(f_sensed, out.offsets[0]);
  out.offsets[1] = SwcaBlockOffsets(f_ref, stage1, params.blocks[1], shifted);
  out.aligned = Warp(stage1, out.offsets[1]);
  return out;
}

}  // namespace shiftlab
