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

#include "shiftlab/box.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

namespace shiftlab {

BoxH::BoxH(double cx, double cy, double w, double h)
    : cx_(cx), cy_(cy), w_(w), h_(h) {
  if (!std::isfinite(cx) || !std::isfinite(cy) || !std::isfinite(w) ||
      !std::isfinite(h)) {
    throw std::invalid_argument("box coordinates must be finite");
  }
  if (!(w > 0.0) || !(h > 0.0)) {
    throw std::invalid_argument("box extents must be positive, got w=" +
                                std::to_string(w) + " h=" + std::to_string(h));
  }
}

BoxH BoxH::FromCorners(double x1, double y1, double x2, double y2) {
  return BoxH((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1);
}

bool BoxH::Contains(Point p) const {
  return p.x >= x1() && p.x <= x2() && p.y >= y1() && p.y <= y2();
}

BoxH BoxH::Translated(double dx, double dy) const {
  return BoxH(cx_ + dx, cy_ + dy, w_, h_);
}

BoxH BoxH::WithCenter(Point c) const { return BoxH(c.x, c.y, w_, h_); }

Similarity Similarity::GaussianWasserstein(double c) {
  if (c < 0.0 || !std::isfinite(c)) {
    throw std::invalid_argument("Gaussian-Wasserstein constant must be >= 0");
  }
  return {Kind::kGaussianWasserstein, c};
}

double Similarity::operator()(const BoxH& a, const BoxH& b) const {
  switch (kind) {
    case Kind::kIoU:
      return Iou(a, b);
    case Kind::kGIoU:
      return Giou(a, b);
    case Kind::kGaussianWasserstein:
      return GwSimilarity(a, b, gw_constant);
  }
  return 0.0;
}

const char* SimilarityName(Similarity::Kind kind) {
  switch (kind) {
    case Similarity::Kind::kIoU:
      return "iou";
    case Similarity::Kind::kGIoU:
      return "giou";
    case Similarity::Kind::kGaussianWasserstein:
      return "gw";
  }
  return "?";
}

Similarity::Kind ParseSimilarityKind(const char* name) {
  const std::string_view n(name);
  if (n == "iou") return Similarity::Kind::kIoU;
  if (n == "giou") return Similarity::Kind::kGIoU;
  if (n == "gw") return Similarity::Kind::kGaussianWasserstein;
  throw std::invalid_argument("unknown similarity '" + std::string(n) +
                              "' (expected iou|giou|gw)");
}

namespace {

double IntersectionArea(const BoxH& a, const BoxH& b) {
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  return iw * ih;
}

// Area from the corner extents, so that a box intersected with itself
// reproduces it bit for bit.
double CornerArea(const BoxH& b) { return (b.x2() - b.x1()) * (b.y2() - b.y1()); }

}  // namespace

double Iou(const BoxH& a, const BoxH& b) {
  const double inter = IntersectionArea(a, b);
  const double uni = CornerArea(a) + CornerArea(b) - inter;
  return inter / uni;
}

double Giou(const BoxH& a, const BoxH& b) {
  const double inter = IntersectionArea(a, b);
  const double uni = CornerArea(a) + CornerArea(b) - inter;
  const double hull = (std::max(a.x2(), b.x2()) - std::min(a.x1(), b.x1())) *
                      (std::max(a.y2(), b.y2()) - std::min(a.y1(), b.y1()));
  return inter / uni - std::max(0.0, hull - uni) / hull;
}

double GaussianW2(const BoxH& a, const BoxH& b) {
  // Diagonal covariances commute, so the Bures term reduces to the Frobenius
  // distance between the per-axis standard deviations.
  const double dx = a.cx() - b.cx();
  const double dy = a.cy() - b.cy();
  const double dw = (a.w() - b.w()) / 2.0;
  const double dh = (a.h() - b.h()) / 2.0;
  return std::sqrt(dx * dx + dy * dy + dw * dw + dh * dh);
}

double DefaultGwConstant(const BoxH& a, const BoxH& b) {
  return std::sqrt(std::sqrt(a.area() * b.area()));
}

double GwSimilarity(const BoxH& a, const BoxH& b, double c) {
  if (c <= 0.0) c = DefaultGwConstant(a, b);
  return std::exp(-GaussianW2(a, b) / c);
}

BoxH CorrectCenter(const BoxH& prev, Point sample_center, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) {
    throw std::invalid_argument("beta must lie in [0, 1], got " +
                                std::to_string(beta));
  }
  return prev.WithCenter({std::lerp(prev.cx(), sample_center.x, beta),
                          std::lerp(prev.cy(), sample_center.y, beta)});
}

int RampLength(int max_epochs, double gamma) {
  return static_cast<int>(std::floor(gamma * max_epochs + 0.5));
}

double BetaSchedule(int epoch, int max_epochs, double gamma) {
  if (max_epochs < 1) throw std::invalid_argument("max epochs must be >= 1");
  if (epoch < 0 || epoch >= max_epochs) {
    throw std::invalid_argument("epoch " + std::to_string(epoch) +
                                " outside [0, " + std::to_string(max_epochs) +
                                ")");
  }
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw std::invalid_argument("gamma must lie in [0, 1]");
  }
  const int ramp = RampLength(max_epochs, gamma);
  if (ramp <= 1 || epoch >= ramp) return 1.0;
  return static_cast<double>(epoch) / static_cast<double>(ramp - 1);
}

}  // namespace shiftlab
