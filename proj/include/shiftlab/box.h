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

#ifndef SHIFTLAB_BOX_H_
#define SHIFTLAB_BOX_H_

#include <utility>

namespace shiftlab {

// 2-D point in pixel coordinates.
struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

// Axis-aligned box in center form (cx, cy, w, h), pixel units. Extents are
// strictly positive and finite; the constructor throws std::invalid_argument
// otherwise.
class BoxH {
 public:
  BoxH(double cx, double cy, double w, double h);

  static BoxH FromCorners(double x1, double y1, double x2, double y2);

  double cx() const { return cx_; }
  double cy() const { return cy_; }
  double w() const { return w_; }
  double h() const { return h_; }
  Point center() const { return {cx_, cy_}; }
  double area() const { return w_ * h_; }

  double x1() const { return cx_ - w_ / 2.0; }
  double y1() const { return cy_ - h_ / 2.0; }
  double x2() const { return cx_ + w_ / 2.0; }
  double y2() const { return cy_ + h_ / 2.0; }

  bool Contains(Point p) const;
  BoxH Translated(double dx, double dy) const;
  BoxH WithCenter(Point c) const;

  friend bool operator==(const BoxH&, const BoxH&) = default;

 private:
  double cx_;
  double cy_;
  double w_;
  double h_;
};

// Box similarity used for matching and location quality.
struct Similarity {
  enum class Kind { kIoU, kGIoU, kGaussianWasserstein };

  Kind kind = Kind::kIoU;
  // Normalization constant for kGaussianWasserstein. Zero selects the
  // pair-adaptive default sqrt(sqrt(area_a * area_b)).
  double gw_constant = 0.0;

  static Similarity IoU() { return {Kind::kIoU, 0.0}; }
  static Similarity GIoU() { return {Kind::kGIoU, 0.0}; }
  static Similarity GaussianWasserstein(double c = 0.0);

  double operator()(const BoxH& a, const BoxH& b) const;
};

const char* SimilarityName(Similarity::Kind kind);
Similarity::Kind ParseSimilarityKind(const char* name);

double Iou(const BoxH& a, const BoxH& b);
double Giou(const BoxH& a, const BoxH& b);

// 2-Wasserstein distance between N(center, diag((w/2)^2, (h/2)^2)) fits.
double GaussianW2(const BoxH& a, const BoxH& b);

// exp(-W2 / c). Pass c <= 0 for the default scale-invariant constant.
double GwSimilarity(const BoxH& a, const BoxH& b, double c = 0.0);
double DefaultGwConstant(const BoxH& a, const BoxH& b);

// Moves the center toward `sample_center` by `beta` in [0, 1]; extents are
// kept. beta == 0 returns `prev` and beta == 1 lands exactly on the sample.
BoxH CorrectCenter(const BoxH& prev, Point sample_center, double beta);

// Progressive ramp: k / ([gamma*E] - 1) while k < [gamma*E], else 1, where
// [.] rounds half up. A ramp length <= 1 yields a constant 1.
double BetaSchedule(int epoch, int max_epochs, double gamma);

// [gamma * E] with round-half-up.
int RampLength(int max_epochs, double gamma);

}  // namespace shiftlab

#endif  // SHIFTLAB_BOX_H_
