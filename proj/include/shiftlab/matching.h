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

#ifndef SHIFTLAB_MATCHING_H_
#define SHIFTLAB_MATCHING_H_

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "shiftlab/box.h"

namespace shiftlab {

// Dense row-major similarity matrix: rows index reference boxes, columns
// index sensed boxes.
class SimMatrix {
 public:
  SimMatrix() = default;
  SimMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  static SimMatrix FromRows(const std::vector<std::vector<double>>& rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return rows_ == 0 || cols_ == 0; }

  double operator()(std::size_t r, std::size_t c) const {
    return values_[r * cols_ + c];
  }
  double& operator()(std::size_t r, std::size_t c) {
    return values_[r * cols_ + c];
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

struct Assignment {
  // (row, col) pairs sorted by row.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  double total = 0.0;
};

// Maximum-weight one-to-one assignment of min(rows, cols) pairs. Exact
// O(n^2 m) shortest augmenting path with potentials. Throws on non-finite
// entries.
Assignment HungarianMax(const SimMatrix& m);

SimMatrix PairwiseSimilarity(const std::vector<BoxH>& refs,
                             const std::vector<BoxH>& senseds,
                             const Similarity& sim);

struct LabeledBox {
  BoxH box;
  int category = 0;

  friend bool operator==(const LabeledBox&, const LabeledBox&) = default;
};

// Per-image boxes for one modality.
struct ImageBoxes {
  std::string id;
  std::vector<LabeledBox> boxes;
};

enum class CategoryMode {
  // Match inside each category, pool the per-box values.
  kPerCategory,
  // Ignore categories when matching.
  kPooled,
};

struct ImageScore {
  std::string id;
  double asim = 0.0;  // [0, 100]
  double matched_sum = 0.0;
  std::size_t denominator = 0;
};

struct ASimReport {
  // Images where both sides are empty are skipped and listed in `absent`.
  std::vector<ImageScore> per_image;
  std::vector<std::string> absent;
  double aggregate = 0.0;  // [0, 100], instance weighted
};

// Per-image score for a single group: matched similarity sum and the
// max(|refs|, |senseds|) denominator.
struct GroupScore {
  double matched_sum = 0.0;
  std::size_t denominator = 0;
};
GroupScore ScoreGroup(const std::vector<BoxH>& refs,
                      const std::vector<BoxH>& senseds, const Similarity& sim);

// Average matched similarity between two annotation sets on a 0-100 scale.
// Images are aligned by position and must carry the same id.
ASimReport ASim(const std::vector<ImageBoxes>& refs,
                const std::vector<ImageBoxes>& senseds, const Similarity& sim,
                CategoryMode mode = CategoryMode::kPerCategory);

// Category-free convenience overload over per-image box lists.
ASimReport ASim(const std::vector<std::vector<BoxH>>& refs,
                const std::vector<std::vector<BoxH>>& senseds,
                const Similarity& sim);

// Ids whose aSim lies strictly below mean - population std, in input order.
std::vector<std::string> SelectShiftSubset(
    const std::vector<std::pair<std::string, double>>& per_image);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};
// Mean and population standard deviation. Throws on empty input.
MeanStd PopulationMeanStd(const std::vector<double>& values);

}  // namespace shiftlab

#endif  // SHIFTLAB_MATCHING_H_
