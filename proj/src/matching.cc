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

#include "shiftlab/matching.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace shiftlab {

SimMatrix::SimMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

SimMatrix SimMatrix::FromRows(const std::vector<std::vector<double>>& rows) {
  const std::size_t cols = rows.empty() ? 0 : rows.front().size();
  SimMatrix m(rows.size(), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != cols) {
      throw std::invalid_argument("similarity matrix rows differ in length");
    }
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = rows[r][c];
  }
  return m;
}

namespace {

// Minimum-cost assignment of every row to a distinct column; requires
// rows <= cols. Returns the column chosen for each row.
std::vector<std::size_t> SolveMinCost(const std::vector<double>& cost,
                                      std::size_t n, std::size_t m) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based potentials; column 0 is the virtual source.
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> match_col(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    match_col[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = match_col[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[match_col[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match_col[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match_col[j0] = match_col[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n, 0);
  for (std::size_t j = 1; j <= m; ++j) {
    if (match_col[j] != 0) row_to_col[match_col[j] - 1] = j - 1;
  }
  return row_to_col;
}

}  // namespace

Assignment HungarianMax(const SimMatrix& m) {
  Assignment out;
  if (m.empty()) return out;
  double max_value = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (!std::isfinite(m(r, c))) {
        throw std::invalid_argument("similarity matrix has non-finite entry");
      }
      max_value = std::max(max_value, m(r, c));
    }
  }

  // Negate around the maximum so every cost is non-negative; solve with the
  // smaller side as rows.
  const bool transposed = m.rows() > m.cols();
  const std::size_t n = transposed ? m.cols() : m.rows();
  const std::size_t k = transposed ? m.rows() : m.cols();
  std::vector<double> cost(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      cost[i * k + j] = max_value - (transposed ? m(j, i) : m(i, j));
    }
  }
  const std::vector<std::size_t> chosen = SolveMinCost(cost, n, k);

  out.pairs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (transposed) {
      out.pairs.emplace_back(chosen[i], i);
    } else {
      out.pairs.emplace_back(i, chosen[i]);
    }
  }
  std::sort(out.pairs.begin(), out.pairs.end());
  for (const auto& [r, c] : out.pairs) out.total += m(r, c);
  return out;
}

SimMatrix PairwiseSimilarity(const std::vector<BoxH>& refs,
                             const std::vector<BoxH>& senseds,
                             const Similarity& sim) {
  SimMatrix m(refs.size(), senseds.size());
  for (std::size_t r = 0; r < refs.size(); ++r) {
    for (std::size_t c = 0; c < senseds.size(); ++c) {
      m(r, c) = sim(refs[r], senseds[c]);
    }
  }
  return m;
}

GroupScore ScoreGroup(const std::vector<BoxH>& refs,
                      const std::vector<BoxH>& senseds, const Similarity& sim) {
  GroupScore g;
  g.denominator = std::max(refs.size(), senseds.size());
  if (refs.empty() || senseds.empty()) return g;
  g.matched_sum = HungarianMax(PairwiseSimilarity(refs, senseds, sim)).total;
  return g;
}

ASimReport ASim(const std::vector<ImageBoxes>& refs,
                const std::vector<ImageBoxes>& senseds, const Similarity& sim,
                CategoryMode mode) {
  if (refs.size() != senseds.size()) {
    throw std::invalid_argument("reference and sensed image counts differ");
  }
  ASimReport report;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (refs[i].id != senseds[i].id) {
      throw std::invalid_argument("image id mismatch at position " +
                                  std::to_string(i) + ": '" + refs[i].id +
                                  "' vs '" + senseds[i].id + "'");
    }
    // Group boxes by category (or a single pooled group).
    std::map<int, std::pair<std::vector<BoxH>, std::vector<BoxH>>> groups;
    const auto key = [mode](const LabeledBox& b) {
      return mode == CategoryMode::kPooled ? 0 : b.category;
    };
    for (const auto& b : refs[i].boxes) groups[key(b)].first.push_back(b.box);
    for (const auto& b : senseds[i].boxes) {
      groups[key(b)].second.push_back(b.box);
    }

    ImageScore score{refs[i].id, 0.0, 0.0, 0};
    for (const auto& [category, sides] : groups) {
      const GroupScore g = ScoreGroup(sides.first, sides.second, sim);
      score.matched_sum += g.matched_sum;
      score.denominator += g.denominator;
    }
    if (score.denominator == 0) {
      report.absent.push_back(refs[i].id);
      continue;
    }
    score.asim = 100.0 * score.matched_sum / score.denominator;
    total += score.matched_sum;
    count += score.denominator;
    report.per_image.push_back(std::move(score));
  }
  report.aggregate = count == 0 ? 0.0 : 100.0 * total / count;
  return report;
}

ASimReport ASim(const std::vector<std::vector<BoxH>>& refs,
                const std::vector<std::vector<BoxH>>& senseds,
                const Similarity& sim) {
  const auto wrap = [](const std::vector<std::vector<BoxH>>& images) {
    std::vector<ImageBoxes> out;
    out.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
      ImageBoxes img{std::to_string(i), {}};
      for (const auto& b : images[i]) img.boxes.push_back({b, 0});
      out.push_back(std::move(img));
    }
    return out;
  };
  return ASim(wrap(refs), wrap(senseds), sim, CategoryMode::kPooled);
}

MeanStd PopulationMeanStd(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("empty value list");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  return {mean, std::sqrt(var)};
}

std::vector<std::string> SelectShiftSubset(
    const std::vector<std::pair<std::string, double>>& per_image) {
  if (per_image.empty()) {
    throw std::invalid_argument("shift subset needs at least one image");
  }
  std::vector<double> values;
  values.reserve(per_image.size());
  for (const auto& [id, v] : per_image) values.push_back(v);
  const MeanStd ms = PopulationMeanStd(values);
  const double threshold = ms.mean - ms.std;
  std::vector<std::string> out;
  for (const auto& [id, v] : per_image) {
    if (v < threshold) out.push_back(id);
  }
  return out;
}

}  // namespace shiftlab
