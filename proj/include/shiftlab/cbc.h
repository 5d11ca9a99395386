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

#ifndef SHIFTLAB_CBC_H_
#define SHIFTLAB_CBC_H_

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "shiftlab/box.h"
#include "shiftlab/matching.h"

namespace shiftlab {

// A candidate prediction emitted for one location by a detector head.
struct Sample {
  BoxH pred;
  BoxH anchor;
  // One logit per category (sigmoid, multi-label convention).
  std::vector<double> logits;
  // Target category, or nullopt for background.
  std::optional<int> label;
};

struct QafConfig {
  // Weight between location quality and classification probability.
  double alpha = 0.5;
  // Similarity used for both anchor-to-GT and prediction-to-GT quality.
  Similarity similarity = Similarity::GaussianWasserstein();
};

struct BagMember {
  Sample sample;
  double score = 0.0;
  double qaf = 0.0;
};

struct Bag {
  std::size_t gt_index = 0;
  std::vector<BagMember> members;
};

// Per-image correction record. sensed_gts[j] always corresponds to
// reference_gts[j]; only centers of sensed_gts change.
struct CorrectionState {
  int epoch = 0;
  int max_epochs = 24;
  double gamma = 0.5;
  std::vector<LabeledBox> sensed_gts;
  std::vector<LabeledBox> reference_gts;

  // Epoch-zero state with the sensed set initialized to the reference set.
  static CorrectionState Initial(std::vector<LabeledBox> reference,
                                 int max_epochs, double gamma);
};

enum class SelectionMode {
  // Top-1 by score, no threshold.
  kTop1,
  // Batch-adaptive threshold, then top-1 among the survivors.
  kThresholdTop1,
};

const char* SelectionModeName(SelectionMode mode);
SelectionMode ParseSelectionMode(const char* name);

double Sigmoid(double x);

// max(Sim(anchor, gt), Sim(pred, gt)).
double Hlq(const Sample& sample, const BoxH& gt, const QafConfig& cfg);

// hlq^alpha * prob^(1 - alpha).
double QafBlend(double hlq, double prob, double alpha);

// Spatial prior: the anchor center lies inside the GT box.
bool SpatialPrior(const Sample& sample, const BoxH& gt);

// Gated blend for one (sample, GT) pair; zero when the spatial prior fails.
double QafPair(const Sample& sample, const LabeledBox& gt,
               const QafConfig& cfg);

// Maximum of QafPair over all GTs. Throws on an empty GT list.
double Qaf(const Sample& sample, std::span<const LabeledBox> gts,
           const QafConfig& cfg);

// sigmoid(logit[label]) for positives, 0 for background.
double SampleScore(const Sample& sample);

// Assigns each positive sample to the category-consistent GT with the
// largest gated QAF (lowest index on ties) and keeps the top_q per GT. One
// bag per GT, in GT order; a GT nobody reaches gets an empty bag.
std::vector<Bag> BuildBags(std::span<const Sample> samples,
                           const CorrectionState& state, const QafConfig& cfg,
                           std::size_t top_q);

// Scores of every bag member, in bag order.
std::vector<double> PoolScores(std::span<const Bag> bags);

// Population for the batch threshold.
enum class ThresholdPool {
  kPositives,  // bag members only
  kAll,        // bag members plus every background sample (score 0)
};

const char* ThresholdPoolName(ThresholdPool pool);
ThresholdPool ParseThresholdPool(const char* name);

std::vector<double> PoolScores(std::span<const Bag> bags,
                               std::span<const Sample> samples,
                               ThresholdPool pool);

// Mean + population std of the pooled scores. Throws on an empty pool.
double BatchThreshold(std::span<const double> scores);

// Highest-scoring member with score strictly above `threshold`; the lowest
// member index wins ties. Use -infinity for top-1 only.
std::optional<std::size_t> SelectTop1(const Bag& bag, double threshold);

// One correction step: every GT with a selected sample moves its center by
// beta = BetaSchedule(epoch, E, gamma); the epoch counter advances.
CorrectionState CorrectEpoch(const CorrectionState& state,
                             std::span<const Bag> bags, double threshold);

struct EmaState {
  std::vector<double> teacher;
  double momentum = 0.9997;
};

// teacher <- m * teacher + (1 - m) * student.
EmaState EmaUpdate(const EmaState& state, std::span<const double> student);
void EmaUpdateInPlace(EmaState& state, std::span<const double> student);

struct ModalityLoss {
  double cls = 0.0;
  double reg = 0.0;
};

// Classification: binary cross-entropy per category logit, summed over
// categories and averaged over all samples. Regression: L1 over
// (cx, cy, w, h) averaged over positives and box parameters; zero without
// positives. `box_targets[i]` must be set for every positive sample.
ModalityLoss ModalityLosses(std::span<const Sample> samples,
                            std::span<const std::optional<BoxH>> box_targets);

double CbcLoss(double cls_ref, double cls_sensed, double reg_ref,
               double reg_sensed);

}  // namespace shiftlab

#endif  // SHIFTLAB_CBC_H_
