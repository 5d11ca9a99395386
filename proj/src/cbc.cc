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

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>

namespace shiftlab {

CorrectionState CorrectionState::Initial(std::vector<LabeledBox> reference,
                                         int max_epochs, double gamma) {
  if (max_epochs < 1) throw std::invalid_argument("max epochs must be >= 1");
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw std::invalid_argument("gamma must lie in [0, 1]");
  }
  CorrectionState s;
  s.epoch = 0;
  s.max_epochs = max_epochs;
  s.gamma = gamma;
  s.sensed_gts = reference;
  s.reference_gts = std::move(reference);
  return s;
}

const char* SelectionModeName(SelectionMode mode) {
  return mode == SelectionMode::kTop1 ? "top1" : "threshold+top1";
}

SelectionMode ParseSelectionMode(const char* name) {
  const std::string_view n(name);
  if (n == "top1") return SelectionMode::kTop1;
  if (n == "threshold+top1") return SelectionMode::kThresholdTop1;
  throw std::invalid_argument("unknown selection mode '" + std::string(n) +
                              "' (expected top1|threshold+top1)");
}

double Sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double Hlq(const Sample& sample, const BoxH& gt, const QafConfig& cfg) {
  return std::max(cfg.similarity(sample.anchor, gt),
                  cfg.similarity(sample.pred, gt));
}

double QafBlend(double hlq, double prob, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("alpha must lie in [0, 1]");
  }
  // Negative GIoU qualities carry no location evidence.
  hlq = std::max(hlq, 0.0);
  return std::pow(hlq, alpha) * std::pow(prob, 1.0 - alpha);
}

bool SpatialPrior(const Sample& sample, const BoxH& gt) {
  return gt.Contains(sample.anchor.center());
}

namespace {

double ProbAt(const Sample& sample, int category) {
  if (category < 0 || static_cast<std::size_t>(category) >= sample.logits.size()) {
    throw std::invalid_argument("category " + std::to_string(category) +
                                " has no logit (sample carries " +
                                std::to_string(sample.logits.size()) + ")");
  }
  return Sigmoid(sample.logits[static_cast<std::size_t>(category)]);
}

}  // namespace

double QafPair(const Sample& sample, const LabeledBox& gt,
               const QafConfig& cfg) {
  if (!SpatialPrior(sample, gt.box)) return 0.0;
  return QafBlend(Hlq(sample, gt.box, cfg), ProbAt(sample, gt.category),
                  cfg.alpha);
}

double Qaf(const Sample& sample, std::span<const LabeledBox> gts,
           const QafConfig& cfg) {
  if (gts.empty()) throw std::invalid_argument("QAF needs at least one GT");
  double best = 0.0;
  for (const auto& gt : gts) best = std::max(best, QafPair(sample, gt, cfg));
  return best;
}

double SampleScore(const Sample& sample) {
  if (!sample.label) return 0.0;
  return ProbAt(sample, *sample.label);
}

std::vector<Bag> BuildBags(std::span<const Sample> samples,
                           const CorrectionState& state, const QafConfig& cfg,
                           std::size_t top_q) {
  const auto& gts = state.sensed_gts;
  std::vector<Bag> bags(gts.size());
  // (qaf, sample index) candidates per GT.
  std::vector<std::vector<std::pair<double, std::size_t>>> candidates(
      gts.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    if (!s.label) continue;
    double best = 0.0;
    std::optional<std::size_t> best_gt;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (gts[j].category != *s.label) continue;
      const double q = QafPair(s, gts[j], cfg);
      if (q > best) {
        best = q;
        best_gt = j;
      }
    }
    if (best_gt) candidates[*best_gt].emplace_back(best, i);
  }
  for (std::size_t j = 0; j < gts.size(); ++j) {
    auto& c = candidates[j];
    std::stable_sort(c.begin(), c.end(), [](const auto& a, const auto& b) {
      return a.first > b.first;
    });
    if (c.size() > top_q) c.resize(top_q);
    bags[j].gt_index = j;
    bags[j].members.reserve(c.size());
    for (const auto& [q, i] : c) {
      bags[j].members.push_back({samples[i], SampleScore(samples[i]), q});
    }
  }
  return bags;
}

std::vector<double> PoolScores(std::span<const Bag> bags) {
  std::vector<double> scores;
  for (const auto& bag : bags) {
    for (const auto& m : bag.members) scores.push_back(m.score);
  }
  return scores;
}

const char* ThresholdPoolName(ThresholdPool pool) {
  return pool == ThresholdPool::kAll ? "all" : "positives";
}

ThresholdPool ParseThresholdPool(const char* name) {
  const std::string n(name);
  if (n == "positives") return ThresholdPool::kPositives;
  if (n == "all") return ThresholdPool::kAll;
  throw std::invalid_argument("unknown threshold pool '" + n + "'");
}

std::vector<double> PoolScores(std::span<const Bag> bags,
                               std::span<const Sample> samples,
                               ThresholdPool pool) {
  std::vector<double> scores = PoolScores(bags);
  if (pool == ThresholdPool::kAll) {
    for (const auto& s : samples) {
      if (!s.label) scores.push_back(SampleScore(s));
    }
  }
  return scores;
}

double BatchThreshold(std::span<const double> scores) {
  if (scores.empty()) {
    throw std::invalid_argument("batch threshold needs a non-empty pool");
  }
  const MeanStd ms =
      PopulationMeanStd(std::vector<double>(scores.begin(), scores.end()));
  return ms.mean + ms.std;
}

std::optional<std::size_t> SelectTop1(const Bag& bag, double threshold) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < bag.members.size(); ++i) {
    const double s = bag.members[i].score;
    if (!(s > threshold)) continue;
    if (!best || s > bag.members[*best].score) best = i;
  }
  return best;
}

CorrectionState CorrectEpoch(const CorrectionState& state,
                             std::span<const Bag> bags, double threshold) {
  if (bags.size() != state.sensed_gts.size()) {
    throw std::invalid_argument("got " + std::to_string(bags.size()) +
                                " bags for " +
                                std::to_string(state.sensed_gts.size()) +
                                " GTs");
  }
  const double beta = BetaSchedule(state.epoch, state.max_epochs, state.gamma);
  CorrectionState next = state;
  for (std::size_t j = 0; j < bags.size(); ++j) {
    if (bags[j].gt_index != j) {
      throw std::invalid_argument("bag " + std::to_string(j) +
                                  " refers to GT " +
                                  std::to_string(bags[j].gt_index));
    }
    const auto pick = SelectTop1(bags[j], threshold);
    if (!pick) continue;
    next.sensed_gts[j].box = CorrectCenter(
        state.sensed_gts[j].box, bags[j].members[*pick].sample.pred.center(),
        beta);
  }
  next.epoch = state.epoch + 1;
  return next;
}

void EmaUpdateInPlace(EmaState& state, std::span<const double> student) {
  if (student.size() != state.teacher.size()) {
    throw std::invalid_argument("EMA dimension mismatch: teacher " +
                                std::to_string(state.teacher.size()) +
                                ", student " + std::to_string(student.size()));
  }
  if (!(state.momentum >= 0.0 && state.momentum <= 1.0)) {
    throw std::invalid_argument("EMA momentum must lie in [0, 1]");
  }
  const double m = state.momentum;
  for (std::size_t i = 0; i < student.size(); ++i) {
    state.teacher[i] = m * state.teacher[i] + (1.0 - m) * student[i];
  }
}

EmaState EmaUpdate(const EmaState& state, std::span<const double> student) {
  EmaState next = state;
  EmaUpdateInPlace(next, student);
  return next;
}

ModalityLoss ModalityLosses(std::span<const Sample> samples,
                            std::span<const std::optional<BoxH>> box_targets) {
  if (box_targets.size() != samples.size()) {
    throw std::invalid_argument("one box target slot per sample required");
  }
  ModalityLoss loss;
  if (samples.empty()) return loss;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    for (std::size_t c = 0; c < s.logits.size(); ++c) {
      const bool target = s.label && static_cast<std::size_t>(*s.label) == c;
      // -log(sigmoid(x)) = softplus(-x), -log(1 - sigmoid(x)) = softplus(x).
      const double x = s.logits[c];
      const double softplus_neg =
          std::max(-x, 0.0) + std::log1p(std::exp(-std::abs(x)));
      loss.cls += target ? softplus_neg : softplus_neg + x;
    }
    if (s.label) {
      if (!box_targets[i]) {
        throw std::invalid_argument("positive sample " + std::to_string(i) +
                                    " has no box target");
      }
      const BoxH& t = *box_targets[i];
      loss.reg += std::abs(s.pred.cx() - t.cx()) +
                  std::abs(s.pred.cy() - t.cy()) +
                  std::abs(s.pred.w() - t.w()) + std::abs(s.pred.h() - t.h());
      ++positives;
    }
  }
  loss.cls /= static_cast<double>(samples.size());
  loss.reg = positives == 0 ? 0.0 : loss.reg / (4.0 * positives);
  return loss;
}

double CbcLoss(double cls_ref, double cls_sensed, double reg_ref,
               double reg_sensed) {
  return 0.5 * (cls_ref + cls_sensed) + 0.5 * (reg_ref + reg_sensed);
}

}  // namespace shiftlab
