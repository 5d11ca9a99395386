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

#ifndef SHIFTLAB_SIMULATOR_H_
#define SHIFTLAB_SIMULATOR_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "shiftlab/box.h"
#include "shiftlab/cbc.h"
#include "shiftlab/matching.h"

namespace shiftlab {

// Stateless 64-bit mixer used to derive independent RNG streams from a
// master seed (splitmix64 finalizer).
std::uint64_t MixSeed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                      std::uint64_t c = 0);

struct ClassShift {
  double mean = 8.0;  // pixels
  double std = 2.0;
};

// Distribution of per-object displacements between the modalities.
struct ShiftModel {
  enum class Direction { kUniform, kFixed };

  // One entry per category; the category count of generated scenes.
  std::vector<ClassShift> per_class = {{6.0, 2.0}, {12.0, 3.0}};
  Direction direction = Direction::kUniform;
  double fixed_angle = 0.0;  // radians, used with kFixed
  double unshifted_fraction = 0.0;

  // Every class shares (mean, std).
  static ShiftModel Uniform(double mean, double std, int num_classes = 2);
  int num_classes() const { return static_cast<int>(per_class.size()); }
  void Validate() const;
};

struct SceneField {
  double width = 640.0;
  double height = 512.0;
  double min_size = 8.0;
  double max_size = 16.0;
  // Minimum center distance between any two boxes of different objects,
  // across both modalities.
  double min_separation = 48.0;
};

struct ScenePair {
  std::string id;
  std::vector<LabeledBox> reference;
  std::vector<LabeledBox> true_sensed;
  // true_sensed[j] = reference[j] translated by shifts[j].
  std::vector<Point> shifts;
};

// Deterministic in `seed`. Throws std::invalid_argument when the objects
// cannot be placed inside the field.
ScenePair GenerateScene(std::uint64_t seed, int n_objects,
                        const ShiftModel& shift_model, const SceneField& field,
                        std::string id = "scene");

// Pairs existing reference boxes with sensed copies displaced by shifts
// drawn from `shift_model`. No placement constraints apply.
ScenePair ShiftScene(std::uint64_t seed, std::string id,
                     std::vector<LabeledBox> reference,
                     const ShiftModel& shift_model);

// Stand-in for the teacher head on the sensed image.
struct SurrogateDetector {
  double sigma_det = 1.0;       // localization noise, pixels
  double logit_scale = 4.0;
  double reliability = 0.9;     // illumination quality in [0, 1]
  int samples_per_object = 9;
  // Anchor centers jitter uniformly by up to this fraction of the GT extent.
  double anchor_jitter = 0.6;
  // Logit decay radius as a multiple of max(w, h).
  double decay_factor = 2.0;
  // How strongly an unreliable head memorizes its training labels: the
  // fitted displacement toward the labels is
  // clamp(label_fit * (1 - reliability), 0, 1) of the label error.
  double label_fit = 5.0;

  double LabelPull() const;
  void Validate() const;
};

// Candidates for every object of `scene`. Prediction centers follow the
// true sensed center plus the head's learned displacement and Gaussian
// noise; anchors sit around `current_gts`. `learned_offsets` holds one
// displacement per object (empty means none).
std::vector<Sample> SurrogateSamples(const ScenePair& scene,
                                     std::span<const LabeledBox> current_gts,
                                     const SurrogateDetector& det,
                                     std::uint64_t seed,
                                     std::span<const Point> learned_offsets = {});

struct ExperimentConfig {
  int n_scenes = 20;
  int objects_per_scene = 20;
  ShiftModel shift_model;
  SceneField field;
  SurrogateDetector detector;
  // Fraction of scenes captured in poor illumination and their reliability.
  double night_fraction = 0.0;
  double night_reliability = 0.3;

  int max_epochs = 24;
  double gamma = 0.5;
  SelectionMode mode = SelectionMode::kTop1;
  ThresholdPool threshold_pool = ThresholdPool::kPositives;
  QafConfig qaf;
  int top_q = 7;
  // Scenes pooled for one batch threshold.
  int batch_size = 4;
  double ema_momentum = 0.9997;
  int ema_iters_per_epoch = 500;

  // Similarity for the reported aSim values.
  Similarity eval_similarity = Similarity::GaussianWasserstein();
  CategoryMode category_mode = CategoryMode::kPerCategory;
  std::uint64_t seed = 0;

  void Validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double asim_true = 0.0;  // corrected vs true sensed
  double asim_ref = 0.0;   // corrected vs reference
  double beta = 0.0;
  // Mean batch threshold; -inf in top-1 mode.
  double threshold = 0.0;
  int corrected = 0;  // GTs whose center moved this epoch
};

struct Trajectory {
  std::vector<ScenePair> scenes;
  double initial_asim_true = 0.0;
  double initial_asim_ref = 100.0;
  std::vector<EpochRecord> epochs;
  // Reliability of the head used on each scene (night scenes differ).
  std::vector<double> scene_reliability;
  std::vector<CorrectionState> final_states;
  // Per-epoch snapshots of the sensed GTs (epochs + 1 entries, the first
  // being the reference initialization), kept when requested.
  std::vector<std::vector<CorrectionState>> snapshots;

  double final_asim_true() const {
    return epochs.empty() ? initial_asim_true : epochs.back().asim_true;
  }
};

std::vector<ImageBoxes> ToImages(std::span<const ScenePair> scenes,
                                 bool true_sensed);
std::vector<ImageBoxes> ToImages(std::span<const ScenePair> scenes,
                                 std::span<const CorrectionState> states);

// Runs the correction loop over freshly generated scenes.
Trajectory RunCorrectionExperiment(const ExperimentConfig& cfg,
                                   bool keep_snapshots = false);

// Same loop over caller-provided scenes.
Trajectory RunCorrectionExperiment(const ExperimentConfig& cfg,
                                   std::vector<ScenePair> scenes,
                                   bool keep_snapshots = false);

}  // namespace shiftlab

#endif  // SHIFTLAB_SIMULATOR_H_
