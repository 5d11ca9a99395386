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

#include "shiftlab/simulator.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "shiftlab/rng.h"

namespace shiftlab {

namespace {

constexpr std::uint64_t kSceneStream = 0x5343454e45ULL;
constexpr std::uint64_t kSampleStream = 0x53414d504cULL;
constexpr std::uint64_t kNightStream = 0x4e49474854ULL;
constexpr int kPlacementAttempts = 2000;

std::uint64_t SplitMix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Point DrawShift(Rng& rng, const ShiftModel& model, const ClassShift& cs) {
  if (rng.Uniform() < model.unshifted_fraction) return {};
  double magnitude = rng.Normal(cs.mean, cs.std);
  while (magnitude < 0.0) magnitude = rng.Normal(cs.mean, cs.std);
  const double angle = model.direction == ShiftModel::Direction::kFixed
                           ? model.fixed_angle
                           : rng.Uniform(0.0, 2.0 * std::numbers::pi);
  return {magnitude * std::cos(angle), magnitude * std::sin(angle)};
}

}  // namespace

std::uint64_t MixSeed(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                      std::uint64_t c) {
  std::uint64_t h = SplitMix(seed);
  h = SplitMix(h ^ a);
  h = SplitMix(h ^ b);
  return SplitMix(h ^ c);
}

ShiftModel ShiftModel::Uniform(double mean, double std, int num_classes) {
  ShiftModel m;
  m.per_class.assign(static_cast<std::size_t>(num_classes), {mean, std});
  return m;
}

void ShiftModel::Validate() const {
  if (per_class.empty()) throw std::invalid_argument("shift model has no classes");
  for (const auto& c : per_class) {
    if (!(c.mean >= 0.0) || !(c.std >= 0.0)) {
      throw std::invalid_argument("shift magnitude mean and std must be >= 0");
    }
  }
  if (!(unshifted_fraction >= 0.0 && unshifted_fraction <= 1.0)) {
    throw std::invalid_argument("unshifted fraction must lie in [0, 1]");
  }
}

ScenePair GenerateScene(std::uint64_t seed, int n_objects,
                        const ShiftModel& shift_model, const SceneField& field,
                        std::string id) {
  if (n_objects < 0) throw std::invalid_argument("object count must be >= 0");
  shift_model.Validate();
  if (!(field.min_size > 0.0) || field.max_size < field.min_size) {
    throw std::invalid_argument("invalid box size range");
  }
  Rng rng(seed);
  ScenePair scene;
  scene.id = std::move(id);
  const double sep2 = field.min_separation * field.min_separation;
  const auto far_enough = [&](Point p) {
    const auto check = [&](const std::vector<LabeledBox>& boxes) {
      for (const auto& b : boxes) {
        const double dx = b.box.cx() - p.x;
        const double dy = b.box.cy() - p.y;
        if (dx * dx + dy * dy < sep2) return false;
      }
      return true;
    };
    return check(scene.reference) && check(scene.true_sensed);
  };
  const auto inside = [&](Point c, double w, double h) {
    return c.x - w / 2 >= 0.0 && c.x + w / 2 <= field.width &&
           c.y - h / 2 >= 0.0 && c.y + h / 2 <= field.height;
  };

  for (int j = 0; j < n_objects; ++j) {
    const int category =
        static_cast<int>(rng.Below(shift_model.per_class.size()));
    const ClassShift& cs = shift_model.per_class[static_cast<std::size_t>(category)];
    const double w = rng.Uniform(field.min_size, field.max_size);
    const double h = rng.Uniform(field.min_size, field.max_size);

    const Point shift = DrawShift(rng, shift_model, cs);

    bool placed = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
      const Point ref{rng.Uniform(w / 2, field.width - w / 2),
                      rng.Uniform(h / 2, field.height - h / 2)};
      const Point sensed{ref.x + shift.x, ref.y + shift.y};
      if (!inside(sensed, w, h) || !far_enough(ref) || !far_enough(sensed)) {
        continue;
      }
      scene.reference.push_back({BoxH(ref.x, ref.y, w, h), category});
      scene.true_sensed.push_back({BoxH(sensed.x, sensed.y, w, h), category});
      scene.shifts.push_back(shift);
      placed = true;
    }
    if (!placed) {
      throw std::invalid_argument(
          "field " + std::to_string(field.width) + "x" +
          std::to_string(field.height) + " too small to place object " +
          std::to_string(j) + " of " + std::to_string(n_objects));
    }
  }
  return scene;
}

ScenePair ShiftScene(std::uint64_t seed, std::string id,
                     std::vector<LabeledBox> reference,
                     const ShiftModel& shift_model) {
  shift_model.Validate();
  Rng rng(seed);
  ScenePair scene;
  scene.id = std::move(id);
  for (const auto& b : reference) {
    if (b.category < 0 || b.category >= shift_model.num_classes()) {
      throw std::invalid_argument("category " + std::to_string(b.category) +
                                  " has no shift model");
    }
    const Point shift = DrawShift(
        rng, shift_model, shift_model.per_class[static_cast<std::size_t>(b.category)]);
    scene.true_sensed.push_back({b.box.Translated(shift.x, shift.y), b.category});
    scene.shifts.push_back(shift);
  }
  scene.reference = std::move(reference);
  return scene;
}

double SurrogateDetector::LabelPull() const {
  return std::clamp(label_fit * (1.0 - reliability), 0.0, 1.0);
}

void SurrogateDetector::Validate() const {
  if (!(sigma_det >= 0.0)) throw std::invalid_argument("sigma_det must be >= 0");
  if (!(reliability >= 0.0 && reliability <= 1.0)) {
    throw std::invalid_argument("reliability must lie in [0, 1]");
  }
  if (samples_per_object < 1) {
    throw std::invalid_argument("samples per object must be >= 1");
  }
  if (!(anchor_jitter >= 0.0) || !(decay_factor > 0.0) || !(label_fit >= 0.0)) {
    throw std::invalid_argument("invalid surrogate detector parameters");
  }
}

std::vector<Sample> SurrogateSamples(const ScenePair& scene,
                                     std::span<const LabeledBox> current_gts,
                                     const SurrogateDetector& det,
                                     std::uint64_t seed,
                                     std::span<const Point> learned_offsets) {
  det.Validate();
  const std::size_t n = scene.true_sensed.size();
  if (current_gts.size() != n) {
    throw std::invalid_argument("current GT count differs from scene objects");
  }
  if (!learned_offsets.empty() && learned_offsets.size() != n) {
    throw std::invalid_argument("one learned offset per object required");
  }
  int num_categories = 1;
  for (const auto& b : scene.true_sensed) {
    num_categories = std::max(num_categories, b.category + 1);
  }

  Rng rng(seed);
  std::vector<Sample> samples;
  samples.reserve(n * static_cast<std::size_t>(det.samples_per_object));
  for (std::size_t j = 0; j < n; ++j) {
    const BoxH& truth = scene.true_sensed[j].box;
    const BoxH& gt = current_gts[j].box;
    const Point bias = learned_offsets.empty() ? Point{} : learned_offsets[j];
    const double decay = det.decay_factor * std::max(truth.w(), truth.h());
    for (int s = 0; s < det.samples_per_object; ++s) {
      const double ax = gt.cx() + rng.Uniform(-det.anchor_jitter, det.anchor_jitter) * gt.w();
      const double ay = gt.cy() + rng.Uniform(-det.anchor_jitter, det.anchor_jitter) * gt.h();
      const double px = truth.cx() + bias.x + det.sigma_det * rng.Normal();
      const double py = truth.cy() + bias.y + det.sigma_det * rng.Normal();
      const double d = std::hypot(px - truth.cx(), py - truth.cy());

      Sample sample{BoxH(px, py, truth.w(), truth.h()),
                    BoxH(ax, ay, gt.w(), gt.h()),
                    std::vector<double>(static_cast<std::size_t>(num_categories),
                                        -det.logit_scale),
                    scene.true_sensed[j].category};
      sample.logits[static_cast<std::size_t>(scene.true_sensed[j].category)] =
          det.logit_scale * (1.0 - d / decay) * det.reliability;
      samples.push_back(std::move(sample));
    }
  }
  return samples;
}

void ExperimentConfig::Validate() const {
  if (n_scenes < 0 || objects_per_scene < 0) {
    throw std::invalid_argument("scene and object counts must be >= 0");
  }
  shift_model.Validate();
  detector.Validate();
  if (!(night_fraction >= 0.0 && night_fraction <= 1.0) ||
      !(night_reliability >= 0.0 && night_reliability <= 1.0)) {
    throw std::invalid_argument("night fraction and reliability must lie in [0, 1]");
  }
  if (max_epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw std::invalid_argument("gamma must lie in [0, 1]");
  }
  if (!(qaf.alpha >= 0.0 && qaf.alpha <= 1.0)) {
    throw std::invalid_argument("alpha must lie in [0, 1]");
  }
  if (top_q < 1) throw std::invalid_argument("top_q must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (!(ema_momentum >= 0.0 && ema_momentum <= 1.0)) {
    throw std::invalid_argument("EMA momentum must lie in [0, 1]");
  }
  if (ema_iters_per_epoch < 0) {
    throw std::invalid_argument("EMA iterations per epoch must be >= 0");
  }
}

std::vector<ImageBoxes> ToImages(std::span<const ScenePair> scenes,
                                 bool true_sensed) {
  std::vector<ImageBoxes> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) {
    out.push_back({s.id, true_sensed ? s.true_sensed : s.reference});
  }
  return out;
}

std::vector<ImageBoxes> ToImages(std::span<const ScenePair> scenes,
                                 std::span<const CorrectionState> states) {
  std::vector<ImageBoxes> out;
  out.reserve(scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    out.push_back({scenes[i].id, states[i].sensed_gts});
  }
  return out;
}

Trajectory RunCorrectionExperiment(const ExperimentConfig& cfg,
                                   bool keep_snapshots) {
  cfg.Validate();
  std::vector<ScenePair> scenes;
  scenes.reserve(static_cast<std::size_t>(cfg.n_scenes));
  for (int s = 0; s < cfg.n_scenes; ++s) {
    char id[32];
    std::snprintf(id, sizeof(id), "scene%03d", s);
    scenes.push_back(GenerateScene(MixSeed(cfg.seed, kSceneStream,
                                           static_cast<std::uint64_t>(s)),
                                   cfg.objects_per_scene, cfg.shift_model,
                                   cfg.field, id));
  }
  return RunCorrectionExperiment(cfg, std::move(scenes), keep_snapshots);
}

Trajectory RunCorrectionExperiment(const ExperimentConfig& cfg,
                                   std::vector<ScenePair> scenes,
                                   bool keep_snapshots) {
  cfg.Validate();
  Trajectory traj;
  traj.scenes = std::move(scenes);
  const auto& sc = traj.scenes;
  const std::size_t n = sc.size();

  std::vector<SurrogateDetector> heads(n, cfg.detector);
  for (std::size_t s = 0; s < n; ++s) {
    Rng night(MixSeed(cfg.seed, kNightStream, s));
    if (night.Uniform() < cfg.night_fraction) {
      heads[s].reliability = cfg.night_reliability;
    }
  }
  for (const auto& h : heads) traj.scene_reliability.push_back(h.reliability);

  std::vector<CorrectionState> states;
  std::vector<std::size_t> offset_base(n, 0);
  std::size_t params = 0;
  for (std::size_t s = 0; s < n; ++s) {
    states.push_back(
        CorrectionState::Initial(sc[s].reference, cfg.max_epochs, cfg.gamma));
    offset_base[s] = params;
    params += 2 * sc[s].reference.size();
  }

  // The head's parameters are its learned displacement toward the labels
  // it is trained on; the student refits them to the current sensed GTs and
  // the teacher follows by EMA.
  const auto student_params = [&]() {
    std::vector<double> p(params, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
      const double pull = heads[s].LabelPull();
      for (std::size_t j = 0; j < sc[s].true_sensed.size(); ++j) {
        const BoxH& g = states[s].sensed_gts[j].box;
        const BoxH& t = sc[s].true_sensed[j].box;
        p[offset_base[s] + 2 * j] = pull * (g.cx() - t.cx());
        p[offset_base[s] + 2 * j + 1] = pull * (g.cy() - t.cy());
      }
    }
    return p;
  };
  // Teacher starts from the head pretrained on the reference labels.
  EmaState ema{student_params(), cfg.ema_momentum};

  const auto images_true = ToImages(sc, true);
  const auto images_ref = ToImages(sc, false);
  traj.initial_asim_true =
      ASim(images_ref, images_true, cfg.eval_similarity, cfg.category_mode)
          .aggregate;
  traj.initial_asim_ref =
      ASim(images_ref, images_ref, cfg.eval_similarity, cfg.category_mode)
          .aggregate;
  if (keep_snapshots) traj.snapshots.push_back(states);

  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  for (int k = 0; k < cfg.max_epochs; ++k) {
    EpochRecord rec;
    rec.epoch = k;
    rec.beta = BetaSchedule(k, cfg.max_epochs, cfg.gamma);
    double thr_sum = 0.0;
    int thr_count = 0;

    std::vector<CorrectionState> next(states);
    for (std::size_t b0 = 0; b0 < n; b0 += batch) {
      const std::size_t b1 = std::min(n, b0 + batch);
      std::vector<std::vector<Bag>> bags(b1 - b0);
      std::vector<double> pool;
      for (std::size_t s = b0; s < b1; ++s) {
        std::vector<Point> learned(sc[s].true_sensed.size());
        for (std::size_t j = 0; j < learned.size(); ++j) {
          learned[j] = {ema.teacher[offset_base[s] + 2 * j],
                        ema.teacher[offset_base[s] + 2 * j + 1]};
        }
        const auto samples = SurrogateSamples(
            sc[s], states[s].sensed_gts, heads[s],
            MixSeed(cfg.seed, kSampleStream, s, static_cast<std::uint64_t>(k)),
            learned);
        bags[s - b0] = BuildBags(samples, states[s], cfg.qaf,
                                 static_cast<std::size_t>(cfg.top_q));
        const auto scores = PoolScores(bags[s - b0], samples, cfg.threshold_pool);
        pool.insert(pool.end(), scores.begin(), scores.end());
      }

      double thr = -std::numeric_limits<double>::infinity();
      if (cfg.mode == SelectionMode::kThresholdTop1) {
        thr = pool.empty() ? std::numeric_limits<double>::infinity()
                           : BatchThreshold(pool);
        if (!pool.empty()) {
          thr_sum += thr;
          ++thr_count;
        }
      }
      for (std::size_t s = b0; s < b1; ++s) {
        next[s] = CorrectEpoch(states[s], bags[s - b0], thr);
        for (std::size_t j = 0; j < next[s].sensed_gts.size(); ++j) {
          if (next[s].sensed_gts[j].box != states[s].sensed_gts[j].box) {
            ++rec.corrected;
          }
        }
      }
    }
    states = std::move(next);
    rec.threshold = cfg.mode == SelectionMode::kTop1
                        ? -std::numeric_limits<double>::infinity()
                        : (thr_count == 0 ? std::numeric_limits<double>::quiet_NaN()
                                          : thr_sum / thr_count);

    const std::vector<double> student = student_params();
    for (int it = 0; it < cfg.ema_iters_per_epoch; ++it) {
      EmaUpdateInPlace(ema, student);
    }

    const auto corrected = ToImages(sc, states);
    rec.asim_true =
        ASim(corrected, images_true, cfg.eval_similarity, cfg.category_mode)
            .aggregate;
    rec.asim_ref =
        ASim(corrected, images_ref, cfg.eval_similarity, cfg.category_mode)
            .aggregate;
    traj.epochs.push_back(rec);
    if (keep_snapshots) traj.snapshots.push_back(states);
  }
  traj.final_states = std::move(states);
  return traj;
}

}  // namespace shiftlab
