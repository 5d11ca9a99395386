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

#ifndef SHIFTLAB_RUN_CONFIG_H_
#define SHIFTLAB_RUN_CONFIG_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "shiftlab/simulator.h"
#include "shiftlab/swca.h"

namespace shiftlab {

// Synthetic input for the SWCA demo: a smooth random reference grid and a
// sensed copy displaced by (shift_x, shift_y) cells.
struct SwcaDemoConfig {
  int height = 32;
  int width = 32;
  SwcaInit init;
  double shift_x = 2.0;
  double shift_y = 1.0;
};

// Everything a command needs. Text form is flat `key = value` lines under
// `[section]` headers; `#` starts a comment. Unknown sections or keys are
// errors.
//
//   [similarity]  kind (iou|giou|gw), constant
//   [cbc]         alpha, top_q, mode (top1|threshold+top1),
//                 threshold_pool (positives|all), epochs, gamma,
//                 ema_momentum, ema_iters_per_epoch, batch_size,
//                 category_mode (per_category|pooled)
//   [simulator]   scenes, objects, classes, shift_mean, shift_std,
//                 direction (uniform|fixed), fixed_angle, unshifted_fraction,
//                 field_width, field_height, min_size, max_size,
//                 min_separation, sigma_det, logit_scale, reliability,
//                 samples_per_object, anchor_jitter, decay_factor,
//                 label_fit, night_fraction, night_reliability
//   [swca]        window, channels, d_k, heads, height, width,
//                 offset_init_std, shift_x, shift_y
//   [run]         seed
//
// classes, shift_mean and shift_std take comma-separated lists; a single
// shift value applies to every class.
struct RunConfig {
  ExperimentConfig experiment;
  std::vector<std::string> class_names = {"person", "rider"};
  SwcaDemoConfig swca;
  std::uint64_t seed = 0;

  void Validate() const;
};

RunConfig ParseRunConfig(const std::string& text);
RunConfig LoadRunConfig(const std::filesystem::path& path);
std::string FormatRunConfig(const RunConfig& cfg);

}  // namespace shiftlab

#endif  // SHIFTLAB_RUN_CONFIG_H_
