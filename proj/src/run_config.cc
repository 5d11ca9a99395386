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

#include "shiftlab/run_config.h"

#include <cmath>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

#include "shiftlab/io.h"

namespace shiftlab {

namespace {

std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> SplitList(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(Trim(item));
  return out;
}

double ToReal(const std::string& v) {
  std::size_t used = 0;
  const double d = std::stod(v, &used);
  if (used != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
  return d;
}

long long ToInt(const std::string& v) {
  std::size_t used = 0;
  const long long i = std::stoll(v, &used);
  if (used != v.size()) throw std::invalid_argument(v);
  return i;
}

std::vector<double> ToReals(const std::string& v) {
  std::vector<double> out;
  for (const auto& item : SplitList(v)) out.push_back(ToReal(item));
  if (out.empty()) throw std::invalid_argument(v);
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

struct PendingShift {
  std::vector<double> mean = {6.0, 12.0};
  std::vector<double> std = {2.0, 3.0};
};

std::map<std::string, Setter> MakeSetters(PendingShift& shift) {
  std::map<std::string, Setter> s;
  s["similarity.kind"] = [](RunConfig& c, const std::string& v) {
    const auto kind = ParseSimilarityKind(v.c_str());
    c.experiment.eval_similarity.kind = kind;
    c.experiment.qaf.similarity.kind = kind;
  };
  s["similarity.constant"] = [](RunConfig& c, const std::string& v) {
    const double k = ToReal(v);
    if (k < 0.0) throw std::invalid_argument("constant must be >= 0");
    c.experiment.eval_similarity.gw_constant = k;
    c.experiment.qaf.similarity.gw_constant = k;
  };
  s["cbc.alpha"] = [](RunConfig& c, const std::string& v) { c.experiment.qaf.alpha = ToReal(v); };
  s["cbc.top_q"] = [](RunConfig& c, const std::string& v) { c.experiment.top_q = static_cast<int>(ToInt(v)); };
  s["cbc.mode"] = [](RunConfig& c, const std::string& v) { c.experiment.mode = ParseSelectionMode(v.c_str()); };
  s["cbc.threshold_pool"] = [](RunConfig& c, const std::string& v) { c.experiment.threshold_pool = ParseThresholdPool(v.c_str()); };
  s["cbc.epochs"] = [](RunConfig& c, const std::string& v) { c.experiment.max_epochs = static_cast<int>(ToInt(v)); };
  s["cbc.gamma"] = [](RunConfig& c, const std::string& v) { c.experiment.gamma = ToReal(v); };
  s["cbc.ema_momentum"] = [](RunConfig& c, const std::string& v) { c.experiment.ema_momentum = ToReal(v); };
  s["cbc.ema_iters_per_epoch"] = [](RunConfig& c, const std::string& v) { c.experiment.ema_iters_per_epoch = static_cast<int>(ToInt(v)); };
  s["cbc.batch_size"] = [](RunConfig& c, const std::string& v) { c.experiment.batch_size = static_cast<int>(ToInt(v)); };
  s["cbc.category_mode"] = [](RunConfig& c, const std::string& v) {
    if (v == "per_category") {
      c.experiment.category_mode = CategoryMode::kPerCategory;
    } else if (v == "pooled") {
      c.experiment.category_mode = CategoryMode::kPooled;
    } else {
      throw std::invalid_argument("expected per_category|pooled");
    }
  };

  s["simulator.scenes"] = [](RunConfig& c, const std::string& v) { c.experiment.n_scenes = static_cast<int>(ToInt(v)); };
  s["simulator.objects"] = [](RunConfig& c, const std::string& v) { c.experiment.objects_per_scene = static_cast<int>(ToInt(v)); };
  s["simulator.classes"] = [](RunConfig& c, const std::string& v) {
    c.class_names = SplitList(v);
    if (c.class_names.empty()) throw std::invalid_argument("no classes");
  };
  s["simulator.shift_mean"] = [&shift](RunConfig&, const std::string& v) { shift.mean = ToReals(v); };
  s["simulator.shift_std"] = [&shift](RunConfig&, const std::string& v) { shift.std = ToReals(v); };
  s["simulator.direction"] = [](RunConfig& c, const std::string& v) {
    if (v == "uniform") {
      c.experiment.shift_model.direction = ShiftModel::Direction::kUniform;
    } else if (v == "fixed") {
      c.experiment.shift_model.direction = ShiftModel::Direction::kFixed;
    } else {
      throw std::invalid_argument("expected uniform|fixed");
    }
  };
  s["simulator.fixed_angle"] = [](RunConfig& c, const std::string& v) { c.experiment.shift_model.fixed_angle = ToReal(v); };
  s["simulator.unshifted_fraction"] = [](RunConfig& c, const std::string& v) { c.experiment.shift_model.unshifted_fraction = ToReal(v); };
  s["simulator.field_width"] = [](RunConfig& c, const std::string& v) { c.experiment.field.width = ToReal(v); };
  s["simulator.field_height"] = [](RunConfig& c, const std::string& v) { c.experiment.field.height = ToReal(v); };
  s["simulator.min_size"] = [](RunConfig& c, const std::string& v) { c.experiment.field.min_size = ToReal(v); };
  s["simulator.max_size"] = [](RunConfig& c, const std::string& v) { c.experiment.field.max_size = ToReal(v); };
  s["simulator.min_separation"] = [](RunConfig& c, const std::string& v) { c.experiment.field.min_separation = ToReal(v); };
  s["simulator.sigma_det"] = [](RunConfig& c, const std::string& v) { c.experiment.detector.sigma_det = ToReal(v); };
  s["simulator.logit_scale"] = [](RunConfig& c, const std::string& v) { c.experiment.detector.logit_scale = ToReal(v); };
  s["simulator.reliability"] = [](RunConfig& c, const std::string& v) { c.experiment.detector.reliability = ToReal(v); };
  s["simulator.samples_per_object"] = [](RunConfig& c, const std::string& v) { c.experiment.detector.samples_per_object = static_cast<int>(ToInt(v)); };
  s["simulator.anchor_jitter"] = [](RunConfig& c, const std::string& v) { c.experiment.detector.anchor_jitter = ToReal(v); };
  s["simulator.decay_factor"] = [](RunConfig& c, const std::string& v) { c.experiment.detector.decay_factor = ToReal(v); };
  s["simulator.label_fit"] = [](RunConfig& c, const std::string& v) { c.experiment.detector.label_fit = ToReal(v); };
  s["simulator.night_fraction"] = [](RunConfig& c, const std::string& v) { c.experiment.night_fraction = ToReal(v); };
  s["simulator.night_reliability"] = [](RunConfig& c, const std::string& v) { c.experiment.night_reliability = ToReal(v); };

  s["swca.window"] = [](RunConfig& c, const std::string& v) { c.swca.init.window = static_cast<int>(ToInt(v)); };
  s["swca.channels"] = [](RunConfig& c, const std::string& v) { c.swca.init.channels = static_cast<int>(ToInt(v)); };
  s["swca.d_k"] = [](RunConfig& c, const std::string& v) { c.swca.init.d_k = static_cast<int>(ToInt(v)); };
  s["swca.heads"] = [](RunConfig& c, const std::string& v) { c.swca.init.heads = static_cast<int>(ToInt(v)); };
  s["swca.height"] = [](RunConfig& c, const std::string& v) { c.swca.height = static_cast<int>(ToInt(v)); };
  s["swca.width"] = [](RunConfig& c, const std::string& v) { c.swca.width = static_cast<int>(ToInt(v)); };
  s["swca.offset_init_std"] = [](RunConfig& c, const std::string& v) { c.swca.init.offset_init_std = ToReal(v); };
  s["swca.shift_x"] = [](RunConfig& c, const std::string& v) { c.swca.shift_x = ToReal(v); };
  s["swca.shift_y"] = [](RunConfig& c, const std::string& v) { c.swca.shift_y = ToReal(v); };

  s["run.seed"] = [](RunConfig& c, const std::string& v) {
    const long long seed = ToInt(v);
    if (seed < 0) throw std::invalid_argument("seed must be >= 0");
    c.seed = static_cast<std::uint64_t>(seed);
  };
  return s;
}

std::vector<double> Broadcast(const std::vector<double>& v, std::size_t n,
                              const char* name) {
  if (v.size() == n) return v;
  if (v.size() == 1) return std::vector<double>(n, v.front());
  throw FormatError(std::string("config: ") + name + " lists " +
                    std::to_string(v.size()) + " values for " +
                    std::to_string(n) + " classes");
}

}  // namespace

void RunConfig::Validate() const {
  experiment.Validate();
  if (class_names.size() != experiment.shift_model.per_class.size()) {
    throw std::invalid_argument("class names and shift classes differ in count");
  }
  if (swca.height < 1 || swca.width < 1) {
    throw std::invalid_argument("swca grid size must be positive");
  }
  if (swca.init.window < 1 || swca.init.channels < 1 || swca.init.d_k < 1 ||
      swca.init.heads < 1 || swca.init.d_k % swca.init.heads != 0 ||
      swca.init.offset_init_std < 0.0) {
    throw std::invalid_argument("invalid swca parameters");
  }
}

RunConfig ParseRunConfig(const std::string& text) {
  RunConfig cfg;
  PendingShift shift;
  const auto setters = MakeSetters(shift);
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = Trim(line);
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw FormatError(where + ": malformed section header");
      section = Trim(line.substr(1, line.size() - 2));
      static const char* kSections[] = {"similarity", "cbc", "simulator", "swca", "run"};
      bool known = false;
      for (const char* s : kSections) known = known || section == s;
      if (!known) throw FormatError(where + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(where + ": expected key = value");
    if (section.empty()) throw FormatError(where + ": key outside any section");
    const std::string key = Trim(line.substr(0, eq));
    const std::string value = Trim(line.substr(eq + 1));
    const auto it = setters.find(section + "." + key);
    if (it == setters.end()) {
      throw FormatError(where + ": unknown key '" + key + "' in [" + section + "]");
    }
    try {
      it->second(cfg, value);
    } catch (const std::exception& e) {
      throw FormatError(where + ": bad value '" + value + "' for " + key + " (" +
                        e.what() + ")");
    }
  }

  const std::size_t n = cfg.class_names.size();
  const auto means = Broadcast(shift.mean, n, "shift_mean");
  const auto stds = Broadcast(shift.std, n, "shift_std");
  cfg.experiment.shift_model.per_class.clear();
  for (std::size_t i = 0; i < n; ++i) {
    cfg.experiment.shift_model.per_class.push_back({means[i], stds[i]});
  }
  try {
    cfg.Validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  return cfg;
}

RunConfig LoadRunConfig(const std::filesystem::path& path) {
  return ParseRunConfig(ReadFile(path));
}

std::string FormatRunConfig(const RunConfig& cfg) {
  const auto& e = cfg.experiment;
  std::ostringstream o;
  const auto list = [](const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      out += (i ? "," : "") + FormatReal(v[i], 9);
    }
    return out;
  };
  std::vector<double> means, stds;
  for (const auto& c : e.shift_model.per_class) {
    means.push_back(c.mean);
    stds.push_back(c.std);
  }
  std::string classes;
  for (std::size_t i = 0; i < cfg.class_names.size(); ++i) {
    classes += (i ? "," : "") + cfg.class_names[i];
  }
  o << "[similarity]\n"
    << "kind = " << SimilarityName(e.eval_similarity.kind) << "\n"
    << "constant = " << FormatReal(e.eval_similarity.gw_constant, 9) << "\n\n"
    << "[cbc]\n"
    << "alpha = " << FormatReal(e.qaf.alpha, 9) << "\n"
    << "top_q = " << e.top_q << "\n"
    << "mode = " << SelectionModeName(e.mode) << "\n"
    << "threshold_pool = " << ThresholdPoolName(e.threshold_pool) << "\n"
    << "epochs = " << e.max_epochs << "\n"
    << "gamma = " << FormatReal(e.gamma, 9) << "\n"
    << "ema_momentum = " << FormatReal(e.ema_momentum, 9) << "\n"
    << "ema_iters_per_epoch = " << e.ema_iters_per_epoch << "\n"
    << "batch_size = " << e.batch_size << "\n"
    << "category_mode = "
    << (e.category_mode == CategoryMode::kPooled ? "pooled" : "per_category") << "\n\n"
    << "[simulator]\n"
    << "scenes = " << e.n_scenes << "\n"
    << "objects = " << e.objects_per_scene << "\n"
    << "classes = " << classes << "\n"
    << "shift_mean = " << list(means) << "\n"
    << "shift_std = " << list(stds) << "\n"
    << "direction = "
    << (e.shift_model.direction == ShiftModel::Direction::kFixed ? "fixed" : "uniform") << "\n"
    << "fixed_angle = " << FormatReal(e.shift_model.fixed_angle, 9) << "\n"
    << "unshifted_fraction = " << FormatReal(e.shift_model.unshifted_fraction, 9) << "\n"
    << "field_width = " << FormatReal(e.field.width, 9) << "\n"
    << "field_height = " << FormatReal(e.field.height, 9) << "\n"
    << "min_size = " << FormatReal(e.field.min_size, 9) << "\n"
    << "max_size = " << FormatReal(e.field.max_size, 9) << "\n"
    << "min_separation = " << FormatReal(e.field.min_separation, 9) << "\n"
    << "sigma_det = " << FormatReal(e.detector.sigma_det, 9) << "\n"
    << "logit_scale = " << FormatReal(e.detector.logit_scale, 9) << "\n"
    << "reliability = " << FormatReal(e.detector.reliability, 9) << "\n"
    << "samples_per_object = " << e.detector.samples_per_object << "\n"
    << "anchor_jitter = " << FormatReal(e.detector.anchor_jitter, 9) << "\n"
    << "decay_factor = " << FormatReal(e.detector.decay_factor, 9) << "\n"
    << "label_fit = " << FormatReal(e.detector.label_fit, 9) << "\n"
    << "night_fraction = " << FormatReal(e.night_fraction, 9) << "\n"
    << "night_reliability = " << FormatReal(e.night_reliability, 9) << "\n\n"
    << "[swca]\n"
    << "window = " << cfg.swca.init.window << "\n"
    << "channels = " << cfg.swca.init.channels << "\n"
    << "d_k = " << cfg.swca.init.d_k << "\n"
    << "heads = " << cfg.swca.init.heads << "\n"
    << "height = " << cfg.swca.height << "\n"
    << "width = " << cfg.swca.width << "\n"
    << "offset_init_std = " << FormatReal(cfg.swca.init.offset_init_std, 9) << "\n"
    << "shift_x = " << FormatReal(cfg.swca.shift_x, 9) << "\n"
    << "shift_y = " << FormatReal(cfg.swca.shift_y, 9) << "\n\n"
    << "[run]\n"
    << "seed = " << cfg.seed << "\n";
  return o.str();
}

}  // namespace shiftlab
