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

// shiftlab command-line tool: annotation similarity, box correction runs,
// synthetic experiments and the alignment demo.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "shiftlab/io.h"
#include "shiftlab/matching.h"
#include "shiftlab/rng.h"
#include "shiftlab/run_config.h"
#include "shiftlab/simulator.h"
#include "shiftlab/swca.h"

namespace fs = std::filesystem;
using namespace shiftlab;

namespace {

constexpr std::uint64_t kShiftStream = 0x5348494654ULL;
constexpr std::uint64_t kGridStream = 0x47524944ULL;

// Precedence: SHIFTLAB_SEED, then --seed, then the config file.
std::uint64_t ResolveSeed(std::optional<std::uint64_t> flag,
                          std::uint64_t from_config) {
  if (const char* env = std::getenv("SHIFTLAB_SEED"); env && *env) {
    std::size_t used = 0;
    const std::string text(env);
    unsigned long long v = 0;
    try {
      v = std::stoull(text, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != text.size() || text.front() == '-') {
      throw std::invalid_argument("SHIFTLAB_SEED is not a non-negative integer: '" +
                                  text + "'");
    }
    return v;
  }
  return flag.value_or(from_config);
}

RunConfig LoadConfigOrDefault(const std::string& path) {
  return path.empty() ? RunConfig{} : LoadRunConfig(path);
}

std::string TrajectoryCsv(const Trajectory& t) {
  std::ostringstream o;
  o << "epoch,asim_true,asim_ref,beta,thr\n";
  const double nan = std::numeric_limits<double>::quiet_NaN();
  o << 0 << ',' << FormatReal(t.initial_asim_true, 6) << ','
    << FormatReal(t.initial_asim_ref, 6) << ',' << FormatReal(nan) << ','
    << FormatReal(nan) << '\n';
  for (const auto& r : t.epochs) {
    o << r.epoch + 1 << ',' << FormatReal(r.asim_true, 6) << ','
      << FormatReal(r.asim_ref, 6) << ',' << FormatReal(r.beta, 9) << ','
      << FormatReal(r.threshold, 9) << '\n';
  }
  return o.str();
}

void WriteAnnotations(const std::vector<ImageBoxes>& images,
                      const CategoryTable& categories, const fs::path& path) {
  SaveAnnotations(FromImageBoxes(images, categories), path);
}

CategoryTable CheckedCategories(const AnnotationFile& file,
                                const RunConfig& cfg,
                                std::vector<ImageBoxes>& images) {
  CategoryTable table(cfg.class_names);
  images = ToImageBoxes(file, table);
  if (table.size() != cfg.class_names.size()) {
    throw FormatError("category '" +
                      table.Name(static_cast<int>(cfg.class_names.size())) +
                      "' is not listed in the config classes");
  }
  return table;
}

// --- asim -------------------------------------------------------------------

struct AsimArgs {
  std::string ref;
  std::string sensed;
  std::string sim = "gw";
  std::string per_image;
};

int RunAsim(const AsimArgs& a) {
  CategoryTable table;
  const auto refs = ToImageBoxes(LoadAnnotations(a.ref), table);
  const auto senseds = ToImageBoxes(LoadAnnotations(a.sensed), table);
  Similarity sim;
  sim.kind = ParseSimilarityKind(a.sim.c_str());
  const ASimReport report = ASim(refs, senseds, sim);
  if (!a.per_image.empty()) {
    WriteFileAtomic(a.per_image, FormatPerImageCsv(report));
  }
  std::cout << FormatReal(report.aggregate, 2) << "\n";
  return 0;
}

// --- correct ----------------------------------------------------------------

struct CorrectArgs {
  std::string config;
  std::string ref;
  std::string samples_from;
  std::string out_prefix;
  std::optional<std::uint64_t> seed;
};

fs::path EpochPath(const std::string& prefix, std::size_t k) {
  return prefix + "_epoch" + std::to_string(k) + ".json";
}

// Correction driven by a fixed set of candidates per image; the true
// sensed boxes are unknown, so asim_true is reported as nan.
Trajectory CorrectFromSamples(const ExperimentConfig& cfg,
                              const std::vector<ImageBoxes>& refs,
                              const std::vector<SampleImage>& samples) {
  if (samples.size() != refs.size()) {
    throw FormatError("samples file has " + std::to_string(samples.size()) +
                      " images, reference has " + std::to_string(refs.size()));
  }
  Trajectory traj;
  std::vector<CorrectionState> states;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (samples[i].id != refs[i].id) {
      throw FormatError("samples image order differs from reference", samples[i].id);
    }
    states.push_back(CorrectionState::Initial(refs[i].boxes, cfg.max_epochs, cfg.gamma));
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  traj.initial_asim_true = nan;
  traj.initial_asim_ref = ASim(refs, refs, cfg.eval_similarity, cfg.category_mode).aggregate;
  traj.snapshots.push_back(states);

  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  for (int k = 0; k < cfg.max_epochs; ++k) {
    EpochRecord rec;
    rec.epoch = k;
    rec.beta = BetaSchedule(k, cfg.max_epochs, cfg.gamma);
    double thr_sum = 0.0;
    int thr_count = 0;
    std::vector<CorrectionState> next(states);
    for (std::size_t b0 = 0; b0 < states.size(); b0 += batch) {
      const std::size_t b1 = std::min(states.size(), b0 + batch);
      std::vector<std::vector<Bag>> bags;
      std::vector<double> pool;
      for (std::size_t i = b0; i < b1; ++i) {
        bags.push_back(BuildBags(samples[i].samples, states[i], cfg.qaf,
                                 static_cast<std::size_t>(cfg.top_q)));
        const auto scores =
            PoolScores(bags.back(), samples[i].samples, cfg.threshold_pool);
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
      for (std::size_t i = b0; i < b1; ++i) {
        next[i] = CorrectEpoch(states[i], bags[i - b0], thr);
        for (std::size_t j = 0; j < next[i].sensed_gts.size(); ++j) {
          if (next[i].sensed_gts[j].box != states[i].sensed_gts[j].box) ++rec.corrected;
        }
      }
    }
    states = std::move(next);
    rec.threshold = cfg.mode == SelectionMode::kTop1
                        ? -std::numeric_limits<double>::infinity()
                        : (thr_count == 0 ? nan : thr_sum / thr_count);
    std::vector<ImageBoxes> corrected;
    for (std::size_t i = 0; i < states.size(); ++i) {
      corrected.push_back({refs[i].id, states[i].sensed_gts});
    }
    rec.asim_true = nan;
    rec.asim_ref = ASim(corrected, refs, cfg.eval_similarity, cfg.category_mode).aggregate;
    traj.epochs.push_back(rec);
    traj.snapshots.push_back(states);
  }
  traj.final_states = states;
  return traj;
}

int RunCorrect(const CorrectArgs& a) {
  RunConfig cfg = LoadConfigOrDefault(a.config);
  cfg.experiment.seed = ResolveSeed(a.seed, cfg.seed);
  std::vector<ImageBoxes> refs;
  CategoryTable table = CheckedCategories(LoadAnnotations(a.ref), cfg, refs);

  Trajectory traj;
  if (a.samples_from == "sim") {
    std::vector<ScenePair> scenes;
    for (std::size_t i = 0; i < refs.size(); ++i) {
      scenes.push_back(ShiftScene(MixSeed(cfg.experiment.seed, kShiftStream, i),
                                  refs[i].id, refs[i].boxes,
                                  cfg.experiment.shift_model));
    }
    traj = RunCorrectionExperiment(cfg.experiment, std::move(scenes), true);
  } else {
    const auto samples = LoadSamples(a.samples_from, table);
    if (table.size() != cfg.class_names.size()) {
      throw FormatError("samples use a category not listed in the config classes");
    }
    traj = CorrectFromSamples(cfg.experiment, refs, samples);
  }

  for (std::size_t k = 0; k < traj.snapshots.size(); ++k) {
    std::vector<ImageBoxes> images;
    for (std::size_t i = 0; i < refs.size(); ++i) {
      images.push_back({refs[i].id, traj.snapshots[k][i].sensed_gts});
    }
    WriteAnnotations(images, table, EpochPath(a.out_prefix, k));
  }
  WriteFileAtomic(a.out_prefix + "_trajectory.csv", TrajectoryCsv(traj));
  return 0;
}

// --- simulate ---------------------------------------------------------------

struct OutArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

int RunSimulate(const OutArgs& a) {
  RunConfig cfg = LoadConfigOrDefault(a.config);
  cfg.seed = ResolveSeed(a.seed, cfg.seed);
  cfg.experiment.seed = cfg.seed;
  const Trajectory traj = RunCorrectionExperiment(cfg.experiment);
  const CategoryTable table(cfg.class_names);
  const fs::path dir(a.out);
  fs::create_directories(dir);

  const auto refs = ToImages(traj.scenes, false);
  const auto truth = ToImages(traj.scenes, true);
  const auto corrected = ToImages(traj.scenes, traj.final_states);
  WriteAnnotations(refs, table, dir / "reference.json");
  WriteAnnotations(truth, table, dir / "sensed_true.json");
  WriteAnnotations(corrected, table, dir / "corrected.json");
  WriteFileAtomic(dir / "trajectory.csv", TrajectoryCsv(traj));
  const auto& e = cfg.experiment;
  WriteFileAtomic(dir / "per_image_initial.csv",
                  FormatPerImageCsv(ASim(refs, truth, e.eval_similarity, e.category_mode)));
  WriteFileAtomic(dir / "per_image_final.csv",
                  FormatPerImageCsv(ASim(corrected, truth, e.eval_similarity, e.category_mode)));
  WriteFileAtomic(dir / "config.ini", FormatRunConfig(cfg));
  std::cout << "initial_asim " << FormatReal(traj.initial_asim_true, 2)
            << "\nfinal_asim " << FormatReal(traj.final_asim_true(), 2) << "\n";
  return 0;
}

// --- subset -----------------------------------------------------------------

int RunSubset(const std::string& csv) {
  for (const auto& id : SelectShiftSubset(ParsePerImageCsv(ReadFile(csv)))) {
    std::cout << id << "\n";
  }
  return 0;
}

// --- swca-demo --------------------------------------------------------------

// Sum of a few random plane waves per channel.
FeatureGrid SmoothGrid(int h, int w, int c, std::uint64_t seed) {
  Rng rng(seed);
  FeatureGrid g(h, w, c);
  constexpr int kWaves = 4;
  for (int ch = 0; ch < c; ++ch) {
    for (int k = 0; k < kWaves; ++k) {
      const double fx = rng.Uniform(-0.5, 0.5);
      const double fy = rng.Uniform(-0.5, 0.5);
      const double phase = rng.Uniform(0.0, 6.283185307179586);
      const double amp = rng.Normal(0.0, 1.0) / kWaves;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          g.at(y, x, ch) += amp * std::sin(fx * x + fy * y + phase);
        }
      }
    }
  }
  return g;
}

std::string OffsetStatsRow(const std::string& name, const OffsetField& f) {
  double sum[2] = {0, 0}, sq[2] = {0, 0}, max_abs = 0.0;
  const double n = static_cast<double>(f.h()) * f.w();
  for (int y = 0; y < f.h(); ++y) {
    for (int x = 0; x < f.w(); ++x) {
      for (int ch = 0; ch < 2; ++ch) {
        const double v = f.at(y, x, ch);
        sum[ch] += v;
        sq[ch] += v * v;
        max_abs = std::max(max_abs, std::abs(v));
      }
    }
  }
  const auto mean = [&](int ch) { return sum[ch] / n; };
  const auto sd = [&](int ch) {
    return std::sqrt(std::max(0.0, sq[ch] / n - mean(ch) * mean(ch)));
  };
  return name + "," + FormatReal(mean(0), 9) + "," + FormatReal(mean(1), 9) + "," +
         FormatReal(sd(0), 9) + "," + FormatReal(sd(1), 9) + "," +
         FormatReal(max_abs, 9) + "\n";
}

double MeanSquaredDiff(const FeatureGrid& a, const FeatureGrid& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  return a.size() == 0 ? 0.0 : s / static_cast<double>(a.size());
}

int RunSwcaDemo(const OutArgs& a) {
  RunConfig cfg = LoadConfigOrDefault(a.config);
  cfg.seed = ResolveSeed(a.seed, cfg.seed);
  const auto& d = cfg.swca;
  SwcaInit init = d.init;
  init.seed = MixSeed(cfg.seed, kGridStream, 1);
  const FeatureGrid reference =
      SmoothGrid(d.height, d.width, init.channels, MixSeed(cfg.seed, kGridStream, 0));
  OffsetField displacement(d.height, d.width, 2);
  for (int y = 0; y < d.height; ++y) {
    for (int x = 0; x < d.width; ++x) {
      displacement.at(y, x, 0) = -d.shift_x;
      displacement.at(y, x, 1) = -d.shift_y;
    }
  }
  const FeatureGrid sensed = Warp(reference, displacement);
  const SwcaOutput out = SwcaAlign(reference, sensed, MakeSwcaParams(init));

  const fs::path dir(a.out);
  fs::create_directories(dir);
  WriteFileAtomic(dir / "reference.bin", EncodeGrid(reference));
  WriteFileAtomic(dir / "sensed.bin", EncodeGrid(sensed));
  WriteFileAtomic(dir / "aligned.bin", EncodeGrid(out.aligned));
  WriteFileAtomic(dir / "offsets_block1.bin", EncodeGrid(out.offsets[0]));
  WriteFileAtomic(dir / "offsets_block2.bin", EncodeGrid(out.offsets[1]));
  WriteFileAtomic(dir / "offsets.csv",
                  "block,mean_dx,mean_dy,std_dx,std_dy,max_abs\n" +
                      OffsetStatsRow("1", out.offsets[0]) +
                      OffsetStatsRow("2", out.offsets[1]));
  WriteFileAtomic(dir / "residual.csv",
                  "grid,mse_to_reference\nsensed," +
                      FormatReal(MeanSquaredDiff(sensed, reference), 9) +
                      "\naligned," +
                      FormatReal(MeanSquaredDiff(out.aligned, reference), 9) + "\n");
  return 0;
}

// One JSON object on a single stderr line.
void ReportError(const std::string& type, const std::string& message,
                 const FormatError* fe = nullptr) {
  nlohmann::json j;
  j["error"] = type;
  j["message"] = message;
  if (fe != nullptr) {
    if (!fe->image_id().empty()) j["image_id"] = fe->image_id();
    if (fe->box_index()) j["box_index"] = *fe->box_index();
  }
  std::cerr << j.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"shiftlab: annotation shift correction toolkit"};
  app.require_subcommand(1);

  AsimArgs asim;
  auto* c_asim = app.add_subcommand("asim", "Matched similarity between two annotation files");
  c_asim->add_option("--ref", asim.ref, "Reference annotations")->required()->check(CLI::ExistingFile);
  c_asim->add_option("--sensed", asim.sensed, "Sensed annotations")->required()->check(CLI::ExistingFile);
  c_asim->add_option("--sim", asim.sim, "Box similarity")->check(CLI::IsMember({"iou", "giou", "gw"}));
  c_asim->add_option("--per-image", asim.per_image, "Per-image CSV output");

  CorrectArgs correct;
  auto* c_correct = app.add_subcommand("correct", "Progressive box correction");
  c_correct->add_option("--config", correct.config, "Config file")->check(CLI::ExistingFile);
  c_correct->add_option("--ref", correct.ref, "Reference annotations")->required()->check(CLI::ExistingFile);
  c_correct->add_option("--samples-from", correct.samples_from, "'sim' or a samples JSON file")->required();
  c_correct->add_option("--out-prefix", correct.out_prefix, "Output path prefix")->required();
  c_correct->add_option("--seed", correct.seed, "Master seed");

  OutArgs simulate;
  auto* c_sim = app.add_subcommand("simulate", "Synthetic correction experiment");
  c_sim->add_option("--config", simulate.config, "Config file")->check(CLI::ExistingFile);
  c_sim->add_option("--seed", simulate.seed, "Master seed");
  c_sim->add_option("--out", simulate.out, "Output directory")->required();

  std::string subset_csv;
  auto* c_subset = app.add_subcommand("subset", "Images below mean - std aSim");
  c_subset->add_option("--per-image", subset_csv, "Per-image CSV")->required()->check(CLI::ExistingFile);

  OutArgs demo;
  auto* c_demo = app.add_subcommand("swca-demo", "Align a displaced synthetic grid");
  c_demo->add_option("--config", demo.config, "Config file")->check(CLI::ExistingFile);
  c_demo->add_option("--seed", demo.seed, "Master seed");
  c_demo->add_option("--out", demo.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    ReportError("usage", e.what());
    return 2;
  }

  try {
    if (c_asim->parsed()) return RunAsim(asim);
    if (c_correct->parsed()) return RunCorrect(correct);
    if (c_sim->parsed()) return RunSimulate(simulate);
    if (c_subset->parsed()) return RunSubset(subset_csv);
    if (c_demo->parsed()) return RunSwcaDemo(demo);
  } catch (const FormatError& e) {
    ReportError("format", e.what(), &e);
    return 1;
  } catch (const std::invalid_argument& e) {
    ReportError("invalid_argument", e.what());
    return 1;
  } catch (const std::exception& e) {
    ReportError("runtime", e.what());
    return 1;
  }
  return 1;
}
