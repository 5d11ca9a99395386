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

#ifndef SHIFTLAB_IO_H_
#define SHIFTLAB_IO_H_

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "shiftlab/box.h"
#include "shiftlab/cbc.h"
#include "shiftlab/matching.h"
#include "shiftlab/swca.h"

namespace shiftlab {

// Structured load/validation failure. `image_id` and `box_index` are set
// when the failure is attributable to one box.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::string image_id = {},
              std::optional<std::size_t> box_index = std::nullopt);

  const std::string& image_id() const { return image_id_; }
  std::optional<std::size_t> box_index() const { return box_index_; }

 private:
  std::string image_id_;
  std::optional<std::size_t> box_index_;
};

struct NamedBox {
  BoxH box;
  std::string category;

  friend bool operator==(const NamedBox&, const NamedBox&) = default;
};

struct AnnotatedImage {
  std::string id;
  std::vector<NamedBox> boxes;

  friend bool operator==(const AnnotatedImage&, const AnnotatedImage&) = default;
};

// {"images": [{"id": str, "boxes": [{"cx", "cy", "w", "h", "category"}]}]}
struct AnnotationFile {
  std::vector<AnnotatedImage> images;

  friend bool operator==(const AnnotationFile&, const AnnotationFile&) = default;
};

AnnotationFile ParseAnnotations(const std::string& text);
std::string SerializeAnnotations(const AnnotationFile& file);
AnnotationFile LoadAnnotations(const std::filesystem::path& path);
void SaveAnnotations(const AnnotationFile& file,
                     const std::filesystem::path& path);

// Category names <-> dense indices, in first-registration order.
class CategoryTable {
 public:
  CategoryTable() = default;
  explicit CategoryTable(std::vector<std::string> names);

  int Index(const std::string& name);  // registers unseen names
  int Find(const std::string& name) const;  // -1 when absent
  const std::string& Name(int index) const;
  std::size_t size() const { return names_.size(); }

 private:
  std::vector<std::string> names_;
};

std::vector<ImageBoxes> ToImageBoxes(const AnnotationFile& file,
                                     CategoryTable& categories);
AnnotationFile FromImageBoxes(const std::vector<ImageBoxes>& images,
                              const CategoryTable& categories);

// Per-image candidate samples:
// {"images": [{"id": str, "samples": [{"pred": {cx, cy, w, h},
//   "anchor": {...}, "logits": {category: real}, "label": category|null}]}]}
// Categories missing from "logits" get a strongly negative logit.
struct SampleImage {
  std::string id;
  std::vector<Sample> samples;
};
std::vector<SampleImage> ParseSamples(const std::string& text,
                                      CategoryTable& categories);
std::vector<SampleImage> LoadSamples(const std::filesystem::path& path,
                                     CategoryTable& categories);

// Writes through a temporary sibling and renames over `path`.
void WriteFileAtomic(const std::filesystem::path& path,
                     const std::string& contents);
std::string ReadFile(const std::filesystem::path& path);

// Fixed-precision decimal for CSV/report output; "-inf"/"inf"/"nan" for
// non-finite values.
std::string FormatReal(double v, int precision = 6);

// image_id,asim
std::string FormatPerImageCsv(const ASimReport& report);
std::vector<std::pair<std::string, double>> ParsePerImageCsv(
    const std::string& text);

// Little-endian float32 grid with a 16-byte header (h, w, c, reserved) of
// uint32 values.
std::string EncodeGrid(const FeatureGrid& grid);
FeatureGrid DecodeGrid(const std::string& bytes);

}  // namespace shiftlab

#endif  // SHIFTLAB_IO_H_
