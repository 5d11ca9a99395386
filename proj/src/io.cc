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

#include "shiftlab/io.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace shiftlab {

using nlohmann::json;

namespace {

std::string Describe(const std::string& what, const std::string& image_id,
                     std::optional<std::size_t> box_index) {
  std::string out;
  if (!image_id.empty()) out += "image '" + image_id + "'";
  if (box_index) out += (out.empty() ? "" : " ") + std::string("box ") + std::to_string(*box_index);
  if (!out.empty()) out += ": ";
  return out + what;
}

void RequireKeys(const json& obj, std::initializer_list<const char*> allowed,
                 const std::string& where, const std::string& image_id = {},
                 std::optional<std::size_t> box_index = std::nullopt) {
  if (!obj.is_object()) throw FormatError(where + " must be an object", image_id, box_index);
  for (const auto& [key, value] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(),
                     [&](const char* a) { return key == a; })) {
      throw FormatError("unknown field '" + key + "' in " + where, image_id,
                        box_index);
    }
  }
  for (const char* a : allowed) {
    if (!obj.contains(a)) {
      throw FormatError("missing field '" + std::string(a) + "' in " + where,
                        image_id, box_index);
    }
  }
}

double Number(const json& obj, const char* key, const std::string& image_id,
              std::optional<std::size_t> box_index) {
  const json& v = obj.at(key);
  if (!v.is_number()) {
    throw FormatError("field '" + std::string(key) + "' must be a number",
                      image_id, box_index);
  }
  return v.get<double>();
}

BoxH ParseBoxFields(const json& obj, const std::string& image_id,
                    std::optional<std::size_t> box_index) {
  try {
    return BoxH(Number(obj, "cx", image_id, box_index),
                Number(obj, "cy", image_id, box_index),
                Number(obj, "w", image_id, box_index),
                Number(obj, "h", image_id, box_index));
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what(), image_id, box_index);
  }
}

json BoxJson(const BoxH& b) {
  return json{{"cx", b.cx()}, {"cy", b.cy()}, {"w", b.w()}, {"h", b.h()}};
}

json ParseJson(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("malformed JSON: ") + e.what());
  }
}

}  // namespace

FormatError::FormatError(const std::string& what, std::string image_id,
                         std::optional<std::size_t> box_index)
    : std::runtime_error(Describe(what, image_id, box_index)),
      image_id_(std::move(image_id)),
      box_index_(box_index) {}

AnnotationFile ParseAnnotations(const std::string& text) {
  const json root = ParseJson(text);
  RequireKeys(root, {"images"}, "annotation file");
  if (!root["images"].is_array()) throw FormatError("'images' must be an array");
  AnnotationFile file;
  std::set<std::string> seen;
  for (const json& img : root["images"]) {
    std::string id;
    if (img.is_object() && img.contains("id") && img["id"].is_string()) {
      id = img["id"].get<std::string>();
    }
    RequireKeys(img, {"id", "boxes"}, "image entry", id);
    if (!img["id"].is_string()) throw FormatError("image id must be a string");
    if (!seen.insert(id).second) throw FormatError("duplicate image id", id);
    if (!img["boxes"].is_array()) throw FormatError("'boxes' must be an array", id);
    AnnotatedImage out{id, {}};
    for (std::size_t b = 0; b < img["boxes"].size(); ++b) {
      const json& box = img["boxes"][b];
      RequireKeys(box, {"cx", "cy", "w", "h", "category"}, "box entry", id, b);
      if (!box["category"].is_string()) {
        throw FormatError("category must be a string", id, b);
      }
      out.boxes.push_back(
          {ParseBoxFields(box, id, b), box["category"].get<std::string>()});
    }
    file.images.push_back(std::move(out));
  }
  return file;
}

std::string SerializeAnnotations(const AnnotationFile& file) {
  json images = json::array();
  for (const auto& img : file.images) {
    json boxes = json::array();
    for (const auto& b : img.boxes) {
      json j = BoxJson(b.box);
      j["category"] = b.category;
      boxes.push_back(std::move(j));
    }
    images.push_back(json{{"id", img.id}, {"boxes", std::move(boxes)}});
  }
  return json{{"images", std::move(images)}}.dump(2) + "\n";
}

AnnotationFile LoadAnnotations(const std::filesystem::path& path) {
  return ParseAnnotations(ReadFile(path));
}

void SaveAnnotations(const AnnotationFile& file,
                     const std::filesystem::path& path) {
  WriteFileAtomic(path, SerializeAnnotations(file));
}

CategoryTable::CategoryTable(std::vector<std::string> names)
    : names_(std::move(names)) {}

int CategoryTable::Index(const std::string& name) {
  const int found = Find(name);
  if (found >= 0) return found;
  names_.push_back(name);
  return static_cast<int>(names_.size()) - 1;
}

int CategoryTable::Find(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  return it == names_.end() ? -1 : static_cast<int>(it - names_.begin());
}

const std::string& CategoryTable::Name(int index) const {
  if (index < 0 || static_cast<std::size_t>(index) >= names_.size()) {
    throw std::out_of_range("category index " + std::to_string(index));
  }
  return names_[static_cast<std::size_t>(index)];
}

std::vector<ImageBoxes> ToImageBoxes(const AnnotationFile& file,
                                     CategoryTable& categories) {
  std::vector<ImageBoxes> out;
  out.reserve(file.images.size());
  for (const auto& img : file.images) {
    ImageBoxes ib{img.id, {}};
    for (const auto& b : img.boxes) {
      ib.boxes.push_back({b.box, categories.Index(b.category)});
    }
    out.push_back(std::move(ib));
  }
  return out;
}

AnnotationFile FromImageBoxes(const std::vector<ImageBoxes>& images,
                              const CategoryTable& categories) {
  AnnotationFile file;
  for (const auto& img : images) {
    AnnotatedImage out{img.id, {}};
    for (const auto& b : img.boxes) {
      out.boxes.push_back({b.box, categories.Name(b.category)});
    }
    file.images.push_back(std::move(out));
  }
  return file;
}

std::vector<SampleImage> ParseSamples(const std::string& text,
                                      CategoryTable& categories) {
  constexpr double kAbsentLogit = -30.0;
  const json root = ParseJson(text);
  RequireKeys(root, {"images"}, "samples file");
  if (!root["images"].is_array()) throw FormatError("'images' must be an array");

  // Register every category first so logit vectors share one width.
  for (const json& img : root["images"]) {
    if (!img.is_object() || !img.contains("samples") || !img["samples"].is_array()) {
      continue;
    }
    for (const json& s : img["samples"]) {
      if (!s.is_object()) continue;
      if (s.contains("logits") && s["logits"].is_object()) {
        for (const auto& [name, v] : s["logits"].items()) categories.Index(name);
      }
      if (s.contains("label") && s["label"].is_string()) {
        categories.Index(s["label"].get<std::string>());
      }
    }
  }

  std::vector<SampleImage> out;
  std::set<std::string> seen;
  for (const json& img : root["images"]) {
    std::string id;
    if (img.is_object() && img.contains("id") && img["id"].is_string()) {
      id = img["id"].get<std::string>();
    }
    RequireKeys(img, {"id", "samples"}, "sample image entry", id);
    if (!img["id"].is_string()) throw FormatError("image id must be a string");
    if (!seen.insert(id).second) throw FormatError("duplicate image id", id);
    if (!img["samples"].is_array()) throw FormatError("'samples' must be an array", id);
    SampleImage si{id, {}};
    for (std::size_t i = 0; i < img["samples"].size(); ++i) {
      const json& s = img["samples"][i];
      RequireKeys(s, {"pred", "anchor", "logits", "label"}, "sample entry", id, i);
      RequireKeys(s["pred"], {"cx", "cy", "w", "h"}, "sample pred", id, i);
      RequireKeys(s["anchor"], {"cx", "cy", "w", "h"}, "sample anchor", id, i);
      if (!s["logits"].is_object()) throw FormatError("'logits' must be an object", id, i);
      std::vector<double> logits(categories.size(), kAbsentLogit);
      for (const auto& [name, v] : s["logits"].items()) {
        if (!v.is_number() || !std::isfinite(v.get<double>())) {
          throw FormatError("logit for '" + name + "' must be a finite number", id, i);
        }
        logits[static_cast<std::size_t>(categories.Find(name))] = v.get<double>();
      }
      std::optional<int> label;
      if (s["label"].is_string()) {
        label = categories.Find(s["label"].get<std::string>());
      } else if (!s["label"].is_null()) {
        throw FormatError("label must be a category name or null", id, i);
      }
      si.samples.push_back({ParseBoxFields(s["pred"], id, i),
                            ParseBoxFields(s["anchor"], id, i), std::move(logits),
                            label});
    }
    out.push_back(std::move(si));
  }
  return out;
}

std::vector<SampleImage> LoadSamples(const std::filesystem::path& path,
                                     CategoryTable& categories) {
  return ParseSamples(ReadFile(path), categories);
}

void WriteFileAtomic(const std::filesystem::path& path,
                     const std::string& contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw std::runtime_error("write to '" + tmp.string() + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

std::string ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string FormatReal(double v, int precision) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

std::string FormatPerImageCsv(const ASimReport& report) {
  std::string out = "image_id,asim\n";
  for (const auto& s : report.per_image) {
    out += s.id + "," + FormatReal(s.asim, 9) + "\n";
  }
  return out;
}

std::vector<std::pair<std::string, double>> ParsePerImageCsv(
    const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("per-image CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "image_id,asim") {
    throw FormatError("per-image CSV header must be 'image_id,asim'");
  }
  std::vector<std::pair<std::string, double>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) {
      throw FormatError("line " + std::to_string(lineno) + ": expected 'id,value'");
    }
    const std::string id = line.substr(0, comma);
    const std::string value = line.substr(comma + 1);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(value, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != value.size() || value.empty() || !std::isfinite(v)) {
      throw FormatError("line " + std::to_string(lineno) + ": bad aSim value '" +
                        value + "'", id);
    }
    rows.emplace_back(id, v);
  }
  return rows;
}

namespace {

void PutU32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t GetU32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  }
  return v;
}

}  // namespace

std::string EncodeGrid(const FeatureGrid& grid) {
  std::string out;
  out.reserve(16 + 4 * grid.size());
  PutU32(out, static_cast<std::uint32_t>(grid.h()));
  PutU32(out, static_cast<std::uint32_t>(grid.w()));
  PutU32(out, static_cast<std::uint32_t>(grid.c()));
  PutU32(out, 0);
  for (double v : grid.data()) {
    PutU32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

FeatureGrid DecodeGrid(const std::string& bytes) {
  if (bytes.size() < 16) throw FormatError("grid file shorter than its header");
  const auto h = GetU32(bytes, 0), w = GetU32(bytes, 4), c = GetU32(bytes, 8);
  const std::size_t n = static_cast<std::size_t>(h) * w * c;
  if (n == 0 || bytes.size() != 16 + 4 * n) {
    throw FormatError("grid payload does not match its header");
  }
  FeatureGrid grid(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
  for (std::size_t i = 0; i < n; ++i) {
    grid.data()[i] = std::bit_cast<float>(GetU32(bytes, 16 + 4 * i));
  }
  return grid;
}

}  // namespace shiftlab
