// Copyright 2026 The RegionSpot Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "regionspot/datasets.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <thread>

#include <nlohmann/json.hpp>

#include "regionspot/errors.hpp"

namespace regionspot {

using nlohmann::json;

BoxPrompt normalize_box_xywh(double x, double y, double w, double h, int img_w, int img_h) {
  BoxPrompt box;
  box.x1 = x / img_w;
  box.y1 = y / img_h;
  box.x2 = (x + w) / img_w;
  box.y2 = (y + h) / img_h;
  return box;
}

std::array<double, 4> denormalize_box_xywh(const BoxPrompt& box, int img_w, int img_h) {
  return {box.x1 * img_w, box.y1 * img_h, (box.x2 - box.x1) * img_w, (box.y2 - box.y1) * img_h};
}

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string label_key(const std::string& name) { return fold_case(trim(name)); }

std::string id_to_string(const json& v, const char* what) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<int64_t>());
  if (v.is_number_unsigned()) return std::to_string(v.get<uint64_t>());
  throw FormatError(std::string("id field '") + what + "' must be a string or integer");
}

}  // namespace

std::vector<AnnotationRecord> load_annotations(const std::string& path, AnnotationFormat format,
                                               LoadStats* stats) {
  if (format != AnnotationFormat::kCocoJson) {
    throw ValidationError("unsupported annotation format");
  }
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotation file: " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("JSON parse failure in " + path + ": " + e.what(),
                      static_cast<long>(e.byte));
  }
  if (!doc.is_object() || !doc.contains("images") || !doc.contains("annotations") ||
      !doc.contains("categories")) {
    throw FormatError("annotation file " + path +
                      " must contain 'images', 'annotations' and 'categories'");
  }

  std::map<std::string, std::string> category_names;  // id -> name
  for (const auto& cat : doc["categories"]) {
    const std::string id = id_to_string(cat.at("id"), "categories.id");
    const std::string name = cat.at("name").get<std::string>();
    if (trim(name).empty()) {
      throw FormatError("category id " + id + " has an empty name");
    }
    category_names[id] = name;
  }

  std::vector<AnnotationRecord> records;
  std::map<std::string, size_t> record_index;
  for (const auto& img : doc["images"]) {
    AnnotationRecord rec;
    rec.image_id = id_to_string(img.at("id"), "images.id");
    rec.image_path = img.at("file_name").get<std::string>();
    rec.width = img.at("width").get<int>();
    rec.height = img.at("height").get<int>();
    if (rec.width < 1 || rec.height < 1) {
      throw FormatError("image " + rec.image_id + " has non-positive dimensions");
    }
    record_index[rec.image_id] = records.size();
    records.push_back(std::move(rec));
  }

  LoadStats local;
  for (const auto& ann : doc["annotations"]) {
    const std::string image_id = id_to_string(ann.at("image_id"), "annotations.image_id");
    const auto rec_it = record_index.find(image_id);
    if (rec_it == record_index.end()) {
      throw ReferentialIntegrityError("annotation references unknown image_id " + image_id);
    }
    const std::string cat_id = id_to_string(ann.at("category_id"), "annotations.category_id");
    const auto cat_it = category_names.find(cat_id);
    if (cat_it == category_names.end()) {
      throw ReferentialIntegrityError("annotation references unknown category_id " + cat_id);
    }
    const auto& bbox = ann.at("bbox");
    if (!bbox.is_array() || bbox.size() != 4) {
      throw FormatError("annotation bbox must be [x, y, w, h]");
    }
    AnnotationRecord& rec = records[rec_it->second];
    BoxPrompt box = normalize_box_xywh(bbox[0].get<double>(), bbox[1].get<double>(),
                                       bbox[2].get<double>(), bbox[3].get<double>(), rec.width,
                                       rec.height);
    box.x1 = std::clamp(box.x1, 0.0, 1.0);
    box.y1 = std::clamp(box.y1, 0.0, 1.0);
    box.x2 = std::clamp(box.x2, 0.0, 1.0);
    box.y2 = std::clamp(box.y2, 0.0, 1.0);
    if (!(box.x1 < box.x2) || !(box.y1 < box.y2)) {
      ++local.dropped_boxes;
      continue;
    }
    rec.regions.push_back({box, cat_it->second});
  }
  if (stats) *stats = local;
  return records;
}

int LabelSpace::find(const std::string& name) const {
  const std::string key = label_key(name);
  for (size_t i = 0; i < names.size(); ++i) {
    if (label_key(names[i]) == key) return static_cast<int>(i);
  }
  return -1;
}

void LabelSpace::add(const std::string& name, int64_t count) {
  const int idx = find(name);
  if (idx >= 0) {
    counts[static_cast<size_t>(idx)] += count;
  } else {
    names.push_back(trim(name));
    counts.push_back(count);
  }
}

LabelSpace LabelSpace::from_records(const std::vector<AnnotationRecord>& records) {
  LabelSpace space;
  for (const auto& rec : records) {
    for (const auto& region : rec.regions) space.add(region.category, 1);
  }
  return space;
}

LabelSpace merge_label_spaces(const std::vector<LabelSpace>& spaces) {
  if (spaces.empty()) throw InvalidInputError("merge_label_spaces requires at least one space");
  LabelSpace merged;
  for (const auto& space : spaces) {
    for (size_t i = 0; i < space.names.size(); ++i) merged.add(space.names[i], space.counts[i]);
  }
  return merged;
}

std::vector<size_t> usable_record_indices(const std::vector<AnnotationRecord>& records,
                                          size_t* skipped) {
  std::vector<size_t> usable;
  size_t n_skipped = 0;
  for (size_t i = 0; i < records.size(); ++i) {
    if (records[i].regions.empty()) {
      ++n_skipped;
    } else {
      usable.push_back(i);
    }
  }
  if (skipped) *skipped = n_skipped;
  return usable;
}

std::vector<std::vector<size_t>> plan_epoch(const std::vector<size_t>& indices, size_t batch_size,
                                            uint64_t seed, uint64_t epoch) {
  if (batch_size == 0) throw ValidationError("batch_size must be positive");
  std::vector<size_t> order = indices;
  Rng rng(mix_seed(seed, mix_seed(epoch, 0x65706F63ULL)));
  rng.shuffle(order);
  std::vector<std::vector<size_t>> batches;
  for (size_t start = 0; start < order.size(); start += batch_size) {
    const size_t end = std::min(order.size(), start + batch_size);
    batches.emplace_back(order.begin() + static_cast<long>(start),
                         order.begin() + static_cast<long>(end));
  }
  return batches;
}

namespace {

ImageInput load_record_image(const AnnotationRecord& rec, const std::string& image_root) {
  std::string path = rec.image_path;
  if (!image_root.empty() && !path.empty() && path.front() != '/') {
    path = image_root + "/" + path;
  }
  ImageInput img = read_ppm(path);
  img.id = rec.image_id;
  return img;
}

BoxPrompt random_negative_box(Rng& rng) {
  // Side lengths in [0.1, 0.5] keep negatives plausible as regions.
  const double w = rng.uniform(0.1, 0.5);
  const double h = rng.uniform(0.1, 0.5);
  const double x1 = rng.uniform(0.0, 1.0 - w);
  const double y1 = rng.uniform(0.0, 1.0 - h);
  return {x1, y1, x1 + w, y1 + h};
}

}  // namespace

Batch make_batch(const std::vector<AnnotationRecord>& records, const std::vector<size_t>& indices,
                 const BatchOptions& opts, uint64_t negative_seed) {
  Batch batch;
  batch.items.resize(indices.size());

  // Per-batch vocabulary in first-seen order over the batch's regions.
  std::vector<std::string> keys;
  for (size_t idx : indices) {
    for (const auto& region : records[idx].regions) {
      const std::string key = label_key(region.category);
      if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
        keys.push_back(key);
        batch.vocabulary.push_back(trim(region.category));
      }
    }
  }

  const int workers = std::max(1, opts.workers);
  auto build_item = [&](size_t slot) {
    const AnnotationRecord& rec = records[indices[slot]];
    BatchItem item;
    item.image = load_record_image(rec, opts.image_root);
    for (const auto& region : rec.regions) {
      item.boxes.push_back(region.box);
      const std::string key = label_key(region.category);
      const auto it = std::find(keys.begin(), keys.end(), key);
      item.targets.push_back(static_cast<int>(it - keys.begin()));
    }
    if (opts.negative_boxes_per_image > 0) {
      Rng rng(mix_seed(negative_seed, mix_seed(indices[slot], 0x6E656762ULL)));
      for (int n = 0; n < opts.negative_boxes_per_image; ++n) {
        item.boxes.push_back(random_negative_box(rng));
        item.targets.push_back(-1);
      }
    }
    batch.items[slot] = std::move(item);
  };

  if (workers <= 1 || indices.size() <= 1) {
    for (size_t i = 0; i < indices.size(); ++i) build_item(i);
  } else {
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    for (int w = 0; w < std::min<int>(workers, static_cast<int>(indices.size())); ++w) {
      pool.emplace_back([&]() {
        for (size_t i = next.fetch_add(1); i < indices.size(); i = next.fetch_add(1)) {
          build_item(i);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  for (size_t idx : indices) batch.image_ids.push_back(records[idx].image_id);
  return batch;
}

Batch sample_batch(const std::vector<AnnotationRecord>& records, size_t batch_size, uint64_t seed,
                   uint64_t epoch, size_t batch_index, const BatchOptions& opts) {
  if (records.empty()) throw InvalidInputError("sample_batch requires non-empty records");
  const auto usable = usable_record_indices(records);
  const auto plan = plan_epoch(usable, batch_size, seed, epoch);
  if (batch_index >= plan.size()) {
    throw RangeError("batch_index " + std::to_string(batch_index) + " outside epoch of " +
                     std::to_string(plan.size()) + " batches");
  }
  return make_batch(records, plan[batch_index], opts, mix_seed(seed, epoch));
}

}  // namespace regionspot
