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

#ifndef REGIONSPOT_DATASETS_HPP_
#define REGIONSPOT_DATASETS_HPP_

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "regionspot/encoders.hpp"
#include "regionspot/image.hpp"

namespace regionspot {

struct Region {
  BoxPrompt box;
  std::string category;
};

// One annotated image: boxes normalized to [0,1], labels as class-name
// strings.
struct AnnotationRecord {
  std::string image_id;
  std::string image_path;
  int width = 0;
  int height = 0;
  std::vector<Region> regions;
};

// Pixel (x, y, w, h) -> normalized corners, and back.
BoxPrompt normalize_box_xywh(double x, double y, double w, double h, int img_w, int img_h);
std::array<double, 4> denormalize_box_xywh(const BoxPrompt& box, int img_w, int img_h);

struct LoadStats {
  size_t dropped_boxes = 0;  // zero-area or degenerate after clamping
};

enum class AnnotationFormat { kCocoJson };

// COCO-style JSON: images(id, file_name, width, height),
// annotations(image_id, bbox [x,y,w,h], category_id), categories(id, name).
// Parse failures raise FormatError with the byte offset; an annotation
// referencing an unknown image or category raises
// ReferentialIntegrityError.
std::vector<AnnotationRecord> load_annotations(const std::string& path,
                                               AnnotationFormat format = AnnotationFormat::kCocoJson,
                                               LoadStats* stats = nullptr);

// Ordered unique category names with training-set frequency counts.
// Identity is case-folded and whitespace-trimmed; the first-seen spelling
// is kept for display.
struct LabelSpace {
  std::vector<std::string> names;
  std::vector<int64_t> counts;

  int find(const std::string& name) const;
  void add(const std::string& name, int64_t count);
  size_t size() const { return names.size(); }

  static LabelSpace from_records(const std::vector<AnnotationRecord>& records);
};

// Union by case-folded name, frequencies summed, first-seen order.
LabelSpace merge_label_spaces(const std::vector<LabelSpace>& spaces);

struct BatchItem {
  ImageInput image;
  std::vector<BoxPrompt> boxes;
  // Index into Batch::vocabulary per box; -1 marks an augmented
  // background box with an all-zero target row.
  std::vector<int> targets;
};

struct Batch {
  std::vector<BatchItem> items;
  std::vector<std::string> vocabulary;  // names present in this batch, first-seen order
  std::vector<std::string> image_ids;
};

struct BatchOptions {
  std::string image_root;
  int workers = 1;
  int negative_boxes_per_image = 0;
};

// Records with no regions are excluded from batching; `skipped` counts them.
std::vector<size_t> usable_record_indices(const std::vector<AnnotationRecord>& records,
                                          size_t* skipped = nullptr);

// Deterministic shuffle-and-partition of the given indices for one epoch.
// Order depends only on (seed, epoch).
std::vector<std::vector<size_t>> plan_epoch(const std::vector<size_t>& indices, size_t batch_size,
                                            uint64_t seed, uint64_t epoch);

// Loads images and assembles targets against the per-batch vocabulary.
Batch make_batch(const std::vector<AnnotationRecord>& records, const std::vector<size_t>& indices,
                 const BatchOptions& opts, uint64_t negative_seed = 0);

// One-call form: plans the epoch for (seed, epoch) and materializes the
// batch at `batch_index`.
Batch sample_batch(const std::vector<AnnotationRecord>& records, size_t batch_size, uint64_t seed,
                   uint64_t epoch, size_t batch_index = 0, const BatchOptions& opts = {});

}  // namespace regionspot

#endif  // REGIONSPOT_DATASETS_HPP_
