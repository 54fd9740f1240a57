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

#ifndef REGIONSPOT_EVALUATOR_HPP_
#define REGIONSPOT_EVALUATOR_HPP_

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "regionspot/alignment.hpp"
#include "regionspot/datasets.hpp"
#include "regionspot/trainer.hpp"

namespace regionspot {

// Candidate region with an objectness score; objectness is 1 for
// ground-truth boxes.
struct Proposal {
  BoxPrompt box;
  double score = 1.0;
  std::string source;
};

using ProposalMap = std::map<std::string, std::vector<Proposal>>;

// JSON lines: {image_id, bbox [x1,y1,x2,y2] normalized, score}.
ProposalMap load_proposals_jsonl(const std::string& path);

Proposal proposal_from_gt(const BoxPrompt& box);

// One region's ranked predictions; entry scores are detection scores,
// classification probability times proposal objectness.
struct RegionPrediction {
  std::string image_id;
  int region_index = 0;
  BoxPrompt box;
  double objectness = 1.0;
  std::vector<PredictedLabel> top;
};

// Runs encoders -> fusion -> matching -> ranking for one image.
// top_k = 0 keeps every vocabulary entry.
std::vector<RegionPrediction> infer_regions(const RegionSpotModel& model, const ImageInput& image,
                                            const std::vector<Proposal>& proposals,
                                            const TextEmbeddingTable& vocabulary, int top_k = 0);

void write_predictions_jsonl(const std::vector<RegionPrediction>& predictions,
                             const std::string& path);
std::vector<RegionPrediction> read_predictions_jsonl(const std::string& path);

double box_iou(const BoxPrompt& a, const BoxPrompt& b);

struct BucketThresholds {
  int64_t rare_below = 10;
  int64_t common_below = 100;
};

enum class EvalMode {
  kFixedBox,  // recognition over given boxes; predictions match GT by box identity
  kIoUMatch   // detection-style greedy matching at an IoU threshold
};

struct CategoryResult {
  std::string name;
  double ap = 0.0;
  int64_t gt_count = 0;
  int64_t train_count = 0;
  char bucket = 'f';  // 'r', 'c' or 'f'
};

struct EvalReport {
  std::vector<CategoryResult> per_category;
  double map = 0.0;
  std::optional<double> ap_rare;
  std::optional<double> ap_common;
  std::optional<double> ap_frequent;
  size_t evaluated_images = 0;
  size_t evaluated_regions = 0;
  std::vector<std::string> missing_from_vocabulary;
  BucketThresholds thresholds;
  EvalMode mode = EvalMode::kFixedBox;
  double iou_threshold = 0.5;

  nlohmann::json to_json() const;
  std::string to_table() const;  // AP values displayed x100
};

// 101-point interpolated average precision from a ranked TP/FP sequence.
double average_precision_101(const std::vector<bool>& is_tp, int64_t gt_count);

// Per-category AP over score-ranked regions; frequencies (training-set
// counts) drive the rare/common/frequent buckets. Bucket means cover
// categories with at least one ground-truth instance.
EvalReport evaluate_recognition(const std::vector<RegionPrediction>& predictions,
                                const std::vector<AnnotationRecord>& ground_truth,
                                const LabelSpace& frequencies,
                                BucketThresholds thresholds = {},
                                EvalMode mode = EvalMode::kFixedBox, double iou_threshold = 0.5);

struct AttentionExport {
  std::vector<MatF> heatmaps;  // one grid_rows x grid_cols map per box
  int grid_rows = 0;
  int grid_cols = 0;
  int layer_index = 0;
};

// Cross-attention rows for the given layer with the class-token column
// removed and rows renormalized, reshaped to the ViL grid.
AttentionExport export_attention(const RegionSpotModel& model, const ImageInput& image,
                                 const std::vector<BoxPrompt>& boxes, int layer);

// Writes one 8-bit grayscale PNG per box plus a raw float sidecar in the
// array container format. Returns the written PNG paths.
std::vector<std::string> write_attention_outputs(const AttentionExport& exp,
                                                 const std::string& out_dir,
                                                 const std::string& prefix = "attn");

}  // namespace regionspot

#endif  // REGIONSPOT_EVALUATOR_HPP_
