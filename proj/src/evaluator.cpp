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

#include "regionspot/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "regionspot/container.hpp"
#include "regionspot/errors.hpp"

namespace regionspot {

using nlohmann::json;

namespace {

std::string label_key(const std::string& name) {
  std::string trimmed = name;
  const size_t b = trimmed.find_first_not_of(" \t\r\n");
  const size_t e = trimmed.find_last_not_of(" \t\r\n");
  trimmed = b == std::string::npos ? "" : trimmed.substr(b, e - b + 1);
  return fold_case(trimmed);
}

std::string id_to_string(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<int64_t>());
  if (v.is_number_unsigned()) return std::to_string(v.get<uint64_t>());
  throw FormatError("image_id must be a string or integer");
}

}  // namespace

ProposalMap load_proposals_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open proposals file: " + path);
  ProposalMap map;
  std::string line;
  long line_no = 0;
  long offset = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      offset += 1;
      continue;
    }
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError("bad proposal JSON on line " + std::to_string(line_no) + ": " + e.what(),
                        offset + static_cast<long>(e.byte));
    }
    Proposal p;
    const auto& bbox = j.at("bbox");
    if (!bbox.is_array() || bbox.size() != 4) {
      throw FormatError("proposal bbox must be [x1, y1, x2, y2] on line " +
                        std::to_string(line_no));
    }
    p.box = {bbox[0].get<double>(), bbox[1].get<double>(), bbox[2].get<double>(),
             bbox[3].get<double>()};
    p.score = j.at("score").get<double>();
    if (!(p.score >= 0.0 && p.score <= 1.0)) {
      throw FormatError("proposal score outside [0,1] on line " + std::to_string(line_no));
    }
    if (j.contains("source")) p.source = j["source"].get<std::string>();
    validate_box(p.box, static_cast<int>(line_no));
    map[id_to_string(j.at("image_id"))].push_back(std::move(p));
    offset += static_cast<long>(line.size()) + 1;
  }
  return map;
}

Proposal proposal_from_gt(const BoxPrompt& box) { return Proposal{box, 1.0, "gt"}; }

std::vector<RegionPrediction> infer_regions(const RegionSpotModel& model, const ImageInput& image,
                                            const std::vector<Proposal>& proposals,
                                            const TextEmbeddingTable& vocabulary, int top_k) {
  if (vocabulary.size() == 0) throw InvalidInputError("infer_regions: empty vocabulary");
  if (proposals.empty()) return {};
  std::vector<BoxPrompt> boxes;
  boxes.reserve(proposals.size());
  for (const auto& p : proposals) boxes.push_back(p.box);

  const PositionAwareTokenSet p = model.encoders.localization->encode(image, boxes, model.tap);
  const SemanticFeatureMap v = model.encoders.vil->encode(image);
  const FusionResult<float> fused = fusion_forward(p, v, model.fusion_config, model.fusion);
  const MatchingScoresT<float> scores =
      matching_scores<float>(fused.tokens, vocabulary.embeddings, model.temperature);

  const int k = top_k == 0 ? vocabulary.size() : top_k;
  auto ranked = predict_labels(scores.logits, vocabulary.category_names, k);

  std::vector<RegionPrediction> out(proposals.size());
  for (size_t i = 0; i < proposals.size(); ++i) {
    RegionPrediction& pred = out[i];
    pred.image_id = image.id;
    pred.region_index = static_cast<int>(i);
    pred.box = proposals[i].box;
    pred.objectness = proposals[i].score;
    pred.top = std::move(ranked[i]);
    // Detection score = classification probability x proposal objectness.
    for (auto& entry : pred.top) entry.probability *= proposals[i].score;
  }
  return out;
}

void write_predictions_jsonl(const std::vector<RegionPrediction>& predictions,
                             const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write predictions file: " + path);
  for (const auto& pred : predictions) {
    json top = json::array();
    for (const auto& entry : pred.top) {
      top.push_back({{"category", entry.category}, {"score", entry.probability}});
    }
    out << json{{"image_id", pred.image_id},
                {"box", {pred.box.x1, pred.box.y1, pred.box.x2, pred.box.y2}},
                {"top", top}}
               .dump()
        << "\n";
  }
}

std::vector<RegionPrediction> read_predictions_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open predictions file: " + path);
  std::vector<RegionPrediction> out;
  std::string line;
  long line_no = 0;
  std::map<std::string, int> per_image_count;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError("bad prediction JSON on line " + std::to_string(line_no) + ": " + e.what(),
                        static_cast<long>(e.byte));
    }
    RegionPrediction pred;
    pred.image_id = id_to_string(j.at("image_id"));
    const auto& box = j.at("box");
    pred.box = {box[0].get<double>(), box[1].get<double>(), box[2].get<double>(),
                box[3].get<double>()};
    pred.region_index = per_image_count[pred.image_id]++;
    for (const auto& entry : j.at("top")) {
      PredictedLabel label;
      label.category = entry.at("category").get<std::string>();
      label.probability = entry.at("score").get<double>();
      pred.top.push_back(std::move(label));
    }
    out.push_back(std::move(pred));
  }
  return out;
}

double box_iou(const BoxPrompt& a, const BoxPrompt& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = a.width() * a.height() + b.width() * b.height() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double average_precision_101(const std::vector<bool>& is_tp, int64_t gt_count) {
  if (gt_count <= 0) return 0.0;
  std::vector<double> precision(is_tp.size());
  std::vector<double> recall(is_tp.size());
  int64_t tp = 0;
  for (size_t i = 0; i < is_tp.size(); ++i) {
    if (is_tp[i]) ++tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(gt_count);
  }
  double total = 0.0;
  for (int t = 0; t <= 100; ++t) {
    const double r = static_cast<double>(t) / 100.0;
    double best = 0.0;
    for (size_t i = 0; i < is_tp.size(); ++i) {
      if (recall[i] >= r) best = std::max(best, precision[i]);
    }
    total += best;
  }
  return total / 101.0;
}

namespace {

constexpr double kBoxIdentityTol = 1e-6;

bool same_box(const BoxPrompt& a, const BoxPrompt& b) {
  return std::abs(a.x1 - b.x1) <= kBoxIdentityTol && std::abs(a.y1 - b.y1) <= kBoxIdentityTol &&
         std::abs(a.x2 - b.x2) <= kBoxIdentityTol && std::abs(a.y2 - b.y2) <= kBoxIdentityTol;
}

struct GtRegion {
  BoxPrompt box;
  std::string category_key;
};

struct Detection {
  double score = 0.0;
  size_t order = 0;  // position in the prediction stream, for tie-breaks
  const RegionPrediction* pred = nullptr;
};

}  // namespace

EvalReport evaluate_recognition(const std::vector<RegionPrediction>& predictions,
                                const std::vector<AnnotationRecord>& ground_truth,
                                const LabelSpace& frequencies, BucketThresholds thresholds,
                                EvalMode mode, double iou_threshold) {
  EvalReport report;
  report.thresholds = thresholds;
  report.mode = mode;
  report.iou_threshold = iou_threshold;

  // Ground truth indexed by image; categories in first-seen order.
  std::map<std::string, std::vector<GtRegion>> gt_by_image;
  std::vector<std::string> category_order;        // keys
  std::map<std::string, std::string> display;     // key -> first-seen spelling
  std::map<std::string, int64_t> gt_counts;
  for (const auto& rec : ground_truth) {
    for (const auto& region : rec.regions) {
      const std::string key = label_key(region.category);
      gt_by_image[rec.image_id].push_back({region.box, key});
      if (display.emplace(key, region.category).second) category_order.push_back(key);
      ++gt_counts[key];
    }
  }

  for (const auto& pred : predictions) {
    const auto it = gt_by_image.find(pred.image_id);
    if (it == gt_by_image.end()) {
      throw ValidationError("prediction references unknown image_id '" + pred.image_id + "'");
    }
    if (mode == EvalMode::kFixedBox) {
      const bool matches_any = std::any_of(it->second.begin(), it->second.end(),
                                           [&](const GtRegion& g) { return same_box(g.box, pred.box); });
      if (!matches_any) {
        throw ValidationError("fixed-box evaluation: prediction box on image '" + pred.image_id +
                              "' does not match any ground-truth box");
      }
    }
  }

  std::set<std::string> predicted_keys;
  for (const auto& pred : predictions) {
    for (const auto& entry : pred.top) predicted_keys.insert(label_key(entry.category));
  }

  double ap_sum = 0.0;
  double bucket_sum[3] = {0.0, 0.0, 0.0};
  int64_t bucket_n[3] = {0, 0, 0};
  for (const auto& key : category_order) {
    // Ranked detections for this category.
    std::vector<Detection> dets;
    size_t order = 0;
    for (const auto& pred : predictions) {
      for (const auto& entry : pred.top) {
        if (label_key(entry.category) == key) {
          dets.push_back({entry.probability, order, &pred});
        }
      }
      ++order;
    }
    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.order < b.order;
    });

    // Greedy matching against unused ground-truth regions of this category.
    std::map<std::string, std::vector<bool>> used;
    for (const auto& [img, regions] : gt_by_image) used[img].assign(regions.size(), false);
    std::vector<bool> is_tp;
    is_tp.reserve(dets.size());
    for (const auto& det : dets) {
      const auto& regions = gt_by_image.at(det.pred->image_id);
      auto& used_flags = used.at(det.pred->image_id);
      int best = -1;
      double best_iou = 0.0;
      for (size_t g = 0; g < regions.size(); ++g) {
        if (used_flags[g] || regions[g].category_key != key) continue;
        if (mode == EvalMode::kFixedBox) {
          if (same_box(regions[g].box, det.pred->box)) {
            best = static_cast<int>(g);
            break;
          }
        } else {
          const double iou = box_iou(regions[g].box, det.pred->box);
          if (iou >= iou_threshold && iou > best_iou) {
            best_iou = iou;
            best = static_cast<int>(g);
          }
        }
      }
      if (best >= 0) {
        used_flags[static_cast<size_t>(best)] = true;
        is_tp.push_back(true);
      } else {
        is_tp.push_back(false);
      }
    }

    CategoryResult result;
    result.name = display.at(key);
    result.gt_count = gt_counts.at(key);
    result.ap = average_precision_101(is_tp, result.gt_count);
    const int freq_idx = frequencies.find(result.name);
    result.train_count = freq_idx >= 0 ? frequencies.counts[static_cast<size_t>(freq_idx)] : 0;
    if (result.train_count < thresholds.rare_below) {
      result.bucket = 'r';
    } else if (result.train_count < thresholds.common_below) {
      result.bucket = 'c';
    } else {
      result.bucket = 'f';
    }
    const int b = result.bucket == 'r' ? 0 : (result.bucket == 'c' ? 1 : 2);
    bucket_sum[b] += result.ap;
    bucket_n[b] += 1;
    ap_sum += result.ap;
    if (predicted_keys.find(key) == predicted_keys.end()) {
      report.missing_from_vocabulary.push_back(result.name);
    }
    report.per_category.push_back(std::move(result));
  }

  report.map = report.per_category.empty() ? 0.0 : ap_sum / static_cast<double>(report.per_category.size());
  if (bucket_n[0] > 0) report.ap_rare = bucket_sum[0] / static_cast<double>(bucket_n[0]);
  if (bucket_n[1] > 0) report.ap_common = bucket_sum[1] / static_cast<double>(bucket_n[1]);
  if (bucket_n[2] > 0) report.ap_frequent = bucket_sum[2] / static_cast<double>(bucket_n[2]);

  std::set<std::string> images;
  for (const auto& pred : predictions) images.insert(pred.image_id);
  report.evaluated_images = images.size();
  report.evaluated_regions = predictions.size();
  return report;
}

json EvalReport::to_json() const {
  json cats = json::array();
  for (const auto& c : per_category) {
    cats.push_back({{"name", c.name},
                    {"ap", c.ap},
                    {"gt_count", c.gt_count},
                    {"train_count", c.train_count},
                    {"bucket", std::string(1, c.bucket)}});
  }
  auto opt = [](const std::optional<double>& v) {
    return v.has_value() ? json(*v) : json(nullptr);
  };
  return json{{"map", map},
              {"ap_rare", opt(ap_rare)},
              {"ap_common", opt(ap_common)},
              {"ap_frequent", opt(ap_frequent)},
              {"per_category", cats},
              {"evaluated_images", evaluated_images},
              {"evaluated_regions", evaluated_regions},
              {"missing_from_vocabulary", missing_from_vocabulary},
              {"bucket_thresholds",
               {{"rare_below", thresholds.rare_below}, {"common_below", thresholds.common_below}}},
              {"mode", mode == EvalMode::kFixedBox ? "fixed_box" : "iou_match"},
              {"iou_threshold", iou_threshold}};
}

std::string EvalReport::to_table() const {
  std::ostringstream out;
  char line[160];
  out << "category                          AP   bucket  gt  train\n";
  for (const auto& c : per_category) {
    std::snprintf(line, sizeof(line), "%-30s %6.1f   %c     %4lld  %5lld\n", c.name.c_str(),
                  c.ap * 100.0, c.bucket, static_cast<long long>(c.gt_count),
                  static_cast<long long>(c.train_count));
    out << line;
  }
  auto show = [](const std::optional<double>& v) {
    return v.has_value() ? *v * 100.0 : std::nan("");
  };
  std::snprintf(line, sizeof(line),
                "mAP %.1f | AP_r %.1f | AP_c %.1f | AP_f %.1f | images %zu | regions %zu\n",
                map * 100.0, show(ap_rare), show(ap_common), show(ap_frequent), evaluated_images,
                evaluated_regions);
  out << line;
  if (!missing_from_vocabulary.empty()) {
    out << "categories never predicted (automatic miss):";
    for (const auto& name : missing_from_vocabulary) out << " " << name;
    out << "\n";
  }
  return out.str();
}

AttentionExport export_attention(const RegionSpotModel& model, const ImageInput& image,
                                 const std::vector<BoxPrompt>& boxes, int layer) {
  if (layer < 0 || layer >= model.fusion_config.depth) {
    throw RangeError("attention layer " + std::to_string(layer) + " outside [0, " +
                     std::to_string(model.fusion_config.depth) + ")");
  }
  const PositionAwareTokenSet p = model.encoders.localization->encode(image, boxes, model.tap);
  const SemanticFeatureMap v = model.encoders.vil->encode(image);
  const FusionResult<float> fused =
      fusion_forward(p, v, model.fusion_config, model.fusion, /*record_attention=*/true);

  const AttentionRecord& record = fused.attention[static_cast<size_t>(layer)];
  const int m = v.token_count();

  AttentionExport exp;
  exp.grid_rows = v.grid_rows;
  exp.grid_cols = v.grid_cols;
  exp.layer_index = layer;
  for (Eigen::Index i = 0; i < record.weights.rows(); ++i) {
    // Drop the class-token column (last) and renormalize for display;
    // raw records keep the full row.
    RowVecF row = record.weights.row(i).head(m);
    const float total = row.sum();
    if (total > 0.0f) row /= total;
    MatF heatmap(exp.grid_rows, exp.grid_cols);
    for (int r = 0; r < exp.grid_rows; ++r) {
      for (int c = 0; c < exp.grid_cols; ++c) heatmap(r, c) = row(r * exp.grid_cols + c);
    }
    exp.heatmaps.push_back(std::move(heatmap));
  }
  return exp;
}

std::vector<std::string> write_attention_outputs(const AttentionExport& exp,
                                                 const std::string& out_dir,
                                                 const std::string& prefix) {
  std::vector<std::string> paths;
  ArrayContainer sidecar;
  sidecar.meta = json{{"grid_rows", exp.grid_rows},
                      {"grid_cols", exp.grid_cols},
                      {"layer_index", exp.layer_index},
                      {"box_count", exp.heatmaps.size()}};
  for (size_t i = 0; i < exp.heatmaps.size(); ++i) {
    const MatF& h = exp.heatmaps[i];
    const float peak = h.maxCoeff();
    std::vector<uint8_t> gray(static_cast<size_t>(h.size()));
    for (Eigen::Index k = 0; k < h.size(); ++k) {
      const float v = peak > 0.0f ? h.data()[k] / peak : 0.0f;
      gray[static_cast<size_t>(k)] = static_cast<uint8_t>(std::lround(v * 255.0f));
    }
    char name[96];
    std::snprintf(name, sizeof(name), "%s_box%03zu_layer%d.png", prefix.c_str(), i,
                  exp.layer_index);
    const std::string path = out_dir + "/" + name;
    write_png_gray(path, gray, exp.grid_rows, exp.grid_cols);
    paths.push_back(path);

    NamedArray arr;
    arr.name = prefix + ".box" + std::to_string(i);
    arr.values.assign(h.data(), h.data() + h.size());
    sidecar.arrays.push_back(std::move(arr));
  }
  sidecar.write(out_dir + "/" + prefix + "_layer" + std::to_string(exp.layer_index) + ".rsc");
  return paths;
}

}  // namespace regionspot
