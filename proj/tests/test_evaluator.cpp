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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "regionspot/container.hpp"
#include "regionspot/errors.hpp"
#include "regionspot/evaluator.hpp"
#include "support/fixtures.hpp"

using namespace regionspot;

namespace {

BoxPrompt box_at(int slot) {
  const double x = 0.05 + 0.11 * slot;
  return {x, 0.1, x + 0.09, 0.3};
}

AnnotationRecord record_with(const std::string& image_id,
                             const std::vector<std::string>& categories) {
  AnnotationRecord rec;
  rec.image_id = image_id;
  rec.width = 100;
  rec.height = 100;
  for (size_t i = 0; i < categories.size(); ++i) {
    rec.regions.push_back({box_at(static_cast<int>(i)), categories[i]});
  }
  return rec;
}

RegionPrediction predict(const std::string& image_id, const BoxPrompt& box,
                         std::vector<std::pair<std::string, double>> entries) {
  RegionPrediction pred;
  pred.image_id = image_id;
  pred.box = box;
  for (auto& [name, score] : entries) pred.top.push_back({name, score, 0});
  return pred;
}

// Slow reference: build the full precision/recall sequence and take the
// precision envelope at 101 recall thresholds.
double oracle_ap(const std::vector<bool>& is_tp, int64_t gt) {
  double total = 0.0;
  for (int t = 0; t <= 100; ++t) {
    const double r = t / 100.0;
    double best = 0.0;
    int64_t tp = 0;
    for (size_t i = 0; i < is_tp.size(); ++i) {
      if (is_tp[i]) ++tp;
      const double recall = static_cast<double>(tp) / static_cast<double>(gt);
      const double precision = static_cast<double>(tp) / static_cast<double>(i + 1);
      if (recall >= r) best = std::max(best, precision);
    }
    total += best;
  }
  return total / 101.0;
}

}  // namespace

TEST_CASE("101-point AP on hand-evaluated rank patterns") {
  CHECK(average_precision_101({true}, 1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(average_precision_101({false, true}, 1) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(average_precision_101({true, false, true}, 2) ==
        doctest::Approx(253.0 / 303.0).epsilon(1e-12));
  CHECK(average_precision_101({true, true, false}, 3) ==
        doctest::Approx(67.0 / 101.0).epsilon(1e-12));
  CHECK(average_precision_101({false}, 1) == doctest::Approx(0.0));
  CHECK(average_precision_101({}, 2) == doctest::Approx(0.0));

  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<bool> pattern;
    const int len = 1 + static_cast<int>(rng.next_below(8));
    int64_t tp = 0;
    for (int i = 0; i < len; ++i) {
      const bool hit = rng.next_below(2) == 0;
      pattern.push_back(hit);
      tp += hit;
    }
    const int64_t gt = std::max<int64_t>(tp, 1 + static_cast<int64_t>(rng.next_below(4)));
    CHECK(average_precision_101(pattern, gt) ==
          doctest::Approx(oracle_ap(pattern, gt)).epsilon(1e-12));
  }
}

TEST_CASE("perfect predictions yield AP 1.0 for every category") {
  const std::vector<AnnotationRecord> gt = {record_with("1", {"cat", "dog"}),
                                            record_with("2", {"dog", "cat"})};
  std::vector<RegionPrediction> preds;
  for (const auto& rec : gt) {
    for (const auto& region : rec.regions) {
      preds.push_back(predict(rec.image_id, region.box, {{region.category, 0.42}}));
    }
  }
  const auto report =
      evaluate_recognition(preds, gt, LabelSpace::from_records(gt), BucketThresholds{});
  CHECK(report.map == doctest::Approx(1.0));
  for (const auto& cat : report.per_category) CHECK(cat.ap == doctest::Approx(1.0));
  CHECK(report.evaluated_images == 2);
  CHECK(report.evaluated_regions == 4);
  CHECK(report.missing_from_vocabulary.empty());
}

TEST_CASE("all-wrong predictions yield mAP 0.0") {
  const std::vector<AnnotationRecord> gt = {record_with("1", {"cat", "dog"})};
  std::vector<RegionPrediction> preds;
  preds.push_back(predict("1", box_at(0), {{"dog", 0.9}}));
  preds.push_back(predict("1", box_at(1), {{"cat", 0.9}}));
  const auto report =
      evaluate_recognition(preds, gt, LabelSpace::from_records(gt), BucketThresholds{});
  CHECK(report.map == doctest::Approx(0.0));
}

TEST_CASE("six regions, one mislabeled: AP matches the hand-computed curve") {
  // Image 1 holds three 'alpha' regions, image 2 three 'beta' regions.
  const std::vector<AnnotationRecord> gt = {record_with("1", {"alpha", "alpha", "alpha"}),
                                            record_with("2", {"beta", "beta", "beta"})};
  std::vector<RegionPrediction> preds;
  preds.push_back(predict("1", box_at(0), {{"alpha", 0.9}}));
  preds.push_back(predict("1", box_at(1), {{"alpha", 0.8}}));
  preds.push_back(predict("1", box_at(2), {{"beta", 0.7}}));  // mislabeled region
  preds.push_back(predict("2", box_at(0), {{"beta", 0.95}}));
  preds.push_back(predict("2", box_at(1), {{"beta", 0.6}}));
  preds.push_back(predict("2", box_at(2), {{"beta", 0.5}}));

  const auto report =
      evaluate_recognition(preds, gt, LabelSpace::from_records(gt), BucketThresholds{});
  REQUIRE(report.per_category.size() == 2);
  // alpha: two detections, both correct, one ground truth unreached.
  CHECK(report.per_category[0].name == "alpha");
  CHECK(report.per_category[0].ap == doctest::Approx(67.0 / 101.0).epsilon(1e-12));
  // beta: [TP 0.95, FP 0.7, TP 0.6, TP 0.5] against 3 ground truths.
  CHECK(report.per_category[1].name == "beta");
  CHECK(report.per_category[1].ap == doctest::Approx(84.25 / 101.0).epsilon(1e-12));
  CHECK(report.map ==
        doctest::Approx(0.5 * (67.0 / 101.0 + 84.25 / 101.0)).epsilon(1e-12));
}

TEST_CASE("AP is invariant under strictly increasing score transforms") {
  const std::vector<AnnotationRecord> gt = {record_with("1", {"a", "a", "b", "b"})};
  std::vector<RegionPrediction> preds;
  preds.push_back(predict("1", box_at(0), {{"a", 0.8}, {"b", 0.1}}));
  preds.push_back(predict("1", box_at(1), {{"b", 0.7}, {"a", 0.3}}));
  preds.push_back(predict("1", box_at(2), {{"b", 0.6}}));
  preds.push_back(predict("1", box_at(3), {{"a", 0.2}}));
  const auto base =
      evaluate_recognition(preds, gt, LabelSpace::from_records(gt), BucketThresholds{});

  auto transformed = preds;
  for (auto& pred : transformed) {
    for (auto& entry : pred.top) entry.probability = std::exp(5.0 * entry.probability) + 3.0;
  }
  const auto report =
      evaluate_recognition(transformed, gt, LabelSpace::from_records(gt), BucketThresholds{});
  REQUIRE(report.per_category.size() == base.per_category.size());
  for (size_t i = 0; i < report.per_category.size(); ++i) {
    CHECK(report.per_category[i].ap == base.per_category[i].ap);
  }
  CHECK(report.map == base.map);
}

TEST_CASE("duplicating every prediction and ground-truth region preserves AP") {
  const std::vector<AnnotationRecord> gt_once = {record_with("1", {"a", "a", "b"})};
  std::vector<RegionPrediction> preds;
  preds.push_back(predict("1", box_at(0), {{"a", 0.9}}));
  preds.push_back(predict("1", box_at(1), {{"b", 0.8}}));  // wrong
  preds.push_back(predict("1", box_at(2), {{"b", 0.7}}));
  const auto base =
      evaluate_recognition(preds, gt_once, LabelSpace::from_records(gt_once), BucketThresholds{});

  std::vector<AnnotationRecord> gt_twice = gt_once;
  for (const auto& region : gt_once[0].regions) gt_twice[0].regions.push_back(region);
  std::vector<RegionPrediction> preds_twice = preds;
  preds_twice.insert(preds_twice.end(), preds.begin(), preds.end());
  const auto doubled = evaluate_recognition(preds_twice, gt_twice,
                                            LabelSpace::from_records(gt_twice), BucketThresholds{});
  REQUIRE(doubled.per_category.size() == base.per_category.size());
  for (size_t i = 0; i < base.per_category.size(); ++i) {
    CHECK(doubled.per_category[i].ap == doctest::Approx(base.per_category[i].ap).epsilon(1e-12));
    CHECK(doubled.per_category[i].gt_count == 2 * base.per_category[i].gt_count);
  }
}

TEST_CASE("buckets partition the categories by training frequency") {
  const std::vector<AnnotationRecord> gt = {record_with("1", {"rarecat", "midcat", "bigcat"})};
  std::vector<RegionPrediction> preds;
  for (const auto& region : gt[0].regions) {
    preds.push_back(predict("1", region.box, {{region.category, 0.9}}));
  }
  LabelSpace freq;
  freq.add("rarecat", 3);    // < 10 -> rare
  freq.add("midcat", 50);    // < 100 -> common
  freq.add("bigcat", 5000);  // frequent
  const auto report = evaluate_recognition(preds, gt, freq, BucketThresholds{});
  REQUIRE(report.per_category.size() == 3);
  CHECK(report.per_category[0].bucket == 'r');
  CHECK(report.per_category[1].bucket == 'c');
  CHECK(report.per_category[2].bucket == 'f');
  CHECK(report.ap_rare.has_value());
  CHECK(*report.ap_rare == doctest::Approx(1.0));
  CHECK(*report.ap_common == doctest::Approx(1.0));
  CHECK(*report.ap_frequent == doctest::Approx(1.0));

  // A category missing from the frequency table counts as rare.
  LabelSpace partial;
  partial.add("midcat", 50);
  partial.add("bigcat", 5000);
  const auto report2 = evaluate_recognition(preds, gt, partial, BucketThresholds{});
  CHECK(report2.per_category[0].bucket == 'r');
  CHECK(report2.per_category[0].train_count == 0);
}

TEST_CASE("ground-truth categories never predicted are flagged as automatic misses") {
  const std::vector<AnnotationRecord> gt = {record_with("1", {"seen", "unseen"})};
  std::vector<RegionPrediction> preds;
  preds.push_back(predict("1", box_at(0), {{"seen", 0.9}}));
  preds.push_back(predict("1", box_at(1), {{"seen", 0.2}}));  // never names 'unseen'
  const auto report =
      evaluate_recognition(preds, gt, LabelSpace::from_records(gt), BucketThresholds{});
  REQUIRE(report.missing_from_vocabulary.size() == 1);
  CHECK(report.missing_from_vocabulary[0] == "unseen");
  // The unseen category contributes AP 0.
  CHECK(report.per_category[1].ap == doctest::Approx(0.0));
}

TEST_CASE("fixed-box mode rejects predictions at unknown boxes or images") {
  const std::vector<AnnotationRecord> gt = {record_with("1", {"a"})};
  std::vector<RegionPrediction> bad_box;
  bad_box.push_back(predict("1", {0.5, 0.5, 0.9, 0.9}, {{"a", 0.9}}));
  CHECK_THROWS_AS(
      evaluate_recognition(bad_box, gt, LabelSpace::from_records(gt), BucketThresholds{}),
      ValidationError);

  std::vector<RegionPrediction> bad_image;
  bad_image.push_back(predict("7", box_at(0), {{"a", 0.9}}));
  CHECK_THROWS_AS(
      evaluate_recognition(bad_image, gt, LabelSpace::from_records(gt), BucketThresholds{}),
      ValidationError);
}

TEST_CASE("IoU mode matches jittered boxes above the threshold") {
  const std::vector<AnnotationRecord> gt = {record_with("1", {"a", "b"})};
  std::vector<RegionPrediction> preds;
  BoxPrompt jittered = box_at(0);
  jittered.x1 += 0.01;  // still well above IoU 0.5 with the ground truth
  jittered.x2 += 0.01;
  preds.push_back(predict("1", jittered, {{"a", 0.9}}));
  BoxPrompt far = {0.6, 0.6, 0.9, 0.9};
  preds.push_back(predict("1", far, {{"b", 0.8}}));  // no overlap with anything

  const auto report = evaluate_recognition(preds, gt, LabelSpace::from_records(gt),
                                           BucketThresholds{}, EvalMode::kIoUMatch, 0.5);
  CHECK(report.per_category[0].ap == doctest::Approx(1.0));
  CHECK(report.per_category[1].ap == doctest::Approx(0.0));

  CHECK(box_iou(box_at(0), box_at(0)) == doctest::Approx(1.0));
  CHECK(box_iou(box_at(0), far) == doctest::Approx(0.0));
}

TEST_CASE("proposal JSONL round trip and validation") {
  const std::string dir = testing::make_temp_dir("props");
  {
    std::ofstream out(dir + "/p.jsonl");
    out << R"({"image_id": "1", "bbox": [0.1, 0.1, 0.5, 0.5], "score": 0.75})" << "\n";
    out << R"({"image_id": 2, "bbox": [0.2, 0.2, 0.6, 0.9], "score": 1.0})" << "\n";
  }
  const ProposalMap map = load_proposals_jsonl(dir + "/p.jsonl");
  REQUIRE(map.size() == 2);
  CHECK(map.at("1")[0].score == doctest::Approx(0.75));
  CHECK(map.at("2")[0].box.y2 == doctest::Approx(0.9));

  {
    std::ofstream out(dir + "/bad.jsonl");
    out << R"({"image_id": "1", "bbox": [0.1, 0.1, 0.5, 0.5], "score": 1.5})" << "\n";
  }
  CHECK_THROWS_AS(load_proposals_jsonl(dir + "/bad.jsonl"), FormatError);
}

TEST_CASE("infer_regions: objectness scales detection scores; empty proposals allowed") {
  const auto setup = testing::toy_model_setup();
  const RegionSpotModel model = make_model(setup.encoder, setup.fusion, setup.alignment,
                                           SourceTap::kTransformerDecoder, 0);
  const TextEmbeddingTable table =
      model.encoders.text->encode({"one", "two", "three"}, kDefaultPromptTemplate);
  const ImageInput image = ImageInput::filled("img", 32, 32, 0.4f, 0.5f, 0.6f);

  CHECK(infer_regions(model, image, {}, table).empty());

  const std::vector<Proposal> gt = {proposal_from_gt({0.1, 0.1, 0.6, 0.6})};
  const std::vector<Proposal> weak = {{{0.1, 0.1, 0.6, 0.6}, 0.5, "ext"}};
  const auto full = infer_regions(model, image, gt, table);
  const auto scaled = infer_regions(model, image, weak, table);
  REQUIRE(full.size() == 1);
  REQUIRE(full[0].top.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(scaled[0].top[i].probability ==
          doctest::Approx(0.5 * full[0].top[i].probability).epsilon(1e-12));
  }
}

TEST_CASE("prediction JSONL round trip preserves ordering and scores") {
  const std::string dir = testing::make_temp_dir("preds");
  std::vector<RegionPrediction> preds;
  preds.push_back(predict("1", box_at(0), {{"a", 0.75}, {"b", 0.25}}));
  preds.push_back(predict("2", box_at(1), {{"b", 0.5}}));
  write_predictions_jsonl(preds, dir + "/p.jsonl");
  const auto back = read_predictions_jsonl(dir + "/p.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[0].image_id == "1");
  CHECK(back[0].top[0].category == "a");
  CHECK(back[0].top[0].probability == doctest::Approx(0.75));
  CHECK(back[1].box.x1 == doctest::Approx(box_at(1).x1));
}

TEST_CASE("attention export: renormalized rows reshaped to the grid") {
  auto setup = testing::toy_model_setup();
  setup.encoder.input_resolution = 112;  // 7x7 grid
  setup.encoder.patch_size = 16;
  const RegionSpotModel model = make_model(setup.encoder, setup.fusion, setup.alignment,
                                           SourceTap::kTransformerDecoder, 0);
  const ImageInput image = ImageInput::filled("img", 64, 64, 0.3f, 0.6f, 0.2f);
  const std::vector<BoxPrompt> boxes = {{0.1, 0.1, 0.5, 0.5}, {0.4, 0.3, 0.9, 0.8}};

  const AttentionExport exp = export_attention(model, image, boxes, 1);
  REQUIRE(exp.heatmaps.size() == 2);
  CHECK(exp.grid_rows == 7);
  CHECK(exp.grid_cols == 7);
  for (const auto& map : exp.heatmaps) {
    CHECK(map.rows() == 7);
    CHECK(map.cols() == 7);
    CHECK(std::abs(map.sum() - 1.0f) <= 1e-6f);
    CHECK(map.minCoeff() >= 0.0f);
  }

  CHECK_THROWS_AS(export_attention(model, image, boxes, -1), RangeError);
  CHECK_THROWS_AS(export_attention(model, image, boxes, setup.fusion.depth), RangeError);

  const std::string dir = testing::make_temp_dir("attn");
  const auto paths = write_attention_outputs(exp, dir);
  REQUIRE(paths.size() == 2);
  const auto png = testing::read_png_gray(paths[0]);
  CHECK(png.width == 7);
  CHECK(png.height == 7);
  // Peak attention maps to the brightest gray level.
  CHECK(*std::max_element(png.pixels.begin(), png.pixels.end()) == 255);

  const ArrayContainer sidecar = ArrayContainer::read(dir + "/attn_layer1.rsc");
  CHECK(sidecar.meta.at("grid_rows").get<int>() == 7);
  CHECK(sidecar.require("attn.box0").values.size() == 49);
}

TEST_CASE("zero queries force uniform attention and a constant heatmap") {
  FusionConfig cfg;
  cfg.c_dim = 8;
  cfg.num_heads = 2;
  cfg.depth = 1;
  auto params = init_fusion_parameters<float>(cfg, 4, 8, 0);
  // Zero query projection: logits vanish, softmax is uniform.
  params.blocks[0].cross_attn.q.w.setZero();
  params.blocks[0].cross_attn.q.b.setZero();

  const MatF queries = MatF::Zero(2, 8);
  const MatF grid = MatF::Random(9, 8);
  const MatF cls(0, 8);
  const auto out = cross_attention<float>(queries, grid, cls, params.blocks[0].cross_attn, 2,
                                          false);
  for (Eigen::Index i = 0; i < out.record.weights.rows(); ++i) {
    for (Eigen::Index j = 0; j < out.record.weights.cols(); ++j) {
      CHECK(std::abs(out.record.weights(i, j) - 1.0f / 9.0f) <= 1e-6f);
    }
  }
}
