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

#include "regionspot/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

#include "regionspot/errors.hpp"
#include "regionspot/evaluator.hpp"

namespace regionspot {

using nlohmann::json;

namespace {

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& path) {
  for (const auto& [key, _] : obj.items()) {
    if (allowed.find(key) == allowed.end()) {
      throw ValidationError("unknown key '" + path + key + "' in config");
    }
  }
}

void merge_encoder(EncoderSpec& spec, const json& j) {
  check_keys(j, {"name", "d_loc", "d_vil", "patch_size", "input_resolution", "frozen", "seed"},
             "encoder.");
  if (j.contains("name")) spec.name = j["name"].get<std::string>();
  if (j.contains("d_loc")) spec.d_loc = j["d_loc"].get<int>();
  if (j.contains("d_vil")) spec.d_vil = j["d_vil"].get<int>();
  if (j.contains("patch_size")) spec.patch_size = j["patch_size"].get<int>();
  if (j.contains("input_resolution")) spec.input_resolution = j["input_resolution"].get<int>();
  if (j.contains("frozen")) spec.frozen = j["frozen"].get<bool>();
  if (j.contains("seed")) spec.seed = j["seed"].get<uint64_t>();
}

void merge_fusion(FusionConfig& cfg, const json& j) {
  check_keys(j,
             {"depth", "c_dim", "num_heads", "use_class_token", "use_self_attention",
              "ffn_expansion"},
             "fusion.");
  if (j.contains("depth")) cfg.depth = j["depth"].get<int>();
  if (j.contains("c_dim")) cfg.c_dim = j["c_dim"].get<int>();
  if (j.contains("num_heads")) cfg.num_heads = j["num_heads"].get<int>();
  if (j.contains("use_class_token")) cfg.use_class_token = j["use_class_token"].get<bool>();
  if (j.contains("use_self_attention")) {
    cfg.use_self_attention = j["use_self_attention"].get<bool>();
  }
  if (j.contains("ffn_expansion")) cfg.ffn_expansion = j["ffn_expansion"].get<int>();
}

void merge_alignment(AlignmentConfig& cfg, const json& j) {
  check_keys(j, {"alpha", "gamma", "temperature_init", "learn_temperature", "template"},
             "alignment.");
  if (j.contains("alpha")) cfg.alpha = j["alpha"].get<double>();
  if (j.contains("gamma")) cfg.gamma = j["gamma"].get<double>();
  if (j.contains("temperature_init")) cfg.temperature_init = j["temperature_init"].get<double>();
  if (j.contains("learn_temperature")) {
    cfg.learn_temperature = j["learn_temperature"].get<bool>();
  }
  if (j.contains("template")) cfg.template_text = j["template"].get<std::string>();
}

void merge_train(TrainConfig& cfg, const json& j) {
  check_keys(j,
             {"stages", "base_lr", "lr_decay_points", "decay_factor", "batch_size", "eval_every",
              "negative_boxes_per_image", "optimizer"},
             "train.");
  if (j.contains("stages")) {
    cfg.stages.clear();
    for (const auto& st : j["stages"]) {
      check_keys(st, {"datasets", "iterations"}, "train.stages[].");
      StageSpec stage;
      for (const auto& id : st.at("datasets")) stage.dataset_ids.push_back(id.get<std::string>());
      stage.iterations = st.at("iterations").get<int64_t>();
      cfg.stages.push_back(std::move(stage));
    }
  }
  if (j.contains("base_lr")) cfg.base_lr = j["base_lr"].get<double>();
  if (j.contains("lr_decay_points")) {
    cfg.lr_decay_points.clear();
    for (const auto& p : j["lr_decay_points"]) cfg.lr_decay_points.push_back(p.get<int64_t>());
  }
  if (j.contains("decay_factor")) cfg.decay_factor = j["decay_factor"].get<double>();
  if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<int>();
  if (j.contains("eval_every")) cfg.eval_every = j["eval_every"].get<int64_t>();
  if (j.contains("negative_boxes_per_image")) {
    cfg.negative_boxes_per_image = j["negative_boxes_per_image"].get<int>();
  }
  if (j.contains("optimizer")) {
    const auto& opt = j["optimizer"];
    check_keys(opt, {"beta1", "beta2", "eps", "weight_decay"}, "train.optimizer.");
    if (opt.contains("beta1")) cfg.optimizer.beta1 = opt["beta1"].get<double>();
    if (opt.contains("beta2")) cfg.optimizer.beta2 = opt["beta2"].get<double>();
    if (opt.contains("eps")) cfg.optimizer.eps = opt["eps"].get<double>();
    if (opt.contains("weight_decay")) {
      cfg.optimizer.weight_decay = opt["weight_decay"].get<double>();
    }
  }
}

void merge_document(RunConfig& cfg, const json& doc) {
  check_keys(doc,
             {"preset", "seed", "encoder", "fusion", "alignment", "source_tap", "train",
              "datasets"},
             "");
  if (doc.contains("seed")) cfg.seed = doc["seed"].get<uint64_t>();
  if (doc.contains("encoder")) merge_encoder(cfg.encoder, doc["encoder"]);
  if (doc.contains("fusion")) merge_fusion(cfg.fusion, doc["fusion"]);
  if (doc.contains("alignment")) merge_alignment(cfg.alignment, doc["alignment"]);
  if (doc.contains("source_tap")) cfg.tap = tap_from_string(doc["source_tap"].get<std::string>());
  if (doc.contains("train")) merge_train(cfg.train, doc["train"]);
  if (doc.contains("datasets")) {
    cfg.datasets.clear();
    for (const auto& [id, entry] : doc["datasets"].items()) {
      check_keys(entry, {"annotations", "image_root"}, "datasets." + id + ".");
      DatasetPaths paths;
      paths.annotations = entry.at("annotations").get<std::string>();
      if (entry.contains("image_root")) paths.image_root = entry["image_root"].get<std::string>();
      cfg.datasets[id] = std::move(paths);
    }
  }
}

}  // namespace

std::vector<std::string> preset_names() { return {"lite-toy", "pro-toy"}; }

json preset_document(const std::string& name) {
  if (name == "lite-toy") {
    return json{{"encoder",
                 {{"d_loc", 96}, {"d_vil", 192}, {"patch_size", 16}, {"input_resolution", 64}}},
                {"fusion", {{"c_dim", 192}, {"depth", 3}, {"num_heads", 4}}},
                {"train", {{"batch_size", 4}, {"base_lr", 1e-3}}}};
  }
  if (name == "pro-toy") {
    return json{{"encoder",
                 {{"d_loc", 96}, {"d_vil", 256}, {"patch_size", 16}, {"input_resolution", 112}}},
                {"fusion", {{"c_dim", 256}, {"depth", 3}, {"num_heads", 4}}},
                {"train", {{"batch_size", 4}, {"base_lr", 1e-3}}}};
  }
  throw ValidationError("unknown preset '" + name + "'; available: lite-toy, pro-toy");
}

void RunConfig::validate() const {
  encoder.validate();
  fusion.validate();
  alignment.validate();
  train.validate();
  if (fusion.c_dim != encoder.d_vil) {
    throw ValidationError("fusion.c_dim must equal encoder.d_vil (got " +
                          std::to_string(fusion.c_dim) + " vs " + std::to_string(encoder.d_vil) +
                          ")");
  }
  for (const auto& stage : train.stages) {
    for (const auto& id : stage.dataset_ids) {
      if (datasets.find(id) == datasets.end()) {
        throw ValidationError("train.stages references undeclared dataset '" + id + "'");
      }
    }
  }
}

RunConfig RunConfig::from_json(const json& doc) {
  RunConfig cfg;
  if (!doc.is_object()) throw ValidationError("config document must be a JSON object");
  if (doc.contains("preset")) {
    merge_document(cfg, preset_document(doc["preset"].get<std::string>()));
  }
  merge_document(cfg, doc);
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file: " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("config parse failure in " + path + ": " + e.what());
  }
  return from_json(doc);
}

int workers_from_env() {
  const char* raw = std::getenv("REGIONSPOT_NUM_WORKERS");
  if (!raw) return 1;
  const int n = std::atoi(raw);
  return std::clamp(n, 1, 64);
}

int cmd_train(const TrainArgs& args) {
  RunConfig cfg;
  try {
    cfg = RunConfig::load(args.config_path);
    if (args.seed) cfg.seed = *args.seed;
    cfg.train.seed = cfg.seed;
    cfg.train.workers = std::max(1, args.workers);
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitValidation;
  }

  try {
    // Datasets load before any optimization or output.
    DatasetTable table;
    for (const auto& [id, paths] : cfg.datasets) {
      table.records[id] = load_annotations(paths.annotations);
      table.image_roots[id] = paths.image_root;
    }

    RegionSpotModel model = make_model(cfg.encoder, cfg.fusion, cfg.alignment, cfg.tap, cfg.seed);
    std::filesystem::create_directories(args.out_dir);
    std::ofstream log(args.out_dir + "/train_log.jsonl");
    if (!log) throw IoError("cannot write training log under " + args.out_dir);
    std::cerr << "trainable parameters: " << model.trainable_parameter_count()
              << ", frozen backbone parameters: "
              << snapshot_value_count(model.encoders.parameters()) << "\n";
    const TrainResult result = run_training(model, cfg.train, table, args.out_dir, &log);
    std::cerr << "finished " << result.total_iterations << " iterations; final checkpoint "
              << result.final_checkpoint_path << "\n";
    if (result.skipped_empty_records > 0) {
      std::cerr << "skipped " << result.skipped_empty_records << " records with no regions\n";
    }
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "train failed: " << e.what() << "\n";
    return kExitRuntime;
  }
}

namespace {

std::vector<std::string> read_vocab_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary file: " + path);
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (!line.empty()) names.push_back(line);
  }
  if (names.empty()) throw InvalidInputError("vocabulary file is empty: " + path);
  return names;
}

}  // namespace

int cmd_infer(const InferArgs& args) {
  if (args.checkpoint.empty() || args.annotations.empty() || args.vocab.empty() ||
      args.out_dir.empty()) {
    std::cerr << "infer requires --checkpoint, --annotations, --vocab and --out\n";
    return kExitValidation;
  }
  try {
    const Checkpoint ckpt = load_checkpoint(args.checkpoint);
    const RegionSpotModel model = model_from_checkpoint(ckpt);
    const std::vector<std::string> vocab_names = read_vocab_lines(args.vocab);
    const TextEmbeddingTable table =
        model.encoders.text->encode(vocab_names, model.alignment.template_text);

    std::vector<AnnotationRecord> records = load_annotations(args.annotations);
    std::sort(records.begin(), records.end(),
              [](const AnnotationRecord& a, const AnnotationRecord& b) {
                return a.image_id < b.image_id;
              });

    ProposalMap proposals;
    if (!args.proposals.empty()) {
      proposals = load_proposals_jsonl(args.proposals);
    } else {
      for (const auto& rec : records) {
        for (const auto& region : rec.regions) {
          proposals[rec.image_id].push_back(proposal_from_gt(region.box));
        }
      }
    }

    // Per-image inference is independent; worker threads fill fixed slots
    // so the output order never depends on scheduling.
    std::vector<std::vector<RegionPrediction>> slots(records.size());
    std::atomic<size_t> next{0};
    auto work = [&]() {
      for (size_t i = next.fetch_add(1); i < records.size(); i = next.fetch_add(1)) {
        const auto& rec = records[i];
        const auto it = proposals.find(rec.image_id);
        if (it == proposals.end() || it->second.empty()) continue;
        std::string path = rec.image_path;
        if (!args.image_root.empty() && !path.empty() && path.front() != '/') {
          path = args.image_root + "/" + path;
        }
        ImageInput image = read_ppm(path);
        image.id = rec.image_id;
        slots[i] = infer_regions(model, image, it->second, table, args.top_k);
      }
    };
    const int workers = std::max(1, args.workers);
    if (workers == 1) {
      work();
    } else {
      std::vector<std::thread> pool;
      for (int w = 0; w < workers; ++w) pool.emplace_back(work);
      for (auto& t : pool) t.join();
    }

    std::vector<RegionPrediction> predictions;
    for (auto& slot : slots) {
      for (auto& pred : slot) predictions.push_back(std::move(pred));
    }
    std::filesystem::create_directories(args.out_dir);
    write_predictions_jsonl(predictions, args.out_dir + "/predictions.jsonl");
    std::cerr << "wrote " << predictions.size() << " region predictions\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "infer failed: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cmd_eval(const EvalArgs& args) {
  if (args.predictions.empty() || args.annotations.empty() || args.out_dir.empty()) {
    std::cerr << "eval requires --predictions, --annotations and --out\n";
    return kExitValidation;
  }
  if (args.mode != "fixed_box" && args.mode != "iou") {
    std::cerr << "eval --mode must be 'fixed_box' or 'iou'\n";
    return kExitValidation;
  }
  try {
    const auto predictions = read_predictions_jsonl(args.predictions);
    const auto ground_truth = load_annotations(args.annotations);
    const LabelSpace frequencies =
        args.freq_annotations.empty()
            ? LabelSpace::from_records(ground_truth)
            : LabelSpace::from_records(load_annotations(args.freq_annotations));
    const BucketThresholds thresholds{args.rare_below, args.common_below};
    const EvalMode mode = args.mode == "iou" ? EvalMode::kIoUMatch : EvalMode::kFixedBox;
    const EvalReport report = evaluate_recognition(predictions, ground_truth, frequencies,
                                                   thresholds, mode, args.iou_threshold);
    std::filesystem::create_directories(args.out_dir);
    std::ofstream json_out(args.out_dir + "/report.json");
    json_out << report.to_json().dump(2) << "\n";
    std::ofstream table_out(args.out_dir + "/report.txt");
    table_out << report.to_table();
    std::cout << report.to_table();
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "eval failed: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cmd_attn(const AttnArgs& args) {
  if (args.checkpoint.empty() || args.image.empty() || args.boxes.empty() ||
      args.out_dir.empty()) {
    std::cerr << "attn requires --checkpoint, --image, --boxes and --out\n";
    return kExitValidation;
  }
  try {
    const Checkpoint ckpt = load_checkpoint(args.checkpoint);
    const RegionSpotModel model = model_from_checkpoint(ckpt);
    ImageInput image = read_ppm(args.image);

    std::ifstream in(args.boxes);
    if (!in) throw IoError("cannot open boxes file: " + args.boxes);
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw FormatError("bad boxes JSON in " + args.boxes + ": " + e.what(),
                        static_cast<long>(e.byte));
    }
    std::vector<BoxPrompt> boxes;
    for (const auto& b : doc) {
      boxes.push_back({b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                       b.at(3).get<double>()});
    }

    const AttentionExport exp = export_attention(model, image, boxes, args.layer);
    std::filesystem::create_directories(args.out_dir);
    const auto paths = write_attention_outputs(exp, args.out_dir);
    std::cerr << "wrote " << paths.size() << " heatmaps (" << exp.grid_rows << "x"
              << exp.grid_cols << ")\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "attn failed: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace regionspot
