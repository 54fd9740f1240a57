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

#include "regionspot/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "regionspot/container.hpp"
#include "regionspot/errors.hpp"

namespace regionspot {

using nlohmann::json;

void AlignmentConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alignment.alpha must be in (0,1)");
  if (gamma < 0.0) throw ValidationError("alignment.gamma must be >= 0");
  if (!(temperature_init > 0.0)) {
    throw ValidationError("alignment.temperature_init must be positive");
  }
  apply_template(template_text, "probe");
}

json AlignmentConfig::to_json() const {
  return json{{"alpha", alpha},
              {"gamma", gamma},
              {"temperature_init", temperature_init},
              {"learn_temperature", learn_temperature},
              {"template", template_text}};
}

AlignmentConfig AlignmentConfig::from_json(const json& j) {
  AlignmentConfig cfg;
  cfg.alpha = j.at("alpha").get<double>();
  cfg.gamma = j.at("gamma").get<double>();
  cfg.temperature_init = j.at("temperature_init").get<double>();
  cfg.learn_temperature = j.at("learn_temperature").get<bool>();
  cfg.template_text = j.at("template").get<std::string>();
  cfg.validate();
  return cfg;
}

RegionSpotModel make_model(const EncoderSpec& encoder_spec, const FusionConfig& fusion_config,
                           const AlignmentConfig& alignment, SourceTap tap, uint64_t seed) {
  encoder_spec.validate();
  fusion_config.validate();
  alignment.validate();
  if (fusion_config.c_dim != encoder_spec.d_vil) {
    throw ValidationError("fusion.c_dim (" + std::to_string(fusion_config.c_dim) +
                          ") must equal encoder.d_vil (" + std::to_string(encoder_spec.d_vil) +
                          ") so region tokens live in the text embedding space");
  }
  RegionSpotModel model;
  model.encoders = make_toy_encoders(encoder_spec);
  model.fusion_config = fusion_config;
  model.fusion = init_fusion_parameters<float>(fusion_config, encoder_spec.d_loc,
                                               encoder_spec.d_vil, seed);
  model.alignment = alignment;
  model.temperature = static_cast<float>(alignment.temperature_init);
  model.tap = tap;
  return model;
}

json AdamWConfig::to_json() const {
  return json{{"beta1", beta1}, {"beta2", beta2}, {"eps", eps}, {"weight_decay", weight_decay}};
}

AdamWConfig AdamWConfig::from_json(const json& j) {
  AdamWConfig cfg;
  cfg.beta1 = j.at("beta1").get<double>();
  cfg.beta2 = j.at("beta2").get<double>();
  cfg.eps = j.at("eps").get<double>();
  cfg.weight_decay = j.at("weight_decay").get<double>();
  return cfg;
}

AdamWState make_optimizer_state(const RegionSpotModel& model) {
  AdamWState state;
  state.m = zeros_like(model.fusion);
  state.v = zeros_like(model.fusion);
  return state;
}

namespace {

std::vector<MatF*> collect_tensors(FusionParamsF& p) {
  std::vector<MatF*> out;
  p.for_each([&](const std::string&, MatF& m) { out.push_back(&m); });
  return out;
}

void adamw_update(float* theta, float* m, float* v, const float* g, Eigen::Index n, double lr,
                  const AdamWConfig& cfg, double bc1, double bc2) {
  for (Eigen::Index i = 0; i < n; ++i) {
    const double gi = g[i];
    const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
    const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
    m[i] = static_cast<float>(mi);
    v[i] = static_cast<float>(vi);
    const double m_hat = mi / bc1;
    const double v_hat = vi / bc2;
    const double update = m_hat / (std::sqrt(v_hat) + cfg.eps) + cfg.weight_decay * theta[i];
    theta[i] = static_cast<float>(theta[i] - lr * update);
  }
}

}  // namespace

void adamw_step(RegionSpotModel& model, const FusionParamsF& grads, float temp_grad,
                AdamWState& state, double lr, const AdamWConfig& cfg) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

  auto params = collect_tensors(model.fusion);
  auto gs = collect_tensors(const_cast<FusionParamsF&>(grads));
  auto ms = collect_tensors(state.m);
  auto vs = collect_tensors(state.v);
  for (size_t t = 0; t < params.size(); ++t) {
    adamw_update(params[t]->data(), ms[t]->data(), vs[t]->data(), gs[t]->data(),
                 params[t]->size(), lr, cfg, bc1, bc2);
  }
  if (model.alignment.learn_temperature) {
    float theta = model.temperature;
    adamw_update(&theta, &state.temp_m, &state.temp_v, &temp_grad, 1, lr, cfg, bc1, bc2);
    model.temperature = theta;
  }
}

StepResult batch_loss(const RegionSpotModel& model, const Batch& batch, FusionParamsF* grads,
                      float* temp_grad) {
  if (batch.items.empty()) throw InvalidInputError("batch has no items");
  if (batch.vocabulary.empty()) throw InvalidInputError("batch has an empty vocabulary");

  const TextEmbeddingTable table =
      model.encoders.text->encode(batch.vocabulary, model.alignment.template_text);
  const int vocab_size = table.size();

  // Per-image encode and fusion; regions stacked in batch order.
  std::vector<FusionCache<float>> caches(grads ? batch.items.size() : 0);
  std::vector<MatF> item_tokens(batch.items.size());
  Eigen::Index total_regions = 0;
  for (size_t i = 0; i < batch.items.size(); ++i) {
    const auto& item = batch.items[i];
    const PositionAwareTokenSet p =
        model.encoders.localization->encode(item.image, item.boxes, model.tap);
    const SemanticFeatureMap v = model.encoders.vil->encode(item.image);
    MatF cls(1, v.class_token.cols());
    cls.row(0) = v.class_token;
    FusionResult<float> fused =
        fusion_forward<float>(p.tokens, v.grid_tokens, cls, model.fusion_config, model.fusion,
                              false, grads ? &caches[i] : nullptr);
    item_tokens[i] = std::move(fused.tokens);
    total_regions += item_tokens[i].rows();
  }

  MatF tokens(total_regions, model.fusion_config.c_dim);
  MatF targets = MatF::Zero(total_regions, vocab_size);
  Eigen::Index row = 0;
  for (size_t i = 0; i < batch.items.size(); ++i) {
    tokens.middleRows(row, item_tokens[i].rows()) = item_tokens[i];
    const MatF t = targets_from_indices<float>(batch.items[i].targets, vocab_size);
    targets.middleRows(row, t.rows()) = t;
    row += item_tokens[i].rows();
  }

  MatchingCache<float> mcache;
  const MatchingScoresT<float> scores =
      matching_scores<float>(tokens, table.embeddings, model.temperature, &mcache);
  MatF d_logits;
  const auto loss = focal_loss<float>(scores.logits, targets,
                                      static_cast<float>(model.alignment.alpha),
                                      static_cast<float>(model.alignment.gamma),
                                      grads ? &d_logits : nullptr);

  if (grads) {
    float d_temp = 0.0f;
    MatF d_tokens = matching_scores_backward<float>(d_logits, mcache, table.embeddings,
                                                    model.temperature, &d_temp);
    if (temp_grad) *temp_grad += d_temp;
    row = 0;
    for (size_t i = 0; i < batch.items.size(); ++i) {
      const Eigen::Index n = item_tokens[i].rows();
      const MatF d_item = d_tokens.middleRows(row, n);
      fusion_backward<float>(d_item, caches[i], model.fusion_config, model.fusion, *grads);
      row += n;
    }
  }

  StepResult res;
  res.loss = static_cast<double>(loss.value);
  res.region_count = static_cast<size_t>(total_regions);
  return res;
}

StepResult train_step(RegionSpotModel& model, const Batch& batch, AdamWState& state, double lr,
                      const AdamWConfig& opt_cfg) {
  FusionParamsF grads = zeros_like(model.fusion);
  float temp_grad = 0.0f;
  const StepResult res = batch_loss(model, batch, &grads, &temp_grad);
  if (!std::isfinite(res.loss)) {
    std::string ids;
    for (const auto& id : batch.image_ids) ids += (ids.empty() ? "" : ", ") + id;
    throw TrainingDivergedError("non-finite loss on batch of images [" + ids + "]");
  }
  adamw_step(model, grads, temp_grad, state, lr, opt_cfg);
  return res;
}

void TrainConfig::validate() const {
  if (stages.empty()) throw ValidationError("train.stages must not be empty");
  for (const auto& stage : stages) {
    if (stage.iterations < 0) throw ValidationError("stage iterations must be >= 0");
    if (stage.dataset_ids.empty()) throw ValidationError("stage dataset list must not be empty");
  }
  if (!(base_lr > 0.0)) throw ValidationError("train.base_lr must be positive");
  if (!(decay_factor > 0.0)) throw ValidationError("train.decay_factor must be positive");
  if (batch_size < 1) throw ValidationError("train.batch_size must be positive");
  if (eval_every < 1) throw ValidationError("train.eval_every must be positive");
  if (negative_boxes_per_image < 0) {
    throw ValidationError("train.negative_boxes_per_image must be >= 0");
  }
  if (workers < 1) throw ValidationError("train.workers must be >= 1");
  for (size_t i = 0; i < lr_decay_points.size(); ++i) {
    if (lr_decay_points[i] < 1) throw ValidationError("lr decay points must be >= 1");
    if (i > 0 && lr_decay_points[i] <= lr_decay_points[i - 1]) {
      throw ValidationError("lr decay points must be strictly increasing");
    }
    for (const auto& stage : stages) {
      if (stage.iterations > 0 && lr_decay_points[i] >= stage.iterations) {
        throw ValidationError("lr decay point " + std::to_string(lr_decay_points[i]) +
                              " must be < stage iterations " + std::to_string(stage.iterations));
      }
    }
  }
}

std::vector<int64_t> stage_decay_points(const TrainConfig& cfg, int64_t stage_iterations) {
  if (!cfg.lr_decay_points.empty()) return cfg.lr_decay_points;
  std::vector<int64_t> points;
  for (double frac : {0.7, 0.9}) {
    const auto p = static_cast<int64_t>(frac * static_cast<double>(stage_iterations));
    if (p >= 1 && p < stage_iterations && (points.empty() || p > points.back())) {
      points.push_back(p);
    }
  }
  return points;
}

double lr_at(double base_lr, double decay_factor, const std::vector<int64_t>& decay_points,
             int64_t stage_step) {
  int applied = 0;
  for (int64_t p : decay_points) {
    if (p <= stage_step) ++applied;
  }
  return base_lr * std::pow(decay_factor, applied);
}

namespace {

constexpr const char* kArraysPrefixFusion = "fusion.";
constexpr const char* kArrayTemperature = "alignment.temperature";

void append_params(std::vector<NamedArray>& arrays, const FusionParamsF& p,
                   const std::string& prefix) {
  p.for_each([&](const std::string& name, const MatF& m) {
    NamedArray arr;
    arr.name = prefix + name;
    arr.values.assign(m.data(), m.data() + m.size());
    arrays.push_back(std::move(arr));
  });
}

void fill_params(FusionParamsF& p, const ArrayContainer& c, const std::string& prefix) {
  p.for_each([&](const std::string& name, MatF& m) {
    const NamedArray& arr = c.require(prefix + name);
    if (static_cast<Eigen::Index>(arr.values.size()) != m.size()) {
      throw ShapeError("checkpoint array '" + prefix + name + "' has " +
                       std::to_string(arr.values.size()) + " values, expected " +
                       std::to_string(m.size()));
    }
    std::memcpy(m.data(), arr.values.data(), arr.values.size() * sizeof(float));
  });
}

}  // namespace

Checkpoint checkpoint_from_model(const RegionSpotModel& model, const AdamWState* opt_state,
                                 int64_t iteration, int stage_index, uint64_t rng_seed,
                                 uint64_t rng_epoch, uint64_t rng_cursor) {
  Checkpoint ckpt;
  ckpt.format_version = kCheckpointFormatVersion;
  ckpt.iteration = iteration;
  ckpt.stage_index = stage_index;
  ckpt.encoder_spec = model.encoders.spec;
  ckpt.fusion_config = model.fusion_config;
  ckpt.alignment_config = model.alignment;
  ckpt.tap = model.tap;
  ckpt.rng_seed = rng_seed;
  ckpt.rng_epoch = rng_epoch;
  ckpt.rng_cursor = rng_cursor;
  ckpt.fusion = model.fusion;
  ckpt.temperature = model.temperature;
  if (opt_state) {
    ckpt.has_optimizer_state = true;
    ckpt.optimizer_step = opt_state->step;
    ckpt.opt_m = opt_state->m;
    ckpt.opt_v = opt_state->v;
    ckpt.temp_m = opt_state->temp_m;
    ckpt.temp_v = opt_state->temp_v;
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  ArrayContainer c;
  c.meta = json{{"format_version", ckpt.format_version},
                {"iteration", ckpt.iteration},
                {"stage_index", ckpt.stage_index},
                {"encoder", ckpt.encoder_spec.to_json()},
                {"fusion", ckpt.fusion_config.to_json()},
                {"alignment", ckpt.alignment_config.to_json()},
                {"tap", to_string(ckpt.tap)},
                {"optimizer", ckpt.optimizer_config.to_json()},
                {"optimizer_step", ckpt.optimizer_step},
                {"has_optimizer_state", ckpt.has_optimizer_state},
                {"rng", json{{"seed", ckpt.rng_seed},
                             {"epoch", ckpt.rng_epoch},
                             {"cursor", ckpt.rng_cursor}}}};
  append_params(c.arrays, ckpt.fusion, kArraysPrefixFusion);
  c.arrays.push_back({kArrayTemperature, {ckpt.temperature}});
  if (ckpt.has_optimizer_state) {
    append_params(c.arrays, ckpt.opt_m, "opt.m.");
    append_params(c.arrays, ckpt.opt_v, "opt.v.");
    c.arrays.push_back({"opt.m.temperature", {ckpt.temp_m}});
    c.arrays.push_back({"opt.v.temperature", {ckpt.temp_v}});
  }
  c.write(path);
}

Checkpoint load_checkpoint(const std::string& path) {
  const ArrayContainer c = ArrayContainer::read(path);
  Checkpoint ckpt;
  ckpt.format_version = c.meta.at("format_version").get<int>();
  if (ckpt.format_version != kCheckpointFormatVersion) {
    throw UnsupportedVersionError("checkpoint format version " +
                                  std::to_string(ckpt.format_version) + " is not supported");
  }
  ckpt.iteration = c.meta.at("iteration").get<int64_t>();
  ckpt.stage_index = c.meta.at("stage_index").get<int>();
  ckpt.encoder_spec = EncoderSpec::from_json(c.meta.at("encoder"));
  ckpt.fusion_config = FusionConfig::from_json(c.meta.at("fusion"));
  ckpt.alignment_config = AlignmentConfig::from_json(c.meta.at("alignment"));
  ckpt.tap = tap_from_string(c.meta.at("tap").get<std::string>());
  ckpt.optimizer_config = AdamWConfig::from_json(c.meta.at("optimizer"));
  ckpt.optimizer_step = c.meta.at("optimizer_step").get<int64_t>();
  ckpt.has_optimizer_state = c.meta.at("has_optimizer_state").get<bool>();
  ckpt.rng_seed = c.meta.at("rng").at("seed").get<uint64_t>();
  ckpt.rng_epoch = c.meta.at("rng").at("epoch").get<uint64_t>();
  ckpt.rng_cursor = c.meta.at("rng").at("cursor").get<uint64_t>();

  shape_params<float>(ckpt.fusion_config, ckpt.encoder_spec.d_loc, ckpt.encoder_spec.d_vil,
                      ckpt.fusion);
  fill_params(ckpt.fusion, c, kArraysPrefixFusion);
  ckpt.temperature = c.require(kArrayTemperature).values.at(0);
  if (ckpt.has_optimizer_state) {
    shape_params<float>(ckpt.fusion_config, ckpt.encoder_spec.d_loc, ckpt.encoder_spec.d_vil,
                        ckpt.opt_m);
    shape_params<float>(ckpt.fusion_config, ckpt.encoder_spec.d_loc, ckpt.encoder_spec.d_vil,
                        ckpt.opt_v);
    fill_params(ckpt.opt_m, c, "opt.m.");
    fill_params(ckpt.opt_v, c, "opt.v.");
    ckpt.temp_m = c.require("opt.m.temperature").values.at(0);
    ckpt.temp_v = c.require("opt.v.temperature").values.at(0);
  }
  return ckpt;
}

RegionSpotModel model_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.encoder_spec.name != "toy") {
    throw ValidationError("unknown encoder backend '" + ckpt.encoder_spec.name +
                          "'; only 'toy' encoders are built in");
  }
  RegionSpotModel model = make_model(ckpt.encoder_spec, ckpt.fusion_config,
                                     ckpt.alignment_config, ckpt.tap, ckpt.rng_seed);
  model.fusion = ckpt.fusion;
  model.temperature = ckpt.temperature;
  return model;
}

void apply_checkpoint_params(RegionSpotModel& model, const Checkpoint& ckpt) {
  if (!(model.fusion_config == ckpt.fusion_config)) {
    throw ShapeError("checkpoint fusion config does not match the model (depth " +
                     std::to_string(ckpt.fusion_config.depth) + " vs " +
                     std::to_string(model.fusion_config.depth) + ", c_dim " +
                     std::to_string(ckpt.fusion_config.c_dim) + " vs " +
                     std::to_string(model.fusion_config.c_dim) + ")");
  }
  if (model.encoders.spec.d_loc != ckpt.encoder_spec.d_loc ||
      model.encoders.spec.d_vil != ckpt.encoder_spec.d_vil) {
    throw ShapeError("checkpoint encoder dimensions do not match the model");
  }
  model.fusion = ckpt.fusion;
  model.temperature = ckpt.temperature;
}

TrainResult run_training(RegionSpotModel& model, const TrainConfig& cfg, const DatasetTable& data,
                         const std::string& out_dir, std::ostream* log) {
  cfg.validate();
  // All stage datasets must be present before any optimization happens.
  for (const auto& stage : cfg.stages) {
    for (const auto& id : stage.dataset_ids) {
      if (data.records.find(id) == data.records.end()) {
        throw ValidationError("stage references unknown dataset id '" + id + "'");
      }
    }
  }
  std::filesystem::create_directories(out_dir);

  TrainResult result;
  int64_t global_iter = 0;
  AdamWState state = make_optimizer_state(model);

  auto write_ckpt = [&](int64_t iteration, int stage_index, uint64_t epoch, uint64_t cursor,
                        const std::string& tag) {
    Checkpoint ckpt = checkpoint_from_model(model, &state, iteration, stage_index, cfg.seed,
                                            epoch, cursor);
    ckpt.optimizer_config = cfg.optimizer;
    char name[64];
    if (tag.empty()) {
      std::snprintf(name, sizeof(name), "ckpt_%08lld.rsc", static_cast<long long>(iteration));
    } else {
      std::snprintf(name, sizeof(name), "ckpt_%s.rsc", tag.c_str());
    }
    const std::string path = out_dir + "/" + name;
    save_checkpoint(ckpt, path);
    result.checkpoint_paths.push_back(path);
    return path;
  };

  for (size_t stage_idx = 0; stage_idx < cfg.stages.size(); ++stage_idx) {
    const StageSpec& stage = cfg.stages[stage_idx];

    // Stage record pool: concatenation of the stage's datasets, image
    // paths pre-joined with their dataset roots.
    std::vector<AnnotationRecord> records;
    for (const auto& id : stage.dataset_ids) {
      const auto& src = data.records.at(id);
      const auto root_it = data.image_roots.find(id);
      const std::string root = root_it != data.image_roots.end() ? root_it->second : "";
      for (AnnotationRecord rec : src) {
        if (!root.empty() && !rec.image_path.empty() && rec.image_path.front() != '/') {
          rec.image_path = root + "/" + rec.image_path;
        }
        records.push_back(std::move(rec));
      }
    }
    size_t skipped = 0;
    const std::vector<size_t> usable = usable_record_indices(records, &skipped);
    result.skipped_empty_records += skipped;
    if (stage.iterations > 0 && usable.empty()) {
      throw InvalidInputError("stage " + std::to_string(stage_idx) +
                              " has no records with regions");
    }

    // Optimizer state resets at stage boundaries.
    state = make_optimizer_state(model);
    const std::vector<int64_t> decay_points = stage_decay_points(cfg, stage.iterations);
    const uint64_t stage_seed = mix_seed(cfg.seed, stage_idx);

    BatchOptions opts;
    opts.workers = cfg.workers;
    opts.negative_boxes_per_image = cfg.negative_boxes_per_image;

    uint64_t epoch = 0;
    size_t cursor = 0;
    std::vector<std::vector<size_t>> plan =
        stage.iterations > 0 ? plan_epoch(usable, static_cast<size_t>(cfg.batch_size), stage_seed, epoch)
                             : std::vector<std::vector<size_t>>{};
    for (int64_t step = 0; step < stage.iterations; ++step) {
      if (cursor >= plan.size()) {
        ++epoch;
        cursor = 0;
        plan = plan_epoch(usable, static_cast<size_t>(cfg.batch_size), stage_seed, epoch);
      }
      const Batch batch = make_batch(records, plan[cursor], opts,
                                     mix_seed(stage_seed, mix_seed(epoch, cursor)));
      ++cursor;
      const double lr = lr_at(cfg.base_lr, cfg.decay_factor, decay_points, step);
      const StepResult res = train_step(model, batch, state, lr, cfg.optimizer);
      ++global_iter;
      if (log) {
        (*log) << json{{"iter", global_iter},
                       {"loss", res.loss},
                       {"lr", lr},
                       {"stage", static_cast<int>(stage_idx)}}
                      .dump()
               << "\n";
      }
      if (global_iter % cfg.eval_every == 0 && step + 1 < stage.iterations) {
        write_ckpt(global_iter, static_cast<int>(stage_idx), epoch, cursor, "");
      }
    }
    write_ckpt(global_iter, static_cast<int>(stage_idx), epoch, cursor,
               "stage" + std::to_string(stage_idx));
  }

  result.total_iterations = global_iter;
  result.final_checkpoint_path = write_ckpt(
      global_iter, static_cast<int>(cfg.stages.size()) - 1, 0, 0, "final");
  return result;
}

}  // namespace regionspot
