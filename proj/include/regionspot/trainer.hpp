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

#ifndef REGIONSPOT_TRAINER_HPP_
#define REGIONSPOT_TRAINER_HPP_

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "regionspot/alignment.hpp"
#include "regionspot/datasets.hpp"
#include "regionspot/encoders.hpp"
#include "regionspot/fusion.hpp"

namespace regionspot {

struct AlignmentConfig {
  double alpha = kDefaultFocalAlpha;
  double gamma = kDefaultFocalGamma;
  double temperature_init = kDefaultTemperatureInit;
  bool learn_temperature = true;
  std::string template_text = kDefaultPromptTemplate;

  void validate() const;
  nlohmann::json to_json() const;
  static AlignmentConfig from_json(const nlohmann::json& j);

  bool operator==(const AlignmentConfig&) const = default;
};

// Frozen backbones plus the trainable fusion/alignment head.
struct RegionSpotModel {
  EncoderSet encoders;
  FusionConfig fusion_config;
  FusionParamsF fusion;
  AlignmentConfig alignment;
  float temperature = static_cast<float>(kDefaultTemperatureInit);
  SourceTap tap = SourceTap::kTransformerDecoder;

  // Fusion parameters plus the temperature scalar.
  size_t trainable_parameter_count() const {
    return fusion.parameter_count() + 1;
  }
};

// Builds encoders and seeded fusion parameters; requires
// fusion.c_dim == encoder.d_vil so region tokens land in the text space.
RegionSpotModel make_model(const EncoderSpec& encoder_spec, const FusionConfig& fusion_config,
                           const AlignmentConfig& alignment, SourceTap tap, uint64_t seed);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;

  nlohmann::json to_json() const;
  static AdamWConfig from_json(const nlohmann::json& j);
};

struct AdamWState {
  int64_t step = 0;
  FusionParamsF m, v;
  float temp_m = 0.0f;
  float temp_v = 0.0f;
};

AdamWState make_optimizer_state(const RegionSpotModel& model);

// Decoupled weight decay; updates fusion parameters and, when enabled,
// the temperature. A zero learning rate leaves parameters bit-identical.
void adamw_step(RegionSpotModel& model, const FusionParamsF& grads, float temp_grad,
                AdamWState& state, double lr, const AdamWConfig& cfg);

struct StepResult {
  double loss = 0.0;
  size_t region_count = 0;
};

// Forward pass over one batch: encoders -> fusion -> matching scores ->
// focal loss. Returns the loss and, when grads/temp_grad are given,
// accumulates gradients of the trainable parameters.
StepResult batch_loss(const RegionSpotModel& model, const Batch& batch,
                      FusionParamsF* grads = nullptr, float* temp_grad = nullptr);

// One optimization step. Throws TrainingDivergedError (naming the batch
// image ids) if the loss is non-finite.
StepResult train_step(RegionSpotModel& model, const Batch& batch, AdamWState& state, double lr,
                      const AdamWConfig& opt_cfg);

struct StageSpec {
  std::vector<std::string> dataset_ids;
  int64_t iterations = 0;
};

struct TrainConfig {
  std::vector<StageSpec> stages;
  double base_lr = 2.5e-5;
  // Within-stage iteration indices; empty selects 70% / 90% of each
  // stage's length.
  std::vector<int64_t> lr_decay_points;
  double decay_factor = 0.1;
  int batch_size = 16;
  uint64_t seed = 0;
  int64_t eval_every = 500;
  int negative_boxes_per_image = 0;
  int workers = 1;
  AdamWConfig optimizer;

  void validate() const;
};

// Decay points for a stage: configured list, or the 70%/90% default.
std::vector<int64_t> stage_decay_points(const TrainConfig& cfg, int64_t stage_iterations);

double lr_at(double base_lr, double decay_factor, const std::vector<int64_t>& decay_points,
             int64_t stage_step);

struct DatasetTable {
  std::map<std::string, std::vector<AnnotationRecord>> records;
  std::map<std::string, std::string> image_roots;
};

struct Checkpoint {
  int format_version = 1;
  int64_t iteration = 0;
  int stage_index = 0;
  EncoderSpec encoder_spec;
  FusionConfig fusion_config;
  AlignmentConfig alignment_config;
  SourceTap tap = SourceTap::kTransformerDecoder;
  AdamWConfig optimizer_config;
  uint64_t rng_seed = 0;
  uint64_t rng_epoch = 0;
  uint64_t rng_cursor = 0;

  FusionParamsF fusion;
  float temperature = 1.0f;
  bool has_optimizer_state = false;
  int64_t optimizer_step = 0;
  FusionParamsF opt_m, opt_v;
  float temp_m = 0.0f;
  float temp_v = 0.0f;
};

inline constexpr int kCheckpointFormatVersion = 1;

Checkpoint checkpoint_from_model(const RegionSpotModel& model, const AdamWState* opt_state,
                                 int64_t iteration, int stage_index, uint64_t rng_seed,
                                 uint64_t rng_epoch, uint64_t rng_cursor);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Rebuilds the full model (frozen encoders included) from a checkpoint.
RegionSpotModel model_from_checkpoint(const Checkpoint& ckpt);

// Copies trainable parameters into an existing model. All shapes are
// validated before any write; a mismatch throws ShapeError and leaves the
// model untouched.
void apply_checkpoint_params(RegionSpotModel& model, const Checkpoint& ckpt);

struct TrainResult {
  int64_t total_iterations = 0;
  size_t skipped_empty_records = 0;
  std::string final_checkpoint_path;
  std::vector<std::string> checkpoint_paths;
};

// Executes the stages sequentially, carrying parameters forward and
// resetting optimizer state at stage boundaries. Writes checkpoints every
// eval_every iterations and at stage ends; streams one JSON line
// {iter, loss, lr, stage} per iteration to `log` when given.
TrainResult run_training(RegionSpotModel& model, const TrainConfig& cfg,
                         const DatasetTable& data, const std::string& out_dir,
                         std::ostream* log = nullptr);

}  // namespace regionspot

#endif  // REGIONSPOT_TRAINER_HPP_
