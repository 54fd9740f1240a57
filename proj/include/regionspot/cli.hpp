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

#ifndef REGIONSPOT_CLI_HPP_
#define REGIONSPOT_CLI_HPP_

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "regionspot/trainer.hpp"

namespace regionspot {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitValidation = 2;

struct DatasetPaths {
  std::string annotations;
  std::string image_root;
};

// Merged run configuration: defaults, then an optional named preset, then
// the document's own fields. Unknown keys anywhere are rejected.
struct RunConfig {
  uint64_t seed = 0;
  EncoderSpec encoder;
  FusionConfig fusion;
  AlignmentConfig alignment;
  SourceTap tap = SourceTap::kTransformerDecoder;
  TrainConfig train;
  std::map<std::string, DatasetPaths> datasets;

  void validate() const;
  static RunConfig from_json(const nlohmann::json& doc);
  static RunConfig load(const std::string& path);
};

// Named presets analogous to the Lite/Pro model variants at toy scale.
std::vector<std::string> preset_names();
nlohmann::json preset_document(const std::string& name);

struct TrainArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<uint64_t> seed;
  int workers = 1;
};

struct InferArgs {
  std::string checkpoint;
  std::string annotations;
  std::string image_root;
  std::string vocab;
  std::string proposals;  // empty selects ground-truth boxes with objectness 1
  std::string out_dir;
  int top_k = 0;
  int workers = 1;
};

struct EvalArgs {
  std::string predictions;
  std::string annotations;
  std::string freq_annotations;  // empty falls back to the eval annotations
  std::string out_dir;
  int64_t rare_below = 10;
  int64_t common_below = 100;
  std::string mode = "fixed_box";  // or "iou"
  double iou_threshold = 0.5;
};

struct AttnArgs {
  std::string checkpoint;
  std::string image;
  std::string boxes;  // JSON array of [x1,y1,x2,y2] normalized boxes
  std::string out_dir;
  int layer = 0;
};

// Subcommand bodies; return process exit codes. Validation failures exit 2
// before any output file is created; later failures exit 1.
int cmd_train(const TrainArgs& args);
int cmd_infer(const InferArgs& args);
int cmd_eval(const EvalArgs& args);
int cmd_attn(const AttnArgs& args);

int workers_from_env();

}  // namespace regionspot

#endif  // REGIONSPOT_CLI_HPP_
