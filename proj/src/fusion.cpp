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

#include "regionspot/fusion.hpp"

#include <nlohmann/json.hpp>

namespace regionspot {

void FusionConfig::validate() const {
  if (depth < 1) throw ValidationError("fusion.depth must be >= 1");
  if (c_dim < 1) throw ValidationError("fusion.c_dim must be positive");
  if (num_heads < 1) throw ValidationError("fusion.num_heads must be positive");
  if (c_dim % num_heads != 0) throw ValidationError("fusion.c_dim must be divisible by num_heads");
  if (ffn_expansion < 1) throw ValidationError("fusion.ffn_expansion must be positive");
}

nlohmann::json FusionConfig::to_json() const {
  return nlohmann::json{{"depth", depth},
                        {"c_dim", c_dim},
                        {"num_heads", num_heads},
                        {"use_class_token", use_class_token},
                        {"use_self_attention", use_self_attention},
                        {"ffn_expansion", ffn_expansion}};
}

FusionConfig FusionConfig::from_json(const nlohmann::json& j) {
  FusionConfig cfg;
  cfg.depth = j.at("depth").get<int>();
  cfg.c_dim = j.at("c_dim").get<int>();
  cfg.num_heads = j.at("num_heads").get<int>();
  cfg.use_class_token = j.at("use_class_token").get<bool>();
  cfg.use_self_attention = j.at("use_self_attention").get<bool>();
  cfg.ffn_expansion = j.at("ffn_expansion").get<int>();
  cfg.validate();
  return cfg;
}

}  // namespace regionspot
