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

#ifndef REGIONSPOT_ENCODERS_HPP_
#define REGIONSPOT_ENCODERS_HPP_

#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "regionspot/common.hpp"
#include "regionspot/image.hpp"

namespace regionspot {

inline constexpr char kDefaultPromptTemplate[] = "a photo of {} in the scene";

// Axis-aligned region prompt, coordinates normalized to [0, 1].
struct BoxPrompt {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
};

// Throws InvalidBoxError (carrying `index`) unless x1 < x2, y1 < y2 and
// all coordinates lie in [0, 1].
void validate_box(const BoxPrompt& box, int index);

// Where in the localization model the per-region token is read from.
enum class SourceTap { kPromptEncoder, kTransformerDecoder, kMlp };

const char* to_string(SourceTap tap);
SourceTap tap_from_string(const std::string& name);

// Per-region query tokens from the localization model, one row per box.
struct PositionAwareTokenSet {
  MatF tokens;  // N x d_loc
  SourceTap source_tap = SourceTap::kTransformerDecoder;

  int count() const { return static_cast<int>(tokens.rows()); }
};

// Image-level key/value tokens from the ViL image encoder.
struct SemanticFeatureMap {
  MatF grid_tokens;     // M x d_vil, flattened row-major spatial grid
  RowVecF class_token;  // d_vil
  int grid_rows = 0;
  int grid_cols = 0;

  int token_count() const { return static_cast<int>(grid_tokens.rows()); }
};

// Per-category text embeddings; rows are unit-normalized.
struct TextEmbeddingTable {
  MatF embeddings;  // K x d_vil
  std::vector<std::string> category_names;
  std::string template_text;

  int size() const { return static_cast<int>(embeddings.rows()); }
};

struct EncoderSpec {
  std::string name = "toy";
  int d_loc = 96;
  int d_vil = 192;
  int patch_size = 16;
  int input_resolution = 64;
  bool frozen = true;
  uint64_t seed = 0;

  int grid_side() const { return input_resolution / patch_size; }
  void validate() const;

  nlohmann::json to_json() const;
  static EncoderSpec from_json(const nlohmann::json& j);
};

struct NamedArray {
  std::string name;
  std::vector<float> values;
};
using ParameterSnapshot = std::vector<NamedArray>;

uint64_t snapshot_checksum(const ParameterSnapshot& snap);
bool snapshots_bit_identical(const ParameterSnapshot& a, const ParameterSnapshot& b);
size_t snapshot_value_count(const ParameterSnapshot& snap);

// Frozen-backbone contracts. Implementations are read-only after
// construction and safe for concurrent calls.
class LocalizationEncoder {
 public:
  virtual ~LocalizationEncoder() = default;
  virtual PositionAwareTokenSet encode(const ImageInput& image,
                                       const std::vector<BoxPrompt>& boxes,
                                       SourceTap tap) const = 0;
  virtual ParameterSnapshot parameters() const = 0;
};

class VilImageEncoder {
 public:
  virtual ~VilImageEncoder() = default;
  virtual SemanticFeatureMap encode(const ImageInput& image) const = 0;
  virtual ParameterSnapshot parameters() const = 0;
};

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual TextEmbeddingTable encode(const std::vector<std::string>& categories,
                                    const std::string& template_text) const = 0;
  virtual ParameterSnapshot parameters() const = 0;
};

// Substitutes `category` for the single "{}" placeholder. Throws
// TemplateError unless exactly one placeholder is present.
std::string apply_template(const std::string& template_text, const std::string& category);

std::string fold_case(const std::string& s);

// The three frozen backbones built from one spec.
struct EncoderSet {
  EncoderSpec spec;
  std::shared_ptr<const LocalizationEncoder> localization;
  std::shared_ptr<const VilImageEncoder> vil;
  std::shared_ptr<const TextEncoder> text;

  ParameterSnapshot parameters() const;
};

// Seeded deterministic toy backbones; exercise all shapes and data flow
// at desk scale. Real-checkpoint adapters would implement the same
// interfaces.
EncoderSet make_toy_encoders(const EncoderSpec& spec);

// Toy localization descriptor layout, exposed for tests:
// [mean_r, mean_g, mean_b, x1, y1, x2, y2, w, h, cx, cy].
inline constexpr int kToyBoxDescriptorDim = 11;
inline constexpr int kToyTextBins = 64;

}  // namespace regionspot

#endif  // REGIONSPOT_ENCODERS_HPP_
