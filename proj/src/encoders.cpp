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

#include "regionspot/encoders.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "regionspot/errors.hpp"

namespace regionspot {

void validate_box(const BoxPrompt& box, int index) {
  const bool in_range = box.x1 >= 0.0 && box.y1 >= 0.0 && box.x2 <= 1.0 && box.y2 <= 1.0;
  const bool finite = std::isfinite(box.x1) && std::isfinite(box.y1) && std::isfinite(box.x2) &&
                      std::isfinite(box.y2);
  if (!finite || !in_range || !(box.x1 < box.x2) || !(box.y1 < box.y2)) {
    throw InvalidBoxError("invalid box at index " + std::to_string(index) + ": [" +
                              std::to_string(box.x1) + ", " + std::to_string(box.y1) + ", " +
                              std::to_string(box.x2) + ", " + std::to_string(box.y2) + "]",
                          index);
  }
}

const char* to_string(SourceTap tap) {
  switch (tap) {
    case SourceTap::kPromptEncoder:
      return "prompt_encoder";
    case SourceTap::kTransformerDecoder:
      return "transformer_decoder";
    case SourceTap::kMlp:
      return "mlp";
  }
  return "transformer_decoder";
}

SourceTap tap_from_string(const std::string& name) {
  if (name == "prompt_encoder") return SourceTap::kPromptEncoder;
  if (name == "transformer_decoder") return SourceTap::kTransformerDecoder;
  if (name == "mlp") return SourceTap::kMlp;
  throw ValidationError("unknown source_tap: '" + name + "'");
}

void EncoderSpec::validate() const {
  if (d_loc < 1) throw ValidationError("encoder.d_loc must be positive");
  if (d_vil < 1) throw ValidationError("encoder.d_vil must be positive");
  if (patch_size < 1) throw ValidationError("encoder.patch_size must be positive");
  if (input_resolution < 1) throw ValidationError("encoder.input_resolution must be positive");
  if (input_resolution % patch_size != 0) {
    throw ValidationError("encoder.input_resolution must be divisible by patch_size");
  }
  if (!frozen) throw ValidationError("encoder.frozen must be true for backbone encoders");
}

nlohmann::json EncoderSpec::to_json() const {
  return nlohmann::json{{"name", name},
                        {"d_loc", d_loc},
                        {"d_vil", d_vil},
                        {"patch_size", patch_size},
                        {"input_resolution", input_resolution},
                        {"frozen", frozen},
                        {"seed", seed}};
}

EncoderSpec EncoderSpec::from_json(const nlohmann::json& j) {
  EncoderSpec spec;
  spec.name = j.at("name").get<std::string>();
  spec.d_loc = j.at("d_loc").get<int>();
  spec.d_vil = j.at("d_vil").get<int>();
  spec.patch_size = j.at("patch_size").get<int>();
  spec.input_resolution = j.at("input_resolution").get<int>();
  spec.frozen = j.at("frozen").get<bool>();
  spec.seed = j.at("seed").get<uint64_t>();
  spec.validate();
  return spec;
}

uint64_t snapshot_checksum(const ParameterSnapshot& snap) {
  uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& arr : snap) {
    h = fnv1a64(arr.name.data(), arr.name.size(), h);
    h = fnv1a64(arr.values.data(), arr.values.size() * sizeof(float), h);
  }
  return h;
}

bool snapshots_bit_identical(const ParameterSnapshot& a, const ParameterSnapshot& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || a[i].values.size() != b[i].values.size()) return false;
    if (std::memcmp(a[i].values.data(), b[i].values.data(),
                    a[i].values.size() * sizeof(float)) != 0) {
      return false;
    }
  }
  return true;
}

size_t snapshot_value_count(const ParameterSnapshot& snap) {
  size_t n = 0;
  for (const auto& arr : snap) n += arr.values.size();
  return n;
}

std::string apply_template(const std::string& template_text, const std::string& category) {
  const auto first = template_text.find("{}");
  if (first == std::string::npos || template_text.find("{}", first + 1) != std::string::npos) {
    throw TemplateError("prompt template must contain exactly one '{}' placeholder: '" +
                        template_text + "'");
  }
  std::string out = template_text;
  out.replace(first, 2, category);
  return out;
}

std::string fold_case(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return out;
}

namespace {

// Fixed random projection, scaled uniform in +-sqrt(6 / (fan_in + fan_out)).
MatF fixed_random_matrix(int rows, int cols, uint64_t seed) {
  Rng rng(seed);
  const double bound = std::sqrt(6.0 / (rows + cols));
  MatF m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = static_cast<float>(rng.uniform(-bound, bound));
  }
  return m;
}

NamedArray to_named(const std::string& name, const MatF& m) {
  NamedArray arr;
  arr.name = name;
  arr.values.assign(m.data(), m.data() + m.size());
  return arr;
}

// Seed stream tags for the fixed backbone projections.
constexpr uint64_t kTapStream[3] = {1, 2, 3};
constexpr uint64_t kPatchStream = 4;
constexpr uint64_t kClassStream = 5;
constexpr uint64_t kTextStream = 6;

// Mean RGB per patch of the resized image, g x g patches, 3 values each.
std::vector<std::array<double, 3>> patch_means(const ImageInput& resized, int grid, int patch) {
  std::vector<std::array<double, 3>> means(static_cast<size_t>(grid) * grid);
  const double inv_count = 1.0 / (static_cast<double>(patch) * patch);
  for (int pr = 0; pr < grid; ++pr) {
    for (int pc = 0; pc < grid; ++pc) {
      double acc[3] = {0.0, 0.0, 0.0};
      for (int y = pr * patch; y < (pr + 1) * patch; ++y) {
        for (int x = pc * patch; x < (pc + 1) * patch; ++x) {
          for (int c = 0; c < 3; ++c) acc[c] += resized.at(y, x, c);
        }
      }
      means[static_cast<size_t>(pr) * grid + pc] = {acc[0] * inv_count, acc[1] * inv_count,
                                                    acc[2] * inv_count};
    }
  }
  return means;
}

class ToyLocalizationEncoder final : public LocalizationEncoder {
 public:
  explicit ToyLocalizationEncoder(const EncoderSpec& spec) : spec_(spec) {
    for (int t = 0; t < 3; ++t) {
      tap_weights_[t] = fixed_random_matrix(kToyBoxDescriptorDim, spec.d_loc,
                                            mix_seed(spec.seed, kTapStream[t]));
    }
  }

  PositionAwareTokenSet encode(const ImageInput& image, const std::vector<BoxPrompt>& boxes,
                               SourceTap tap) const override {
    validate_image(image);
    for (size_t i = 0; i < boxes.size(); ++i) validate_box(boxes[i], static_cast<int>(i));

    const int grid = spec_.grid_side();
    const ImageInput resized =
        resize_bilinear(image, spec_.input_resolution, spec_.input_resolution);
    const auto means = patch_means(resized, grid, spec_.patch_size);

    const MatF& w = tap_weights_[static_cast<int>(tap)];
    PositionAwareTokenSet out;
    out.source_tap = tap;
    out.tokens.resize(static_cast<Eigen::Index>(boxes.size()), spec_.d_loc);
    for (size_t i = 0; i < boxes.size(); ++i) {
      const auto desc = box_descriptor(boxes[i], means, grid);
      for (int d = 0; d < spec_.d_loc; ++d) {
        double acc = 0.0;
        for (int k = 0; k < kToyBoxDescriptorDim; ++k) acc += desc[k] * w(k, d);
        out.tokens(static_cast<Eigen::Index>(i), d) = static_cast<float>(acc);
      }
    }
    return out;
  }

  ParameterSnapshot parameters() const override {
    return {to_named("loc.prompt_encoder.weight", tap_weights_[0]),
            to_named("loc.transformer_decoder.weight", tap_weights_[1]),
            to_named("loc.mlp.weight", tap_weights_[2])};
  }

  // Pooled mean RGB over patches whose centers fall inside the box,
  // concatenated with the box geometry.
  static std::array<double, kToyBoxDescriptorDim> box_descriptor(
      const BoxPrompt& box, const std::vector<std::array<double, 3>>& means, int grid) {
    double acc[3] = {0.0, 0.0, 0.0};
    int covered = 0;
    for (int pr = 0; pr < grid; ++pr) {
      const double cy = (pr + 0.5) / grid;
      if (cy < box.y1 || cy > box.y2) continue;
      for (int pc = 0; pc < grid; ++pc) {
        const double cx = (pc + 0.5) / grid;
        if (cx < box.x1 || cx > box.x2) continue;
        const auto& m = means[static_cast<size_t>(pr) * grid + pc];
        for (int c = 0; c < 3; ++c) acc[c] += m[c];
        ++covered;
      }
    }
    if (covered == 0) {
      // Tiny box: fall back to the patch containing the box center.
      const int pc = std::min(grid - 1, static_cast<int>(box.cx() * grid));
      const int pr = std::min(grid - 1, static_cast<int>(box.cy() * grid));
      const auto& m = means[static_cast<size_t>(pr) * grid + pc];
      for (int c = 0; c < 3; ++c) acc[c] = m[c];
      covered = 1;
    }
    return {acc[0] / covered, acc[1] / covered, acc[2] / covered,
            box.x1,           box.y1,           box.x2,
            box.y2,           box.width(),      box.height(),
            box.cx(),         box.cy()};
  }

 private:
  EncoderSpec spec_;
  MatF tap_weights_[3];
};

class ToyVilEncoder final : public VilImageEncoder {
 public:
  explicit ToyVilEncoder(const EncoderSpec& spec) : spec_(spec) {
    const int flat = spec.patch_size * spec.patch_size * 3;
    patch_weight_ = fixed_random_matrix(flat, spec.d_vil, mix_seed(spec.seed, kPatchStream));
    class_weight_ =
        fixed_random_matrix(spec.d_vil, spec.d_vil, mix_seed(spec.seed, kClassStream));
  }

  SemanticFeatureMap encode(const ImageInput& image) const override {
    validate_image(image);
    const int grid = spec_.grid_side();
    const int patch = spec_.patch_size;
    const ImageInput resized =
        resize_bilinear(image, spec_.input_resolution, spec_.input_resolution);

    SemanticFeatureMap out;
    out.grid_rows = grid;
    out.grid_cols = grid;
    out.grid_tokens.resize(static_cast<Eigen::Index>(grid) * grid, spec_.d_vil);
    std::vector<float> flat(static_cast<size_t>(patch) * patch * 3);
    for (int pr = 0; pr < grid; ++pr) {
      for (int pc = 0; pc < grid; ++pc) {
        size_t k = 0;
        for (int y = pr * patch; y < (pr + 1) * patch; ++y) {
          for (int x = pc * patch; x < (pc + 1) * patch; ++x) {
            for (int c = 0; c < 3; ++c) flat[k++] = resized.at(y, x, c);
          }
        }
        const Eigen::Index row = static_cast<Eigen::Index>(pr) * grid + pc;
        Eigen::Map<const Eigen::Matrix<float, 1, Eigen::Dynamic>> fv(flat.data(),
                                                                     static_cast<Eigen::Index>(flat.size()));
        out.grid_tokens.row(row) = fv * patch_weight_;
      }
    }
    const RowVecF mean_token = out.grid_tokens.colwise().mean();
    out.class_token = mean_token * class_weight_;
    return out;
  }

  ParameterSnapshot parameters() const override {
    return {to_named("vil.patch_embed.weight", patch_weight_),
            to_named("vil.class_proj.weight", class_weight_)};
  }

 private:
  EncoderSpec spec_;
  MatF patch_weight_;
  MatF class_weight_;
};

class ToyTextEncoder final : public TextEncoder {
 public:
  explicit ToyTextEncoder(const EncoderSpec& spec) : spec_(spec) {
    weight_ = fixed_random_matrix(kToyTextBins, spec.d_vil, mix_seed(spec.seed, kTextStream));
  }

  TextEmbeddingTable encode(const std::vector<std::string>& categories,
                            const std::string& template_text) const override {
    // Validates the template even for an empty category list.
    apply_template(template_text, "probe");
    std::set<std::string> seen;
    for (const auto& name : categories) {
      if (name.empty()) throw InvalidInputError("category names must be non-empty");
      if (!seen.insert(fold_case(name)).second) {
        throw DuplicateCategoryError("duplicate category after case-folding: '" + name + "'");
      }
    }

    TextEmbeddingTable table;
    table.category_names = categories;
    table.template_text = template_text;
    table.embeddings.resize(static_cast<Eigen::Index>(categories.size()), spec_.d_vil);
    for (size_t i = 0; i < categories.size(); ++i) {
      const std::string prompt = apply_template(template_text, categories[i]);
      const auto feat = hash_features(prompt);
      for (int d = 0; d < spec_.d_vil; ++d) {
        double acc = 0.0;
        for (int b = 0; b < kToyTextBins; ++b) acc += feat[b] * weight_(b, d);
        table.embeddings(static_cast<Eigen::Index>(i), d) = static_cast<float>(acc);
      }
      const double norm = table.embeddings.row(static_cast<Eigen::Index>(i)).cast<double>().norm();
      if (norm < 1e-12) {
        throw NumericalError("degenerate text embedding for prompt: '" + prompt + "'");
      }
      table.embeddings.row(static_cast<Eigen::Index>(i)) /= static_cast<float>(norm);
    }
    return table;
  }

  ParameterSnapshot parameters() const override {
    return {to_named("text.embed.weight", weight_)};
  }

  // Hashed bag of character unigrams and bigrams, scaled by prompt
  // length. Bigrams keep anagram category names apart.
  static std::array<double, kToyTextBins> hash_features(const std::string& prompt) {
    std::array<double, kToyTextBins> feat{};
    for (size_t i = 0; i < prompt.size(); ++i) {
      const auto c = static_cast<unsigned char>(prompt[i]);
      feat[(static_cast<uint32_t>(c) * 2654435761u) % kToyTextBins] += 1.0;
      if (i + 1 < prompt.size()) {
        const auto c2 = static_cast<unsigned char>(prompt[i + 1]);
        feat[((static_cast<uint32_t>(c) * 131u + c2) * 2654435761u) % kToyTextBins] += 1.0;
      }
    }
    if (!prompt.empty()) {
      for (auto& v : feat) v /= static_cast<double>(prompt.size());
    }
    return feat;
  }

 private:
  EncoderSpec spec_;
  MatF weight_;
};

}  // namespace

ParameterSnapshot EncoderSet::parameters() const {
  ParameterSnapshot snap;
  for (const auto& part : {localization->parameters(), vil->parameters(), text->parameters()}) {
    snap.insert(snap.end(), part.begin(), part.end());
  }
  return snap;
}

EncoderSet make_toy_encoders(const EncoderSpec& spec) {
  spec.validate();
  EncoderSet set;
  set.spec = spec;
  set.localization = std::make_shared<ToyLocalizationEncoder>(spec);
  set.vil = std::make_shared<ToyVilEncoder>(spec);
  set.text = std::make_shared<ToyTextEncoder>(spec);
  return set;
}

}  // namespace regionspot
