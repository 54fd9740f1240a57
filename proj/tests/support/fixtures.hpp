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

#ifndef REGIONSPOT_TESTS_SUPPORT_FIXTURES_HPP_
#define REGIONSPOT_TESTS_SUPPORT_FIXTURES_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "regionspot/datasets.hpp"
#include "regionspot/trainer.hpp"

namespace regionspot::testing {

// Creates a unique scratch directory under the system temp root.
std::string make_temp_dir(const std::string& tag);

struct ToyDatasetSpec {
  int num_images = 4;
  int image_size = 32;
  int regions_per_image = 3;
  std::vector<std::string> categories = {"crimson", "emerald", "azure"};
  uint64_t seed = 7;
  std::string name = "toy";
};

struct ToyDataset {
  std::string annotations_path;
  std::string image_root;
  std::string vocab_path;
  std::vector<AnnotationRecord> records;
  std::vector<std::string> categories;
};

// Deterministic synthetic detection dataset: colored rectangles on a noisy
// gray background, one category per color. Writes PPM images, a COCO-style
// annotation JSON and a vocabulary file under `dir`.
ToyDataset write_toy_dataset(const std::string& dir, const ToyDatasetSpec& spec);

// Small model configuration suited to the toy datasets (4x4 ViL grid).
struct ToyModelSetup {
  EncoderSpec encoder;
  FusionConfig fusion;
  AlignmentConfig alignment;
};
ToyModelSetup toy_model_setup();

struct GrayPng {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;
};

// Minimal grayscale PNG reader (unfiltered scanlines) used to verify
// exported heatmaps byte-for-byte.
GrayPng read_png_gray(const std::string& path);

}  // namespace regionspot::testing

#endif  // REGIONSPOT_TESTS_SUPPORT_FIXTURES_HPP_
