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

// Generates a small synthetic detection dataset for exercising the
// training and evaluation pipeline end to end.

#include <iostream>

#include <CLI11.hpp>

#include "support/fixtures.hpp"

int main(int argc, char** argv) {
  CLI::App app{"generate a synthetic colored-rectangle detection dataset"};
  std::string out_dir;
  regionspot::testing::ToyDatasetSpec spec;
  app.add_option("--out", out_dir, "output directory")->required();
  app.add_option("--images", spec.num_images, "number of images");
  app.add_option("--size", spec.image_size, "square image size in pixels");
  app.add_option("--regions", spec.regions_per_image, "regions per image");
  app.add_option("--seed", spec.seed, "generator seed");
  CLI11_PARSE(app, argc, argv);

  const auto dataset = regionspot::testing::write_toy_dataset(out_dir, spec);
  std::cout << "annotations: " << dataset.annotations_path << "\n"
            << "images:      " << dataset.image_root << "\n"
            << "vocabulary:  " << dataset.vocab_path << "\n";
  return 0;
}
