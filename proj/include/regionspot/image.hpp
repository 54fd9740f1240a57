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

#ifndef REGIONSPOT_IMAGE_HPP_
#define REGIONSPOT_IMAGE_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace regionspot {

// Dense H x W x 3 image, interleaved RGB, values in [0, 1].
struct ImageInput {
  std::string id;
  int height = 0;
  int width = 0;
  std::vector<float> pixels;  // size height * width * 3

  float at(int y, int x, int c) const { return pixels[(static_cast<size_t>(y) * width + x) * 3 + c]; }
  float& at(int y, int x, int c) { return pixels[(static_cast<size_t>(y) * width + x) * 3 + c]; }

  static ImageInput filled(const std::string& id, int h, int w, float r, float g, float b);
};

// Throws InvalidInputError on empty dimensions, out-of-range or
// non-finite pixel values.
void validate_image(const ImageInput& img);

// Bilinear resize, half-pixel centers, no cropping.
ImageInput resize_bilinear(const ImageInput& src, int out_h, int out_w);

// Binary PPM (P6), 8-bit.
ImageInput read_ppm(const std::string& path);
void write_ppm(const ImageInput& img, const std::string& path);

// 8-bit grayscale PNG (zlib-compressed, no filtering).
void write_png_gray(const std::string& path, const std::vector<uint8_t>& pixels, int height,
                    int width);

}  // namespace regionspot

#endif  // REGIONSPOT_IMAGE_HPP_
