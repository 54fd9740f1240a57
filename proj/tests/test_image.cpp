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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "regionspot/common.hpp"
#include "regionspot/errors.hpp"
#include "regionspot/image.hpp"
#include "support/fixtures.hpp"

using namespace regionspot;

namespace {

ImageInput random_image(const std::string& id, int h, int w, uint64_t seed) {
  ImageInput img;
  img.id = id;
  img.height = h;
  img.width = w;
  img.pixels.resize(static_cast<size_t>(h) * w * 3);
  Rng rng(seed);
  for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
  return img;
}

// Straight-line reimplementation of half-pixel-center bilinear sampling.
float bilinear_sample(const ImageInput& src, int oy, int ox, int c, int out_h, int out_w) {
  double fy = (oy + 0.5) * (static_cast<double>(src.height) / out_h) - 0.5;
  double fx = (ox + 0.5) * (static_cast<double>(src.width) / out_w) - 0.5;
  fy = std::min(std::max(fy, 0.0), static_cast<double>(src.height - 1));
  fx = std::min(std::max(fx, 0.0), static_cast<double>(src.width - 1));
  const int y0 = static_cast<int>(std::floor(fy));
  const int x0 = static_cast<int>(std::floor(fx));
  const int y1 = std::min(y0 + 1, src.height - 1);
  const int x1 = std::min(x0 + 1, src.width - 1);
  const double wy = fy - y0, wx = fx - x0;
  return static_cast<float>((1 - wy) * ((1 - wx) * src.at(y0, x0, c) + wx * src.at(y0, x1, c)) +
                            wy * ((1 - wx) * src.at(y1, x0, c) + wx * src.at(y1, x1, c)));
}

}  // namespace

TEST_CASE("validate_image rejects empty and out-of-range inputs") {
  ImageInput empty;
  empty.id = "empty";
  CHECK_THROWS_AS(validate_image(empty), InvalidInputError);

  ImageInput bad = ImageInput::filled("bad", 2, 2, 0.5f, 0.5f, 0.5f);
  bad.pixels[3] = 1.5f;
  CHECK_THROWS_AS(validate_image(bad), InvalidInputError);
  bad.pixels[3] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(validate_image(bad), InvalidInputError);

  const ImageInput ok = ImageInput::filled("ok", 2, 3, 0.0f, 1.0f, 0.25f);
  CHECK_NOTHROW(validate_image(ok));
}

TEST_CASE("resize matches an independent bilinear recomputation") {
  const ImageInput src = random_image("src", 13, 9, 42);
  for (const auto [oh, ow] : {std::pair{7, 5}, std::pair{20, 31}, std::pair{13, 9}}) {
    const ImageInput dst = resize_bilinear(src, oh, ow);
    REQUIRE(dst.height == oh);
    REQUIRE(dst.width == ow);
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        for (int c = 0; c < 3; ++c) {
          CHECK(dst.at(y, x, c) ==
                doctest::Approx(bilinear_sample(src, y, x, c, oh, ow)).epsilon(1e-6));
        }
      }
    }
  }
}

TEST_CASE("resize to the same size copies pixels exactly") {
  const ImageInput src = random_image("src", 8, 11, 3);
  const ImageInput dst = resize_bilinear(src, 8, 11);
  CHECK(std::memcmp(src.pixels.data(), dst.pixels.data(), src.pixels.size() * sizeof(float)) ==
        0);
}

TEST_CASE("PPM round trip preserves 8-bit values") {
  const std::string dir = testing::make_temp_dir("ppm");
  const ImageInput src = random_image("src", 6, 7, 11);
  write_ppm(src, dir + "/img.ppm");
  const ImageInput back = read_ppm(dir + "/img.ppm");
  REQUIRE(back.height == src.height);
  REQUIRE(back.width == src.width);
  for (size_t i = 0; i < src.pixels.size(); ++i) {
    CHECK(std::abs(back.pixels[i] - src.pixels[i]) <= 0.5f / 255.0f + 1e-6f);
  }
  // A second round trip is lossless: values are already 8-bit multiples.
  write_ppm(back, dir + "/img2.ppm");
  const ImageInput back2 = read_ppm(dir + "/img2.ppm");
  CHECK(std::memcmp(back.pixels.data(), back2.pixels.data(),
                    back.pixels.size() * sizeof(float)) == 0);
}

TEST_CASE("read_ppm rejects non-PPM content") {
  const std::string dir = testing::make_temp_dir("ppm_bad");
  {
    std::ofstream out(dir + "/bad.ppm", std::ios::binary);
    out << "P3\n1 1\n255\n0 0 0\n";
  }
  CHECK_THROWS_AS(read_ppm(dir + "/bad.ppm"), FormatError);
  CHECK_THROWS_AS(read_ppm(dir + "/missing.ppm"), IoError);
}

TEST_CASE("grayscale PNG writes decode back to the same bytes") {
  const std::string dir = testing::make_temp_dir("png");
  const int h = 5, w = 9;
  std::vector<uint8_t> pixels(static_cast<size_t>(h) * w);
  Rng rng(99);
  for (auto& p : pixels) p = static_cast<uint8_t>(rng.next_below(256));
  write_png_gray(dir + "/map.png", pixels, h, w);

  const testing::GrayPng png = testing::read_png_gray(dir + "/map.png");
  REQUIRE(png.height == h);
  REQUIRE(png.width == w);
  CHECK(png.pixels == pixels);
}
