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

#include "support/fixtures.hpp"

#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "regionspot/errors.hpp"
#include "regionspot/image.hpp"

namespace regionspot::testing {

using nlohmann::json;

std::string make_temp_dir(const std::string& tag) {
  std::string tmpl =
      (std::filesystem::temp_directory_path() / ("regionspot_" + tag + "_XXXXXX")).string();
  std::vector<char> buf(tmpl.begin(), tmpl.end());
  buf.push_back('\0');
  if (!mkdtemp(buf.data())) throw std::runtime_error("mkdtemp failed for " + tmpl);
  return std::string(buf.data());
}

namespace {

struct Color {
  float r, g, b;
};

Color category_color(size_t index) {
  static const Color palette[] = {
      {0.86f, 0.12f, 0.24f},  // crimson
      {0.08f, 0.71f, 0.35f},  // emerald
      {0.12f, 0.43f, 0.86f},  // azure
      {0.93f, 0.78f, 0.10f},
      {0.55f, 0.15f, 0.75f},
      {0.95f, 0.45f, 0.10f},
  };
  return palette[index % (sizeof(palette) / sizeof(palette[0]))];
}

}  // namespace

ToyDataset write_toy_dataset(const std::string& dir, const ToyDatasetSpec& spec) {
  std::filesystem::create_directories(dir + "/images");
  Rng rng(mix_seed(spec.seed, 0x746F79ULL));

  json images = json::array();
  json annotations = json::array();
  json categories = json::array();
  for (size_t c = 0; c < spec.categories.size(); ++c) {
    categories.push_back({{"id", c + 1}, {"name", spec.categories[c]}});
  }

  ToyDataset out;
  out.categories = spec.categories;
  out.image_root = dir + "/images";

  const int size = spec.image_size;
  int ann_id = 1;
  for (int i = 0; i < spec.num_images; ++i) {
    ImageInput img = ImageInput::filled(spec.name + std::to_string(i), size, size, 0.5f, 0.5f,
                                        0.5f);
    for (auto& v : img.pixels) {
      v = std::min(1.0f, std::max(0.0f, v + static_cast<float>(rng.uniform(-0.04, 0.04))));
    }

    AnnotationRecord rec;
    rec.image_id = std::to_string(i + 1);
    rec.image_path = "img_" + std::to_string(i) + ".ppm";
    rec.width = size;
    rec.height = size;

    const int slot_w = size / spec.regions_per_image;
    for (int r = 0; r < spec.regions_per_image; ++r) {
      const size_t cat = (static_cast<size_t>(i) + static_cast<size_t>(r)) % spec.categories.size();
      const Color color = category_color(cat);
      const int x0 = r * slot_w + 1 + static_cast<int>(rng.next_below(2));
      const int y0 = 4 + static_cast<int>(rng.next_below(static_cast<uint64_t>(size / 3)));
      const int w = slot_w - 3;
      const int h = size / 3;
      for (int y = y0; y < std::min(size, y0 + h); ++y) {
        for (int x = x0; x < std::min(size, x0 + w); ++x) {
          img.at(y, x, 0) = color.r;
          img.at(y, x, 1) = color.g;
          img.at(y, x, 2) = color.b;
        }
      }
      annotations.push_back({{"id", ann_id++},
                             {"image_id", i + 1},
                             {"category_id", cat + 1},
                             {"bbox", {x0, y0, w, h}}});
      rec.regions.push_back(
          {normalize_box_xywh(x0, y0, w, h, size, size), spec.categories[cat]});
    }
    write_ppm(img, out.image_root + "/" + rec.image_path);
    images.push_back({{"id", i + 1},
                      {"file_name", rec.image_path},
                      {"width", size},
                      {"height", size}});
    out.records.push_back(std::move(rec));
  }

  out.annotations_path = dir + "/annotations.json";
  std::ofstream ann_out(out.annotations_path);
  ann_out << json{{"images", images}, {"annotations", annotations}, {"categories", categories}}
                 .dump(2)
          << "\n";

  out.vocab_path = dir + "/vocab.txt";
  std::ofstream vocab_out(out.vocab_path);
  for (const auto& name : spec.categories) vocab_out << name << "\n";
  return out;
}

ToyModelSetup toy_model_setup() {
  ToyModelSetup setup;
  setup.encoder.name = "toy";
  setup.encoder.d_loc = 48;
  setup.encoder.d_vil = 96;
  setup.encoder.patch_size = 16;
  setup.encoder.input_resolution = 64;
  setup.encoder.seed = 0;
  setup.fusion.depth = 2;
  setup.fusion.c_dim = 96;
  setup.fusion.num_heads = 4;
  setup.alignment = AlignmentConfig{};
  // A softer logit scale converges faster at these tiny dimensions.
  setup.alignment.temperature_init = 5.0;
  return setup;
}

namespace {

uint32_t get_u32_be(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

}  // namespace

GrayPng read_png_gray(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open PNG: " + path);
  std::vector<uint8_t> data((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
  static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (data.size() < 8 || std::memcmp(data.data(), sig, 8) != 0) {
    throw std::runtime_error("bad PNG signature: " + path);
  }
  GrayPng png;
  std::vector<uint8_t> idat;
  size_t pos = 8;
  while (pos + 8 <= data.size()) {
    const uint32_t len = get_u32_be(&data[pos]);
    const std::string type(reinterpret_cast<const char*>(&data[pos + 4]), 4);
    const uint8_t* payload = &data[pos + 8];
    if (type == "IHDR") {
      png.width = static_cast<int>(get_u32_be(payload));
      png.height = static_cast<int>(get_u32_be(payload + 4));
      if (payload[8] != 8 || payload[9] != 0) {
        throw std::runtime_error("not 8-bit grayscale: " + path);
      }
    } else if (type == "IDAT") {
      idat.insert(idat.end(), payload, payload + len);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;
  }
  const size_t raw_size = static_cast<size_t>(png.height) * (png.width + 1);
  std::vector<uint8_t> raw(raw_size);
  uLongf out_len = raw_size;
  if (uncompress(raw.data(), &out_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      out_len != raw_size) {
    throw std::runtime_error("PNG inflate failed: " + path);
  }
  png.pixels.resize(static_cast<size_t>(png.height) * png.width);
  for (int y = 0; y < png.height; ++y) {
    if (raw[static_cast<size_t>(y) * (png.width + 1)] != 0) {
      throw std::runtime_error("unexpected PNG filter type in " + path);
    }
    std::memcpy(&png.pixels[static_cast<size_t>(y) * png.width],
                &raw[static_cast<size_t>(y) * (png.width + 1) + 1],
                static_cast<size_t>(png.width));
  }
  return png;
}

}  // namespace regionspot::testing
