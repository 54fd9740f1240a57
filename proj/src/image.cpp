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

#include "regionspot/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "regionspot/errors.hpp"

namespace regionspot {

ImageInput ImageInput::filled(const std::string& id, int h, int w, float r, float g, float b) {
  ImageInput img;
  img.id = id;
  img.height = h;
  img.width = w;
  img.pixels.resize(static_cast<size_t>(h) * w * 3);
  for (size_t i = 0; i < img.pixels.size(); i += 3) {
    img.pixels[i] = r;
    img.pixels[i + 1] = g;
    img.pixels[i + 2] = b;
  }
  return img;
}

void validate_image(const ImageInput& img) {
  if (img.height < 1 || img.width < 1) {
    throw InvalidInputError("image '" + img.id + "' is empty: " + std::to_string(img.height) +
                            "x" + std::to_string(img.width));
  }
  if (img.pixels.size() != static_cast<size_t>(img.height) * img.width * 3) {
    throw InvalidInputError("image '" + img.id + "' pixel buffer size mismatch");
  }
  for (float v : img.pixels) {
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
      throw InvalidInputError("image '" + img.id + "' has pixel value outside [0,1]");
    }
  }
}

ImageInput resize_bilinear(const ImageInput& src, int out_h, int out_w) {
  ImageInput dst;
  dst.id = src.id;
  dst.height = out_h;
  dst.width = out_w;
  dst.pixels.resize(static_cast<size_t>(out_h) * out_w * 3);
  const double sy = static_cast<double>(src.height) / out_h;
  const double sx = static_cast<double>(src.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::min(std::max(fy, 0.0), static_cast<double>(src.height - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::min(std::max(fx, 0.0), static_cast<double>(src.width - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = (1.0 - wx) * src.at(y0, x0, c) + wx * src.at(y0, x1, c);
        const double bot = (1.0 - wx) * src.at(y1, x0, c) + wx * src.at(y1, x1, c);
        dst.at(y, x, c) = static_cast<float>((1.0 - wy) * top + wy * bot);
      }
    }
  }
  return dst;
}

namespace {

void skip_ppm_whitespace(std::istream& in) {
  int c = in.peek();
  while (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '#') {
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else {
      in.get();
    }
    c = in.peek();
  }
}

}  // namespace

ImageInput read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image file: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw FormatError("not a P6 PPM file: " + path, 0);
  int w = 0, h = 0, maxval = 0;
  skip_ppm_whitespace(in);
  in >> w;
  skip_ppm_whitespace(in);
  in >> h;
  skip_ppm_whitespace(in);
  in >> maxval;
  if (!in || w < 1 || h < 1 || maxval != 255) {
    throw FormatError("bad PPM header in " + path, static_cast<long>(in.tellg()));
  }
  in.get();  // single whitespace after maxval
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<size_t>(in.gcount()) != raw.size()) {
    throw FormatError("truncated PPM pixel data in " + path, static_cast<long>(in.tellg()));
  }
  ImageInput img;
  img.id = path;
  img.height = h;
  img.width = w;
  img.pixels.resize(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) img.pixels[i] = raw[i] / 255.0f;
  return img;
}

void write_ppm(const ImageInput& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image file: " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> raw(img.pixels.size());
  for (size_t i = 0; i < raw.size(); ++i) {
    const float v = std::min(std::max(img.pixels[i], 0.0f), 1.0f);
    raw[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

namespace {

void put_u32_be(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

void put_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& payload) {
  put_u32_be(out, static_cast<uint32_t>(payload.size()));
  std::vector<uint8_t> body(type, type + 4);
  body.insert(body.end(), payload.begin(), payload.end());
  out.insert(out.end(), body.begin(), body.end());
  put_u32_be(out, static_cast<uint32_t>(crc32(0L, body.data(), static_cast<uInt>(body.size()))));
}

}  // namespace

void write_png_gray(const std::string& path, const std::vector<uint8_t>& pixels, int height,
                    int width) {
  if (height < 1 || width < 1 || pixels.size() != static_cast<size_t>(height) * width) {
    throw InvalidInputError("write_png_gray: bad dimensions");
  }
  // One filter byte (0 = none) per scanline.
  std::vector<uint8_t> scanlines;
  scanlines.reserve(static_cast<size_t>(height) * (width + 1));
  for (int y = 0; y < height; ++y) {
    scanlines.push_back(0);
    scanlines.insert(scanlines.end(), pixels.begin() + static_cast<size_t>(y) * width,
                     pixels.begin() + static_cast<size_t>(y + 1) * width);
  }
  uLongf comp_cap = compressBound(static_cast<uLong>(scanlines.size()));
  std::vector<uint8_t> compressed(comp_cap);
  if (compress2(compressed.data(), &comp_cap, scanlines.data(),
                static_cast<uLong>(scanlines.size()), 6) != Z_OK) {
    throw IoError("write_png_gray: zlib compression failed");
  }
  compressed.resize(comp_cap);

  std::vector<uint8_t> png = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  std::vector<uint8_t> ihdr;
  put_u32_be(ihdr, static_cast<uint32_t>(width));
  put_u32_be(ihdr, static_cast<uint32_t>(height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(0);  // color type: grayscale
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter
  ihdr.push_back(0);  // interlace
  put_chunk(png, "IHDR", ihdr);
  put_chunk(png, "IDAT", compressed);
  put_chunk(png, "IEND", {});

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write PNG file: " + path);
  out.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
}

}  // namespace regionspot
