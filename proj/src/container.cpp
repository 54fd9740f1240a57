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

#include "regionspot/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "regionspot/errors.hpp"

namespace regionspot {

static_assert(std::endian::native == std::endian::little,
              "array container serialization assumes a little-endian host");

namespace {

void write_u64_le(std::ostream& out, uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.write(buf, 8);
}

uint64_t read_u64_le(std::istream& in) {
  char buf[8];
  in.read(buf, 8);
  uint64_t v = 0;
  std::memcpy(&v, buf, 8);
  return v;
}

}  // namespace

const NamedArray* ArrayContainer::find(const std::string& name) const {
  for (const auto& arr : arrays) {
    if (arr.name == name) return &arr;
  }
  return nullptr;
}

const NamedArray& ArrayContainer::require(const std::string& name) const {
  const NamedArray* arr = find(name);
  if (!arr) throw ShapeError("container is missing array '" + name + "'");
  return *arr;
}

void ArrayContainer::write(const std::string& path) const {
  nlohmann::json header;
  header["container_version"] = kContainerVersion;
  header["meta"] = meta;
  nlohmann::json index = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& arr : arrays) {
    index.push_back({{"name", arr.name}, {"offset", offset}, {"count", arr.values.size()}});
    offset += arr.values.size() * sizeof(float);
  }
  header["arrays"] = index;
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write container file: " + path);
  out.write(kContainerMagic, sizeof(kContainerMagic));
  write_u64_le(out, header_str.size());
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& arr : arrays) {
    out.write(reinterpret_cast<const char*>(arr.values.data()),
              static_cast<std::streamsize>(arr.values.size() * sizeof(float)));
  }
  if (!out) throw IoError("write failure on container file: " + path);
}

ArrayContainer ArrayContainer::read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open container file: " + path);
  char magic[sizeof(kContainerMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kContainerMagic, sizeof(magic)) != 0) {
    throw FormatError("not an array container file: " + path, 0);
  }
  const uint64_t header_len = read_u64_le(in);
  std::string header_str(header_len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw FormatError("truncated container header in " + path, 16);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("bad container header in " + path + ": " + e.what(),
                      static_cast<long>(16 + e.byte));
  }
  const int version = header.at("container_version").get<int>();
  if (version != kContainerVersion) {
    throw UnsupportedVersionError("container version " + std::to_string(version) +
                                  " is not supported (expected " +
                                  std::to_string(kContainerVersion) + ")");
  }
  ArrayContainer c;
  c.meta = header.at("meta");
  const uint64_t data_start = sizeof(kContainerMagic) + 8 + header_len;
  for (const auto& entry : header.at("arrays")) {
    NamedArray arr;
    arr.name = entry.at("name").get<std::string>();
    const uint64_t offset = entry.at("offset").get<uint64_t>();
    const uint64_t count = entry.at("count").get<uint64_t>();
    arr.values.resize(count);
    in.seekg(static_cast<std::streamoff>(data_start + offset));
    in.read(reinterpret_cast<char*>(arr.values.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (!in) throw FormatError("truncated array data for '" + arr.name + "' in " + path);
    c.arrays.push_back(std::move(arr));
  }
  return c;
}

}  // namespace regionspot
