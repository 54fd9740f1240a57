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

#ifndef REGIONSPOT_CONTAINER_HPP_
#define REGIONSPOT_CONTAINER_HPP_

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "regionspot/encoders.hpp"

namespace regionspot {

// Binary container: 8-byte magic, little-endian u64 header length, a JSON
// header carrying `meta` plus an index table of named arrays, then the raw
// little-endian float32 array data.
struct ArrayContainer {
  nlohmann::json meta;
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
  const NamedArray& require(const std::string& name) const;

  void write(const std::string& path) const;
  static ArrayContainer read(const std::string& path);
};

inline constexpr char kContainerMagic[8] = {'R', 'S', 'A', 'R', 'R', 'A', 'Y', '1'};
inline constexpr int kContainerVersion = 1;

}  // namespace regionspot

#endif  // REGIONSPOT_CONTAINER_HPP_
