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

#ifndef REGIONSPOT_ERRORS_HPP_
#define REGIONSPOT_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace regionspot {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad or non-finite input data (images, pixel values, empty key sets).
class InvalidInputError : public Error {
 public:
  using Error::Error;
};

// A box violates the coordinate contract; message carries the box index.
class InvalidBoxError : public Error {
 public:
  InvalidBoxError(const std::string& msg, int index) : Error(msg), index(index) {}
  int index;
};

// Tensor dimension mismatch; message names expected vs actual.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Unparseable file; message carries the byte offset where parsing failed.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& msg, long byte_offset = -1)
      : Error(msg), byte_offset(byte_offset) {}
  long byte_offset;
};

// An annotation references an id that does not exist.
class ReferentialIntegrityError : public Error {
 public:
  using Error::Error;
};

class DuplicateCategoryError : public Error {
 public:
  using Error::Error;
};

class TemplateError : public Error {
 public:
  using Error::Error;
};

// Non-finite value produced by otherwise valid inputs.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class UnsupportedVersionError : public Error {
 public:
  using Error::Error;
};

// Run configuration failed validation; message names the offending field.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss; message carries the batch image ids.
class TrainingDivergedError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace regionspot

#endif  // REGIONSPOT_ERRORS_HPP_
