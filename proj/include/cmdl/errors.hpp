// Copyright 2026 The cmdl Authors
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

#pragma once

#include <stdexcept>
#include <string>

namespace cmdl {

// Error taxonomy shared by every module. The CLI maps categories to exit
// codes: config/data/shape/usage/format -> 2, numeric/training -> 3, io -> 4.
class Error : public std::runtime_error {
 public:
  enum class Kind { config, data, shape, usage, numeric, training, format, io };

  Error(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}

  Kind kind() const { return kind_; }

  int exit_code() const {
    switch (kind_) {
      case Kind::numeric:
      case Kind::training:
        return 3;
      case Kind::io:
        return 4;
      default:
        return 2;
    }
  }

 private:
  Kind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(Kind::config, msg) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error(Kind::data, msg) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(Kind::shape, msg) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& msg) : Error(Kind::usage, msg) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(Kind::numeric, msg) {}
};

class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& msg) : Error(Kind::training, msg) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& msg) : Error(Kind::format, msg) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(Kind::io, msg) {}
};

}  // namespace cmdl
