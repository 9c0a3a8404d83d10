/*
 * Copyright (c) 2026 The lcp Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace lcp {

// Error categories. The numeric values double as CLI exit codes for the
// first three; the rest are only surfaced through the C API.
enum class ErrorKind : int {
  config = 2,
  data = 3,
  missing_artifact = 4,
  input = 5,
  state = 6,
  training = 7,
  io = 8,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::config, w) {}
};
struct DataError : Error {
  explicit DataError(const std::string& w) : Error(ErrorKind::data, w) {}
};
struct MissingArtifactError : Error {
  explicit MissingArtifactError(const std::string& w)
      : Error(ErrorKind::missing_artifact, w) {}
};
struct InputError : Error {
  explicit InputError(const std::string& w) : Error(ErrorKind::input, w) {}
};
struct StateError : Error {
  explicit StateError(const std::string& w) : Error(ErrorKind::state, w) {}
};
struct TrainingError : Error {
  explicit TrainingError(const std::string& w) : Error(ErrorKind::training, w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorKind::io, w) {}
};

}  // namespace lcp
