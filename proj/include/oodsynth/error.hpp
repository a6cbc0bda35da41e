/*
 * Copyright 2026 The oodsynth Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef OODSYNTH_ERROR_HPP_
#define OODSYNTH_ERROR_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace oodsynth {

// Failure categories map one-to-one onto CLI exit codes. Precondition
// violations on public functions throw std::invalid_argument (exit 2).

// Invalid configuration file, flag, or parameter combination.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite loss, Bessel overflow, zero-norm projection and the like.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed DOEB container. The message names the byte offset.
class FormatError : public IoError {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : IoError(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kConfig = 2;
inline constexpr int kNumerical = 3;
inline constexpr int kIo = 4;
}  // namespace exit_code

}  // namespace oodsynth

#endif  // OODSYNTH_ERROR_HPP_
