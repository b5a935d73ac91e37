// Copyright 2026 The mtlbench Authors.
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

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mtlbench {

// Root of every error this library throws. The harness catches this type to
// record crashed trials.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// A NaN or Inf was produced or supplied where a finite value is required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Singular or otherwise unusable geometry (e.g. a linear solve with a
// vanishing pivot).
class DegenerateGeometryError : public Error {
 public:
  using Error::Error;
};

// A task gradient (or Gram diagonal entry) is numerically zero.
class ZeroGradientError : public Error {
 public:
  ZeroGradientError(std::size_t task, const std::string& what)
      : Error(what + " (task " + std::to_string(task) + ")"), task_(task) {}
  std::size_t task() const noexcept { return task_; }

 private:
  std::size_t task_;
};

// A loss value outside the domain a method requires (e.g. log of a
// nonpositive loss).
class LossDomainError : public Error {
 public:
  LossDomainError(std::size_t task, const std::string& what)
      : Error(what + " (task " + std::to_string(task) + ")"), task_(task) {}
  std::size_t task() const noexcept { return task_; }

 private:
  std::size_t task_;
};

// A task loss evaluated to NaN or Inf.
class NonFiniteLossError : public NumericalError {
 public:
  explicit NonFiniteLossError(std::size_t task)
      : NumericalError("non-finite loss (task " + std::to_string(task) + ")"), task_(task) {}
  std::size_t task() const noexcept { return task_; }

 private:
  std::size_t task_;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t offset)
      : Error(what + " at line " + std::to_string(line) + ", offset " +
              std::to_string(offset)),
        line_(line),
        offset_(offset) {}
  std::size_t line() const noexcept { return line_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t line_;
  std::size_t offset_;
};

}  // namespace mtlbench
