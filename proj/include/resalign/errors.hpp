// Copyright 2026 The resalign-toy Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
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

namespace resalign {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid settings, mismatched dimensions, malformed config files.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Caller passed arguments that violate an operation's preconditions.
class UsageError : public Error {
 public:
  using Error::Error;
};

// A non-finite value appeared while evaluating a graph.
class NumericError : public Error {
 public:
  NumericError(std::string node, const std::string& what)
      : Error(what), node_(std::move(node)) {}
  const std::string& node() const noexcept { return node_; }

 private:
  std::string node_;
};

class AdaptationDiverged : public Error {
 public:
  AdaptationDiverged(std::size_t step, const std::string& what)
      : Error(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class OracleError : public Error {
 public:
  using Error::Error;
};

class OracleUnsupported : public OracleError {
 public:
  using OracleError::OracleError;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

// Raised by the outer unlearning loop; carries the failing outer step.
class OuterStepError : public Error {
 public:
  OuterStepError(std::size_t step, const std::string& what)
      : Error(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace resalign
