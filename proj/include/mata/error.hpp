// Copyright 2026  The mata-fusion Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace mata {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced (or consumed) by an operation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Sinkhorn could not produce a usable plan.
class SolverError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent on-disk data.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Semantically invalid data (label disagreement, empty pairing, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or hyperparameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Training diverged or otherwise failed.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace mata
