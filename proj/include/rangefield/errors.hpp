// Copyright 2026 The rangefield Authors
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

namespace rangefield {

/// Base class for all library errors. Subclasses sort errors into the
/// three CLI exit-code families: config (2), data (3), numeric (4).
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : Error {
  using Error::Error;
};

struct DataError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

// -- geometry / projection --------------------------------------------------
struct ZeroDepth : NumericError {
  ZeroDepth() : NumericError("point has zero depth, cannot project") {}
};

// -- autodiff ----------------------------------------------------------------
struct ShapeMismatch : NumericError {
  using NumericError::NumericError;
};

struct NonScalarLoss : NumericError {
  using NumericError::NumericError;
};

// -- fields / rendering -------------------------------------------------------
struct OutOfBounds : NumericError {
  using NumericError::NumericError;
};

struct BadBounds : NumericError {
  using NumericError::NumericError;
};

struct NonMonotoneSamples : NumericError {
  using NumericError::NumericError;
};

// -- training ----------------------------------------------------------------
struct MisalignedBatch : NumericError {
  using NumericError::NumericError;
};

struct NonFiniteLoss : NumericError {
  using NumericError::NumericError;
};

// -- metrics -----------------------------------------------------------------
struct EmptySet : NumericError {
  using NumericError::NumericError;
};

// -- dataset io ---------------------------------------------------------------
struct EmptyScene : DataError {
  using DataError::DataError;
};

struct SizeMismatch : DataError {
  using DataError::DataError;
};

struct TruncatedFile : DataError {
  using DataError::DataError;
};

struct MissingFrame : DataError {
  using DataError::DataError;
};

}  // namespace rangefield
