/* Copyright 2026 The romtrack Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef ROMTRACK_ERRORS_H_
#define ROMTRACK_ERRORS_H_

#include <stdexcept>
#include <string>

namespace romtrack {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or extent mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A precondition of an operation was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Image, patch or grid geometry is inconsistent.
class GeometryError : public Error {
 public:
  using Error::Error;
};

// Configuration failed validation; the message names the constraint.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed, truncated or mismatched file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Checkpoint tensors do not match the parameter set the config declares.
class CensusError : public FormatError {
 public:
  using FormatError::FormatError;
};

// The search crop no longer overlaps the frame.
class TrackingLost : public Error {
 public:
  using Error::Error;
};

// Training loss blew up beyond the configured bound.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace romtrack

#endif  // ROMTRACK_ERRORS_H_
