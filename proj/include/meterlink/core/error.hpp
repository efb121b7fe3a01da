//
// Copyright 2026 The meterlink Authors
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
//

#pragma once

#include <stdexcept>
#include <string>

namespace meterlink {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data (files, datasets, records).
class DataError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or argument combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or divergence during numerical work.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Tensor shapes that do not conform for an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A documented precondition of an operation was violated.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw PreconditionError(message);
}

}  // namespace meterlink
