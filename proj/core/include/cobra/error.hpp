// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace cobra {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A value lies outside the domain of the requested encoding scheme.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Operand shapes disagree with each other or with the model configuration.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A required operand (DC input, SPS thresholds, accumulator) was not supplied.
class MissingOperandError : public Error {
 public:
  using Error::Error;
};

/// Malformed file or text input.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace cobra
