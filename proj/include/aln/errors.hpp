// SPDX-License-Identifier: Apache-2.0
/**
 * @file   errors.hpp
 * @brief  Exception types shared by every aln module.
 *
 * The CLI maps these onto its exit-status contract: NumericFault exits 3,
 * everything else derived from Error exits 1.
 */
#pragma once

#include <stdexcept>
#include <string>

namespace aln {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

/// Class index outside [0, K).
class LabelError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf showed up in a loss or a gradient.
class NumericFault : public Error {
 public:
  using Error::Error;
};

/// Acoustic and linguistic streams have different frame counts.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Malformed text record; the message carries the 1-based line number.
class ParseError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Operation requested on a model variant that lacks the needed layers.
class UnsupportedVariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace aln
