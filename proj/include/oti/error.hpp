#pragma once

#include <stdexcept>
#include <string>

namespace oti {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents do not compose.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A vector whose norm is too small to normalize, project onto, or compare.
class DegenerateVectorError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite input is required.
class NumericDomainError : public Error {
 public:
  using Error::Error;
};

// Training produced non-finite gradients or losses.
class NumericFailure : public Error {
 public:
  using Error::Error;
};

// Argument out of its documented range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Malformed corpus, model or config document.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace oti
