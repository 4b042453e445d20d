#ifndef NCM_ERROR_H_
#define NCM_ERROR_H_

#include <stdexcept>
#include <string>

namespace ncm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// An id or index is outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

// Malformed or unusable input data (corpora, pair files, vote files).
class DataError : public Error {
 public:
  using Error::Error;
};

// A configuration violates its invariants.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered during training or evaluation.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace ncm

#endif  // NCM_ERROR_H_
