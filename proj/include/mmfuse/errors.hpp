#pragma once

#include <stdexcept>
#include <string>

namespace mmfuse {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad user-supplied configuration (CLI exit code 2).
struct ConfigError : Error {
  using Error::Error;
};

// Malformed dataset records, unknown labels, duplicate ids.
struct SchemaError : Error {
  using Error::Error;
};

// Filesystem-level trouble: unreadable/unwritable paths (CLI exit code 4).
struct IoError : Error {
  using Error::Error;
};

// A blob or manifest that exists but cannot be decoded.
struct ParseError : IoError {
  using IoError::IoError;
};

// A manifest entry pointing at a file that is not there.
struct MissingBlobError : IoError {
  using IoError::IoError;
};

struct ShapeError : Error {
  using Error::Error;
};

// Token id outside the lexicon, or CTC target symbol outside the charset.
struct VocabError : Error {
  using Error::Error;
};

// Non-finite values fed into a numeric kernel.
struct NumericError : Error {
  using Error::Error;
};

// CTC target cannot be emitted in the available number of frames.
struct InfeasibleError : Error {
  using Error::Error;
};

// NaN/Inf loss during training (CLI exit code 3).
struct DivergenceError : Error {
  using Error::Error;
};

struct AugmentError : Error {
  using Error::Error;
};

struct EvalError : Error {
  using Error::Error;
};

// Brute-force oracle asked to enumerate more states than its guard allows.
struct OracleSizeError : Error {
  using Error::Error;
};

}  // namespace mmfuse
