#pragma once

#include <stdexcept>
#include <string>

namespace bayescal {

/// Base of every error thrown by the library. The CLI maps these to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not fit the operation.
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation precondition (e.g. grad of a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value appeared where the computation requires finite reals.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// The experiment protocol was violated (missing validation set, empty environment, ...).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

/// Not enough samples in some (class, domain) cell.
class CapacityError : public Error {
 public:
  using Error::Error;
};

class VocabularyError : public Error {
 public:
  using Error::Error;
};

/// The input is degenerate for the statistic being computed.
class DegeneracyError : public Error {
 public:
  using Error::Error;
};

}  // namespace bayescal
