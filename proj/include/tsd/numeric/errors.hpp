#pragma once

#include <stdexcept>
#include <string>

namespace tsd {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shapes or dimensions do not satisfy an operation's requirements.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A caller violated a documented precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

/// A NaN or +Inf appeared, or a computation became ill-defined.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Softmax over a slice whose entries are all -inf.
class DegenerateSliceError : public NumericError {
public:
    using NumericError::NumericError;
};

/// Teacher mask with empty part rows while the empty-part fallback is off.
class DegenerateMaskError : public ContractError {
public:
    using ContractError::ContractError;
};

/// Every query of an evaluation was skipped for lack of a correct match.
class EmptyEvaluationError : public ContractError {
public:
    using ContractError::ContractError;
};

/// Input data (manifests, splits, labels) failed validation.
class ValidationError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace tsd
