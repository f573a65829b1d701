#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace hdeval {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;

// Base of every error this library throws. Callers that only care about
// "something went wrong in hdeval" catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad arguments or data violating a documented precondition/invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Lookup by id/name/layer that does not resolve.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

// Shape disagreement between matrices, feature lists or aspect lists.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Malformed file or reply.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Missing or corrupt files on disk.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace hdeval
