#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace pwhf {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Flat parameter vector θ. Layout is owned by MapDescriptor (see maps.hpp).
using ParamVector = Eigen::VectorXd;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Vector or matrix sizes that do not agree with a descriptor.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Arguments outside the domain of a functional (e.g. log of a non-positive scale).
class DomainError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Raised by the integrator when a run must stop (divergence, repeated solver failure).
class SolverAbort : public Error {
 public:
  using Error::Error;
};

inline void require_size(Eigen::Index got, Eigen::Index want, const char* what) {
  if (got != want) {
    throw DimensionError(std::string(what) + ": expected length " + std::to_string(want) +
                         ", got " + std::to_string(got));
  }
}

bool all_finite(const Eigen::Ref<const Vector>& v);

}  // namespace pwhf
