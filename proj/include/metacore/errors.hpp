#pragma once

#include <stdexcept>
#include <string>

namespace metacore {

/// Bad shapes or non-finite entries.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Out-of-range configuration or operation parameter.
class ParameterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A closed loop that an operation needs to be stable is not.
class InstabilityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An iterative solver hit its iteration cap or failed its residual check.
class SolverError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Too many zeroth-order probes left the valid parameter region.
class ProbeInstabilityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The meta-parameter destabilized a pool task during training or adaptation.
class StabilityViolation : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Task-pool generation could not satisfy its verification after all re-draws.
class GenerationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace metacore
