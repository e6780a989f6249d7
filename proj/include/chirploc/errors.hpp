// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace chirploc {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A configuration value lies outside its documented bound.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A function argument lies outside the function's mathematical domain.
class DomainError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

/// NaN or Inf produced by a computation.
class NumericError : public Error {
public:
    using Error::Error;
};

class NormalizationError : public Error {
public:
    using Error::Error;
};

class MetricError : public Error {
public:
    using Error::Error;
};

/// Filesystem or codec failure (PNG, CSV, checkpoint).
class IoError : public Error {
public:
    using Error::Error;
};

/// Misuse of an API, e.g. backward on a non-scalar.
class UsageError : public Error {
public:
    using Error::Error;
};

}  // namespace chirploc
