// Copyright (c) 2026, the moce authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace moce {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A precondition of an operation was violated by the caller.
class ContractError : public Error {
public:
    using Error::Error;
};

/// An object was used in a state that does not permit the call.
class StateError : public Error {
public:
    using Error::Error;
};

/// A non-finite value appeared where a finite one is required.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Input file or record does not follow its documented format.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Model, layer or run configuration is invalid or inconsistent.
class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace moce
