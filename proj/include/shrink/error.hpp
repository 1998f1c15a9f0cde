// Copyright 2026 The Shrink Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <stdexcept>
#include <string>

namespace shrink {

/// Base of every error raised by the library. The CLI maps any of these to
/// exit status 2.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
  using Error::Error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

class FormatError : public Error {
public:
  using Error::Error;
};

class DataError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

class UsageError : public Error {
public:
  using Error::Error;
};

/// Raised when a forward op produces NaN or Inf.
class NumericError : public Error {
public:
  using Error::Error;
};

} // namespace shrink
