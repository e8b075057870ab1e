// Copyright Contributors to the evgs Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace evgs {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// A caller violated an operation precondition.
class InvalidArgument : public Error {
  public:
    using Error::Error;
};

/// Tensor or map dimensions disagree.
class ShapeError : public InvalidArgument {
  public:
    using InvalidArgument::InvalidArgument;
};

/// A camera-space point is at or behind the near plane.
class NearPlaneError : public InvalidArgument {
  public:
    using InvalidArgument::InvalidArgument;
};

/// A file is missing, corrupt, or violates a data invariant.
class DataError : public Error {
  public:
    using Error::Error;
};

} // namespace evgs
