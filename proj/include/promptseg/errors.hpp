#pragma once

#include <stdexcept>
#include <string>

namespace promptseg {

/// Invalid shapes, prompts or configuration values handed to a library call.
class InvalidArgument : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Shape disagreement between arrays that must share H x W.
class ShapeError : public InvalidArgument {
public:
  using InvalidArgument::InvalidArgument;
};

/// Configuration file or flag values that violate the schema.
class ConfigError : public InvalidArgument {
public:
  using InvalidArgument::InvalidArgument;
};

/// Missing, unreadable or malformed files and records.
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace promptseg
