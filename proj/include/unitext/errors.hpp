#pragma once

#include <stdexcept>
#include <string>

namespace unitext {

// Error taxonomy shared by all modules. Everything derives from Error so
// callers can catch the whole family at the CLI boundary.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
  using Error::Error;
};
struct ParameterError : Error {
  using Error::Error;
};
struct UsageError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct VocabError : Error {
  using Error::Error;
};
struct InputError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

}  // namespace unitext
