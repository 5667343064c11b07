#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fluxcast {

// Error taxonomy. The CLI maps these to process exit codes:
//   ConfigError -> 2, DataError (and subclasses) -> 3, InstabilityError -> 4.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid or inconsistent user-facing configuration (bad field, bad flag, bad geometry request).
struct ConfigError : Error {
  using Error::Error;
};

// Missing, malformed, or inconsistent data (files, shapes, catalogs, regions).
struct DataError : Error {
  using Error::Error;
};

struct ShapeError : DataError {
  using DataError::DataError;
};

struct RegionError : DataError {
  using DataError::DataError;
};

struct IngestError : DataError {
  using DataError::DataError;
};

// Numerical blow-up (non-finite state, diverged optimization).
struct InstabilityError : Error {
  using Error::Error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

inline void require_config(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

inline void require_data(bool cond, const std::string& msg) {
  if (!cond) throw DataError(msg);
}

}  // namespace fluxcast
