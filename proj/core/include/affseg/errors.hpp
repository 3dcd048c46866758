#pragma once

#include <stdexcept>
#include <string>

namespace affseg {

/// Invalid configuration (bad lambda pair, indivisible size, unknown variant...).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Dataset problems: missing files, malformed layout, bad labels.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Training produced a non-finite loss.
struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace affseg
