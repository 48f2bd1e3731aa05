#pragma once

#include <stdexcept>
#include <string>

namespace ampattn {

/// Bad configuration or unusable input data, as opposed to a runtime failure.
/// The CLI maps this to exit code 2, everything else to 1.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ampattn
