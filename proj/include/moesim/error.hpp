#pragma once

#include <stdexcept>
#include <string>

namespace moesim {

/// Base exception. Every error carries the name of the module that raised
/// it so the CLI can print "moesim: [module] message".
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& what)
      : std::runtime_error(what), module_(std::move(module)) {}

  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

/// Malformed or inconsistent input data (files, vectors of the wrong shape).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Contradictory or incomplete configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A request the component deliberately refuses (e.g. exact search too large).
class Refused : public Error {
 public:
  using Error::Error;
};

}  // namespace moesim
