#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace toos {

// Base of every error raised by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A value violates a documented range (actuator limits, pressure, VF diameter...).
struct OutOfRange : Error {
  using Error::Error;
};

// Target position solves to a configuration outside the wrist limits.
struct Unreachable : Error {
  using Error::Error;
};

struct InvalidTarget : Error {
  using Error::Error;
};

struct OutOfCalibrationRange : Error {
  using Error::Error;
};

// The fixture has no kinematically reachable feasible point.
struct IkUnreachable : Error {
  using Error::Error;
};

// Input kind not accepted in the current session phase.
struct PhaseViolation : Error {
  using Error::Error;
};

struct IllegalTransition : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct ParseError : Error {
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

struct ProtocolError : Error {
  using Error::Error;
};

}  // namespace toos
