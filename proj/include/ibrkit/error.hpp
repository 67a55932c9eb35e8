#pragma once

#include <stdexcept>
#include <string>

namespace ibrkit {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Block or routing matrices with inconsistent shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// I - D*L1 is singular: the interconnection has an ill-posed algebraic loop.
class AlgebraicLoopError : public Error {
 public:
  AlgebraicLoopError(const std::string& what, double sigma_min)
      : Error(what), sigma_min_(sigma_min) {}
  double sigma_min() const noexcept { return sigma_min_; }

 private:
  double sigma_min_;
};

/// (jw*I - A) is numerically singular at the requested frequency.
class SingularResolventError : public Error {
 public:
  SingularResolventError(const std::string& what, double omega)
      : Error(what), omega_(omega) {}
  double omega() const noexcept { return omega_; }

 private:
  double omega_;
};

class FeasibilityError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class CompletenessError : public Error {
 public:
  using Error::Error;
};

class ExtrapolationError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

class StoreError : public Error {
 public:
  using Error::Error;
};

}  // namespace ibrkit
