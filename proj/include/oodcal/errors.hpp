#pragma once

#include <stdexcept>
#include <string>

namespace oodcal {

// Base of every library error. The CLI maps subclasses onto exit codes:
// ParameterError -> 2 (usage/config), everything else -> 3 (data).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class DegenerateVectorError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

class DuplicateIdError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class InvalidMatrixError : public Error {
 public:
  using Error::Error;
};

class EmptyGenerationError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

// Lookup of an id or text string that has no embedding. `key()` carries the
// offending string verbatim so callers can report it.
class MissingEmbeddingError : public Error {
 public:
  explicit MissingEmbeddingError(std::string key)
      : Error("missing embedding for \"" + key + "\""), key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

// Malformed input. `location` is a line number for text formats and a byte
// offset for binary ones.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t location)
      : Error(what + " (at " + std::to_string(location) + ")"), location_(location) {}

  std::size_t location() const noexcept { return location_; }

 private:
  std::size_t location_;
};

}  // namespace oodcal
