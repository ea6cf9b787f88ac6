#pragma once

#include <stdexcept>
#include <string>

namespace conceptlm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input violates an operation's documented precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

class GraphError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t column)
      : Error(what), line_(line), column_(column) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

// Network-level failure; retried by the gateway.
class TransportError : public Error {
 public:
  using Error::Error;
};

// Backend answered but the payload could not be understood; not retried.
class MalformedPayloadError : public Error {
 public:
  using Error::Error;
};

// Backend refused the request (4xx other than rate limits); not retried.
class BackendError : public Error {
 public:
  using Error::Error;
};

class TokenLimitError : public Error {
 public:
  using Error::Error;
};

class CassetteMissError : public Error {
 public:
  CassetteMissError(const std::string& digest)
      : Error("cassette miss for request digest " + digest), digest_(digest) {}

  const std::string& digest() const noexcept { return digest_; }

 private:
  std::string digest_;
};

class CassetteCorruptError : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class AnnotationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace conceptlm
