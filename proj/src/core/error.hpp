#ifndef IMAC_CORE_ERROR_HPP
#define IMAC_CORE_ERROR_HPP

#include <stdexcept>
#include <string>

namespace imac {

// Error categories map 1:1 onto CLI exit codes and C API statuses:
// config/domain problems -> 1, runtime/numerical failures -> 2.
enum class ErrorKind { config = 1, runtime = 2 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(ErrorKind::config, msg) {}
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& msg) : Error(ErrorKind::config, msg) {}
};

class RuntimeError : public Error {
 public:
  explicit RuntimeError(const std::string& msg) : Error(ErrorKind::runtime, msg) {}
};

}  // namespace imac

#endif
