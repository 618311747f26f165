#pragma once

#include <stdexcept>
#include <string>

namespace gpatch {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration values (k out of range, unreachable patch size, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A caller broke an operation's precondition (shape mismatch, bad placement).
class ContractError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Weight digests that do not match the pinned manifest.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

}  // namespace gpatch
