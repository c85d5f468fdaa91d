#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace imloc {

// Input violates a documented invariant (bad dimensions, duplicate ids, ...).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A precondition of a pure function was violated by the caller.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Unsupported or inconsistent configuration (unknown codec, tau <= 0, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File system failure. `subject` names the entry / pair / file concerned.
class IoError : public std::runtime_error {
 public:
  IoError(std::string subject, const std::string& what)
      : std::runtime_error(what), subject_(std::move(subject)) {}
  const std::string& subject() const { return subject_; }

 private:
  std::string subject_;
};

// Malformed binary input. The offset is the byte position where parsing
// stopped.
class ParseError : public std::runtime_error {
 public:
  enum class Kind { kBadMagic, kBadVersion, kTruncated, kInvalidValue, kTrailingBytes };

  ParseError(Kind kind, std::size_t offset, const std::string& what)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        kind_(kind),
        offset_(offset) {}

  Kind kind() const { return kind_; }
  std::size_t offset() const { return offset_; }

 private:
  Kind kind_;
  std::size_t offset_;
};

}  // namespace imloc
