#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace fpbench {

enum class ErrorKind {
  Parse,
  Integrity,
  InvalidInput,
  InvalidGeometry,
  CorruptRle,
  Shape,
  NotFound,
  LengthMismatch,
  Upstream,
  Protocol,
  IncompleteRun,
  NoReferences,
  InsufficientNegatives,
};

/// Base for all toolkit errors. `kind()` drives the CLI exit-code mapping:
/// usage -> 1, data/integrity -> 2, upstream/protocol -> 3.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message)
      : std::runtime_error(std::move(message)), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

struct ParseError : Error {
  explicit ParseError(std::string m) : Error(ErrorKind::Parse, std::move(m)) {}
  ParseError(std::size_t line, const std::string& m)
      : Error(ErrorKind::Parse, "line " + std::to_string(line) + ": " + m),
        line_no(line) {}
  std::size_t line_no = 0;
};

struct IntegrityError : Error {
  explicit IntegrityError(std::string m)
      : Error(ErrorKind::Integrity, std::move(m)) {}
};

struct InvalidInput : Error {
  explicit InvalidInput(std::string m)
      : Error(ErrorKind::InvalidInput, std::move(m)) {}
};

struct InvalidGeometry : Error {
  explicit InvalidGeometry(std::string m)
      : Error(ErrorKind::InvalidGeometry, std::move(m)) {}
};

struct CorruptRle : Error {
  explicit CorruptRle(std::string m)
      : Error(ErrorKind::CorruptRle, std::move(m)) {}
};

struct ShapeError : Error {
  explicit ShapeError(std::string m) : Error(ErrorKind::Shape, std::move(m)) {}
};

struct NotFound : Error {
  explicit NotFound(std::string m) : Error(ErrorKind::NotFound, std::move(m)) {}
};

struct LengthMismatch : Error {
  LengthMismatch(std::size_t found, std::size_t expected)
      : Error(ErrorKind::LengthMismatch,
              "expected " + std::to_string(expected) + " items, found " +
                  std::to_string(found)),
        n_found(found),
        n_expected(expected) {}
  std::size_t n_found;
  std::size_t n_expected;
};

struct UpstreamError : Error {
  UpstreamError(int status, int attempts, std::string m)
      : Error(ErrorKind::Upstream, std::move(m)),
        status(status),
        attempts(attempts) {}
  explicit UpstreamError(std::string m)
      : Error(ErrorKind::Upstream, std::move(m)) {}
  int status = 0;
  int attempts = 0;
};

struct ProtocolError : Error {
  explicit ProtocolError(std::string m)
      : Error(ErrorKind::Protocol, std::move(m)) {}
};

struct IncompleteRun : Error {
  explicit IncompleteRun(std::vector<std::string> missing)
      : Error(ErrorKind::IncompleteRun, describe(missing)),
        missing_sent_ids(std::move(missing)) {}
  std::vector<std::string> missing_sent_ids;

 private:
  static std::string describe(const std::vector<std::string>& ids) {
    std::string m = "missing predictions for " + std::to_string(ids.size()) +
                    " record(s):";
    std::size_t shown = 0;
    for (const auto& id : ids) {
      if (shown++ == 8) {
        m += " ...";
        break;
      }
      m += ' ';
      m += id;
    }
    return m;
  }
};

struct NoReferences : Error {
  explicit NoReferences(std::string m)
      : Error(ErrorKind::NoReferences, std::move(m)) {}
};

struct InsufficientNegatives : Error {
  InsufficientNegatives(std::int64_t requested, std::int64_t available)
      : Error(ErrorKind::InsufficientNegatives,
              "requested " + std::to_string(requested) +
                  " negatives, only " + std::to_string(available) +
                  " available") {}
};

}  // namespace fpbench
