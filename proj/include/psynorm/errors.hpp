#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace psynorm {

/// Malformed or invariant-violating input data. Carries every row-level
/// diagnostic collected before the load gave up.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
  DataError(const std::string& what, std::vector<std::string> diagnostics)
      : std::runtime_error(join(what, diagnostics)), diagnostics_(std::move(diagnostics)) {}

  const std::vector<std::string>& diagnostics() const noexcept { return diagnostics_; }

 private:
  static std::string join(const std::string& head, const std::vector<std::string>& lines) {
    std::string out = head;
    for (const auto& l : lines) {
      out += "\n  ";
      out += l;
    }
    return out;
  }
  std::vector<std::string> diagnostics_;
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Failure talking to a model endpoint (auth, non-transient HTTP error,
/// exhausted retries, failed fine-tuning job).
class BackendError : public std::runtime_error {
 public:
  explicit BackendError(const std::string& what, int http_status = 0)
      : std::runtime_error(what), http_status_(http_status) {}
  int http_status() const noexcept { return http_status_; }

 private:
  int http_status_;
};

/// A metric that has no defined value for the given data, e.g. Pearson r of a
/// constant series.
class UndefinedMetric : public std::domain_error {
 public:
  explicit UndefinedMetric(const std::string& what) : std::domain_error(what) {}
};

}  // namespace psynorm
