#pragma once

#include <functional>
#include <stdexcept>
#include <string>

namespace mcqa {

// Broad failure classes. The CLI maps these onto process exit codes.
enum class ErrorKind {
  invalid_input,   // malformed files, violated preconditions
  config,          // bad RunConfig / CLI flags
  capability,      // backend cannot provide what a method needs
  transport,       // network failure after retries
  backend,         // backend answered with an error payload
  replay_miss,     // replay mode and no matching record
  numeric,         // solver failure, undefined metric
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error invalid_input(const std::string& what) { return {ErrorKind::invalid_input, what}; }
inline Error config_error(const std::string& what) { return {ErrorKind::config, what}; }
inline Error capability_error(const std::string& what) { return {ErrorKind::capability, what}; }

// AUROC on single-class input. Reported as "undefined", never replaced by 0.5.
class UndefinedMetric : public Error {
 public:
  explicit UndefinedMetric(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

// Warnings go through one replaceable sink so tests can observe them.
using WarningSink = std::function<void(const std::string&)>;
void set_warning_sink(WarningSink sink);
void warn(const std::string& message);

}  // namespace mcqa
