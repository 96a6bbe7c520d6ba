#pragma once

// Error taxonomy shared by every component. Callers catch lnn::error for
// anything raised by the library; the subclasses map to CLI exit codes.

#include <stdexcept>
#include <string>

namespace lnn {

struct error : std::runtime_error {
  explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/rank disagreement between operands.
struct dim_error : error {
  explicit dim_error(const std::string& msg) : error("dimension: " + msg) {}
};

// NaN/Inf produced, or a math-domain violation.
struct numeric_error : error {
  explicit numeric_error(const std::string& msg) : error("numeric: " + msg) {}
};

// API contract misuse (wrong curvature, non-scalar loss, pool too small...).
struct usage_error : error {
  explicit usage_error(const std::string& msg) : error("usage: " + msg) {}
};

// Degenerate input with no defined result (all-zero weights, apex at origin).
struct degenerate_error : error {
  explicit degenerate_error(const std::string& msg) : error("degenerate: " + msg) {}
};

struct config_error : error {
  explicit config_error(const std::string& msg) : error("config: " + msg) {}
};

// On-disk artifact does not match its manifest.
struct format_error : error {
  explicit format_error(const std::string& msg) : error("format: " + msg) {}
};

struct io_error : error {
  explicit io_error(const std::string& msg) : error("io: " + msg) {}
};

// Optimizer state out of sync with the parameters it was built for.
struct state_error : error {
  explicit state_error(const std::string& msg) : error("state: " + msg) {}
};

}  // namespace lnn
