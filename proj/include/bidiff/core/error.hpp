#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bidiff {

enum class Errc {
  invalid_argument,
  shape_mismatch,
  numerical_guard,
  io,
  parse,
  divergence,
};

inline std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::invalid_argument: return "invalid-argument";
    case Errc::shape_mismatch: return "shape-mismatch";
    case Errc::numerical_guard: return "numerical-guard";
    case Errc::io: return "io";
    case Errc::parse: return "parse";
    case Errc::divergence: return "divergence";
  }
  return "unknown";
}

/// All library failures are reported through this type. `code()` lets callers
/// (the CLI in particular) map failures to exit codes without string matching.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Re-throws `e` with `context` prepended, keeping the error code.
[[noreturn]] inline void rethrow_with_context(const Error& e, const std::string& context) {
  throw Error(e.code(), context + ": " + e.what());
}

inline void require(bool condition, Errc code, const std::string& what) {
  if (!condition) throw Error(code, what);
}

}  // namespace bidiff
