#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cmro {

/// Failure categories surfaced by the library. Every reader reports malformed
/// input through one of these rather than crashing.
enum class Errc {
  invalid_argument,
  shape_mismatch,
  io,
  bad_magic,
  unsupported_datatype,
  unsupported_encoding,
  truncated,
  missing_tag,
  version_mismatch,
  architecture_mismatch,
  non_finite,
};

std::string_view to_string(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace cmro
