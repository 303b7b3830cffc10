#include "cmro/error.hpp"

namespace cmro {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_argument: return "invalid argument";
    case Errc::shape_mismatch: return "shape mismatch";
    case Errc::io: return "i/o error";
    case Errc::bad_magic: return "bad magic";
    case Errc::unsupported_datatype: return "unsupported datatype";
    case Errc::unsupported_encoding: return "unsupported encoding";
    case Errc::truncated: return "truncated";
    case Errc::missing_tag: return "missing tag";
    case Errc::version_mismatch: return "version mismatch";
    case Errc::architecture_mismatch: return "architecture mismatch";
    case Errc::non_finite: return "non-finite value";
  }
  return "unknown";
}

}  // namespace cmro
