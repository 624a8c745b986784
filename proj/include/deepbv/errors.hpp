#pragma once

#include <stdexcept>
#include <string>

namespace deepbv {

enum class FormatErrorKind { BadMagic, Truncated, UnknownDtype, UnsupportedVersion, Malformed, NonFinite, Io };

inline const char* to_string(FormatErrorKind k) {
  switch (k) {
    case FormatErrorKind::BadMagic: return "bad_magic";
    case FormatErrorKind::Truncated: return "truncated";
    case FormatErrorKind::UnknownDtype: return "unknown_dtype";
    case FormatErrorKind::UnsupportedVersion: return "unsupported_version";
    case FormatErrorKind::Malformed: return "malformed";
    case FormatErrorKind::NonFinite: return "non_finite";
    case FormatErrorKind::Io: return "io";
  }
  return "unknown";
}

/// Raised by the volume and checkpoint readers/writers; kind() tells callers
/// which of the distinct failure modes occurred.
class FormatError : public std::runtime_error {
 public:
  FormatError(FormatErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  FormatErrorKind kind() const { return kind_; }

 private:
  FormatErrorKind kind_;
};

}  // namespace deepbv
