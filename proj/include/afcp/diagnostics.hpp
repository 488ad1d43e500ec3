#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace afcp {

/// Bad caller input: dimension mismatches, out-of-range parameters,
/// malformed files.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Warnings go through a process-wide sink (stderr by default) so that
/// tests and the CLI can intercept them.
using WarningSink = std::function<void(std::string_view)>;

void warn(std::string_view message);

/// Installs a sink and returns the previous one.
WarningSink set_warning_sink(WarningSink sink);

}  // namespace afcp
