#include "afcp/diagnostics.hpp"

#include <iostream>
#include <mutex>
#include <utility>

namespace afcp {

namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

WarningSink& sink_slot() {
  static WarningSink sink = [](std::string_view msg) {
    std::cerr << "[afcp warning] " << msg << '\n';
  };
  return sink;
}

}  // namespace

void warn(std::string_view message) {
  std::lock_guard lock(sink_mutex());
  if (sink_slot()) sink_slot()(message);
}

WarningSink set_warning_sink(WarningSink sink) {
  std::lock_guard lock(sink_mutex());
  return std::exchange(sink_slot(), std::move(sink));
}

}  // namespace afcp
