#pragma once

#include <functional>
#include <iostream>
#include <string>
#include <utility>

namespace xalign {

using WarningSink = std::function<void(const std::string&)>;

namespace detail {
inline WarningSink& warning_sink() {
  static WarningSink sink = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
  return sink;
}
}  // namespace detail

/// Replaces the warning sink, returning the previous one. Not thread-safe; set it at startup.
inline WarningSink set_warning_sink(WarningSink sink) {
  return std::exchange(detail::warning_sink(), std::move(sink));
}

inline void warn(const std::string& msg) { detail::warning_sink()(msg); }

}  // namespace xalign
