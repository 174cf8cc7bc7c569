#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

namespace dfr::log {

using Sink = std::function<void(const std::string&)>;

namespace detail {
inline std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}
inline Sink& sink() {
  static Sink s = [](const std::string& msg) { std::cerr << "[dfr] warning: " << msg << '\n'; };
  return s;
}
}  // namespace detail

// Replace the warning sink; returns the previous one so callers can restore it.
inline Sink set_sink(Sink s) {
  std::lock_guard lock(detail::sink_mutex());
  return std::exchange(detail::sink(), std::move(s));
}

inline void warn(const std::string& msg) {
  std::lock_guard lock(detail::sink_mutex());
  if (detail::sink()) detail::sink()(msg);
}

// Collects warnings for the lifetime of the object (tests, batch reports).
class ScopedCapture {
 public:
  ScopedCapture()
      : previous_(set_sink([this](const std::string& m) { messages_.push_back(m); })) {}
  ~ScopedCapture() { set_sink(std::move(previous_)); }
  ScopedCapture(const ScopedCapture&) = delete;
  ScopedCapture& operator=(const ScopedCapture&) = delete;

  const std::vector<std::string>& messages() const { return messages_; }
  bool contains(const std::string& needle) const {
    for (const auto& m : messages_)
      if (m.find(needle) != std::string::npos) return true;
    return false;
  }

 private:
  std::vector<std::string> messages_;
  Sink previous_;
};

}  // namespace dfr::log
