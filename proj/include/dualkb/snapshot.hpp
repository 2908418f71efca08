#pragma once

#include <memory>
#include <mutex>
#include <utility>

namespace dualkb {

/// Readers take an immutable shared snapshot; a single writer at a time
/// copies, modifies and publishes a new one. A failed update publishes
/// nothing.
template <typename T>
class Snapshot {
 public:
  Snapshot() : current_(std::make_shared<const T>()) {}
  explicit Snapshot(T value) : current_(std::make_shared<const T>(std::move(value))) {}

  std::shared_ptr<const T> load() const {
    std::lock_guard lock(read_mutex_);
    return current_;
  }

  void publish(T value) {
    auto next = std::make_shared<const T>(std::move(value));
    std::lock_guard lock(read_mutex_);
    current_ = std::move(next);
  }

  template <typename Fn>
  void update(Fn&& fn) {
    std::lock_guard writer(write_mutex_);
    T next = *load();
    std::forward<Fn>(fn)(next);
    publish(std::move(next));
  }

 private:
  mutable std::mutex read_mutex_;
  std::mutex write_mutex_;
  std::shared_ptr<const T> current_;
};

}  // namespace dualkb
