#pragma once

// Thread-safe memo of symmetric kernel values keyed by unordered point
// pairs, with a hard entry cap.

#include <cstdint>
#include <mutex>
#include <optional>
#include <unordered_map>

#include "kt/point_space.hpp"

namespace kt {

class PairMemo {
 public:
  explicit PairMemo(std::size_t capacity) : capacity_(capacity) {}

  std::optional<double> find(Point s, Point t) const {
    std::lock_guard lock(mutex_);
    if (auto it = memo_.find(key(s, t)); it != memo_.end()) return it->second;
    return std::nullopt;
  }

  void store(Point s, Point t, double v) {
    std::lock_guard lock(mutex_);
    if (memo_.size() < capacity_) memo_.emplace(key(s, t), v);
  }

 private:
  struct Key {
    std::uint64_t lo, hi;
    friend bool operator==(const Key&, const Key&) = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept {
      PointHash h;
      return h(Point{k.lo}) ^ (h(Point{k.hi}) * 0x9e3779b97f4a7c15ULL);
    }
  };
  static Key key(Point s, Point t) { return s.id <= t.id ? Key{s.id, t.id} : Key{t.id, s.id}; }

  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::unordered_map<Key, double, KeyHash> memo_;
};

}  // namespace kt
