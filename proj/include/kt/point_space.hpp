#pragma once

// Points, words over {1..m}, branch systems phi_1..phi_m and orbit closures.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace kt {

// Opaque point id. What the bits mean is up to the owning BranchSystem;
// equality and hashing are on the id alone.
struct Point {
  std::uint64_t id = 0;
  friend constexpr bool operator==(Point, Point) = default;
  friend constexpr auto operator<=>(Point, Point) = default;
};

struct PointHash {
  std::size_t operator()(Point p) const noexcept {
    // splitmix64 finalizer; packed word ids have low entropy in the high bits
    std::uint64_t z = p.id + 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return static_cast<std::size_t>(z ^ (z >> 31));
  }
};

// Finite word i_1 ... i_n with every symbol in 1..m.
class Word {
 public:
  Word() = default;
  Word(std::initializer_list<int> symbols) : symbols_(symbols) {}
  explicit Word(std::vector<int> symbols) : symbols_(std::move(symbols)) {}

  std::size_t size() const noexcept { return symbols_.size(); }
  bool empty() const noexcept { return symbols_.empty(); }
  int operator[](std::size_t k) const { return symbols_[k]; }
  const std::vector<int>& symbols() const noexcept { return symbols_; }

  // w followed by i, i.e. the cylinder child [w i].
  Word extended(int symbol) const;
  Word concat(const Word& tail) const;
  Word reversed() const;

  // "12" for m <= 9, "10.2" style otherwise, "∅" for the empty word.
  std::string to_string(int arity) const;

  friend bool operator==(const Word&, const Word&) = default;
  friend auto operator<=>(const Word&, const Word&) = default;

 private:
  std::vector<int> symbols_;
};

struct Limits {
  // Refuse any enumeration of more than this many words or points.
  std::uint64_t max_words = std::uint64_t{1} << 24;
};

// m^n, or throws ResourceError when it exceeds limits.max_words.
std::uint64_t checked_word_count(int arity, std::size_t length, const Limits& limits = {});

class BranchSystem {
 public:
  explicit BranchSystem(int arity);
  virtual ~BranchSystem() = default;
  BranchSystem(const BranchSystem&) = delete;
  BranchSystem& operator=(const BranchSystem&) = delete;

  int arity() const noexcept { return arity_; }

  // phi_i(s); throws InputError unless 1 <= i <= m.
  Point apply(int symbol, Point s) const;

  virtual std::string label(Point s) const = 0;
  // Inverse of label(); throws InputError for labels outside the universe.
  virtual Point parse(std::string_view label) const = 0;
  virtual std::string kind() const = 0;

 protected:
  // Symbol has already been range-checked.
  virtual Point map(int symbol, Point s) const = 0;

 private:
  int arity_;
};

using BranchSystemPtr = std::shared_ptr<const BranchSystem>;

// The m-ary word tree: points are finite words, phi_i prefixes i.
// Words are packed into the 64-bit id (length in the top 6 bits,
// ceil(log2 m) bits per symbol below), so no interning table is needed.
class WordTreeSystem final : public BranchSystem {
 public:
  explicit WordTreeSystem(int arity);

  std::string label(Point s) const override;
  Point parse(std::string_view label) const override;
  std::string kind() const override { return "word_tree"; }

  Point make(const Word& w) const;
  Word word(Point s) const;
  std::size_t length(Point s) const noexcept {
    return static_cast<std::size_t>(s.id >> kPayloadBits);
  }
  std::size_t max_length() const noexcept { return max_length_; }
  Point root() const noexcept { return Point{0}; }

 protected:
  Point map(int symbol, Point s) const override;

 private:
  static constexpr unsigned kPayloadBits = 58;
  unsigned bits_per_symbol_;
  std::size_t max_length_;
};

// Finite state space {0..S-1} with explicit map tables (0-based targets).
class TableSystem final : public BranchSystem {
 public:
  explicit TableSystem(std::vector<std::vector<int>> tables);
  static std::shared_ptr<TableSystem> identity(int states, int arity);

  std::string label(Point s) const override;
  Point parse(std::string_view label) const override;
  std::string kind() const override { return "finite_state"; }

  int states() const noexcept { return states_; }
  const std::vector<std::vector<int>>& tables() const noexcept { return tables_; }
  static Point state(int index) { return Point{static_cast<std::uint64_t>(index)}; }

 protected:
  Point map(int symbol, Point s) const override;

 private:
  std::vector<std::vector<int>> tables_;
  int states_;
};

// phi_w(s) = phi_{i_1}(phi_{i_2}(... phi_{i_n}(s))).
Point compose_forward(const BranchSystem& system, const Word& w, Point s);

// Reversed composition phi_{i_n}(... phi_{i_1}(s)).
Point compose_reversed(const BranchSystem& system, const Word& w, Point s);

// All m^n words of length n in lexicographic order.
std::vector<Word> enumerate_words(int arity, std::size_t length, const Limits& limits = {});

// Calls fn(word) for every word of length n in lexicographic order, reusing
// one buffer. Cheaper than enumerate_words for large n.
void for_each_word(int arity, std::size_t length, const std::function<void(const Word&)>& fn,
                   const Limits& limits = {});

// Points phi_w(s) (equivalently reversed compositions, which range over the
// same set) for s in base and |w| <= depth. Deduplicated, breadth-first
// insertion order starting with base.
std::vector<Point> orbit_closure(const BranchSystem& system, const std::vector<Point>& base,
                                 std::size_t depth, const Limits& limits = {});

std::vector<std::string> labels(const BranchSystem& system, const std::vector<Point>& points);

}  // namespace kt
