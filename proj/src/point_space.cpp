#include "kt/point_space.hpp"

#include <algorithm>
#include <charconv>
#include <deque>
#include <unordered_set>

#include "kt/errors.hpp"

namespace kt {

namespace {

constexpr std::string_view kEmptyWordLabel = "∅";

int parse_int(std::string_view text, std::string_view what) {
  int value = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw InputError("cannot parse " + std::string(what) + " '" + std::string(text) + "'");
  }
  return value;
}

}  // namespace

Word Word::extended(int symbol) const {
  Word out = *this;
  out.symbols_.push_back(symbol);
  return out;
}

Word Word::concat(const Word& tail) const {
  Word out = *this;
  out.symbols_.insert(out.symbols_.end(), tail.symbols_.begin(), tail.symbols_.end());
  return out;
}

Word Word::reversed() const {
  Word out = *this;
  std::reverse(out.symbols_.begin(), out.symbols_.end());
  return out;
}

std::string Word::to_string(int arity) const {
  if (symbols_.empty()) return std::string(kEmptyWordLabel);
  std::string out;
  for (std::size_t k = 0; k < symbols_.size(); ++k) {
    if (arity > 9 && k > 0) out += '.';
    out += std::to_string(symbols_[k]);
  }
  return out;
}

std::uint64_t checked_word_count(int arity, std::size_t length, const Limits& limits) {
  std::uint64_t count = 1;
  for (std::size_t k = 0; k < length; ++k) {
    if (count > limits.max_words / static_cast<std::uint64_t>(arity)) {
      throw ResourceError("word enumeration m^n = " + std::to_string(arity) + "^" +
                          std::to_string(length) + " exceeds cap of " +
                          std::to_string(limits.max_words) + " words");
    }
    count *= static_cast<std::uint64_t>(arity);
  }
  if (count > limits.max_words) {
    throw ResourceError("word enumeration exceeds cap of " + std::to_string(limits.max_words));
  }
  return count;
}

BranchSystem::BranchSystem(int arity) : arity_(arity) {
  if (arity < 1) throw InputError("branch system needs m >= 1, got " + std::to_string(arity));
}

Point BranchSystem::apply(int symbol, Point s) const {
  if (symbol < 1 || symbol > arity_) {
    throw InputError("symbol " + std::to_string(symbol) + " outside 1.." + std::to_string(arity_));
  }
  return map(symbol, s);
}

// --- word tree --------------------------------------------------------------

WordTreeSystem::WordTreeSystem(int arity) : BranchSystem(arity) {
  unsigned bits = 1;
  while ((1u << bits) < static_cast<unsigned>(arity)) ++bits;
  if (bits > kPayloadBits) throw InputError("word tree arity too large");
  bits_per_symbol_ = bits;
  max_length_ = kPayloadBits / bits;
}

Point WordTreeSystem::make(const Word& w) const {
  if (w.size() > max_length_) {
    throw ResourceError("word of length " + std::to_string(w.size()) +
                        " exceeds packed capacity " + std::to_string(max_length_));
  }
  std::uint64_t payload = 0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    if (w[k] < 1 || w[k] > arity()) {
      throw InputError("symbol " + std::to_string(w[k]) + " outside 1.." + std::to_string(arity()));
    }
    payload |= static_cast<std::uint64_t>(w[k] - 1) << (k * bits_per_symbol_);
  }
  return Point{(static_cast<std::uint64_t>(w.size()) << kPayloadBits) | payload};
}

Word WordTreeSystem::word(Point s) const {
  const std::size_t n = length(s);
  const std::uint64_t mask = (std::uint64_t{1} << bits_per_symbol_) - 1;
  std::vector<int> symbols(n);
  for (std::size_t k = 0; k < n; ++k) {
    symbols[k] = static_cast<int>((s.id >> (k * bits_per_symbol_)) & mask) + 1;
  }
  return Word(std::move(symbols));
}

Point WordTreeSystem::map(int symbol, Point s) const {
  const std::size_t n = length(s);
  if (n >= max_length_) {
    throw ResourceError("prefixing overflows packed word capacity " + std::to_string(max_length_));
  }
  const std::uint64_t payload = s.id & ((std::uint64_t{1} << kPayloadBits) - 1);
  const std::uint64_t shifted = (payload << bits_per_symbol_) | static_cast<std::uint64_t>(symbol - 1);
  return Point{(static_cast<std::uint64_t>(n + 1) << kPayloadBits) | shifted};
}

std::string WordTreeSystem::label(Point s) const { return word(s).to_string(arity()); }

Point WordTreeSystem::parse(std::string_view text) const {
  if (text.empty() || text == kEmptyWordLabel) return root();
  std::vector<int> symbols;
  if (arity() > 9) {
    std::size_t start = 0;
    while (start <= text.size()) {
      const auto dot = text.find('.', start);
      const auto piece = text.substr(start, dot == std::string_view::npos ? text.npos : dot - start);
      symbols.push_back(parse_int(piece, "word symbol"));
      if (dot == std::string_view::npos) break;
      start = dot + 1;
    }
  } else {
    for (char ch : text) {
      if (ch < '1' || ch > '9') {
        throw InputError("invalid word label '" + std::string(text) + "'");
      }
      symbols.push_back(ch - '0');
    }
  }
  return make(Word(std::move(symbols)));
}

// --- finite tables ----------------------------------------------------------

TableSystem::TableSystem(std::vector<std::vector<int>> tables)
    : BranchSystem(static_cast<int>(tables.size())), tables_(std::move(tables)) {
  states_ = static_cast<int>(tables_.front().size());
  if (states_ < 1) throw InputError("finite-state system needs at least one state");
  for (std::size_t i = 0; i < tables_.size(); ++i) {
    if (static_cast<int>(tables_[i].size()) != states_) {
      throw InputError("map table " + std::to_string(i + 1) + " has " +
                       std::to_string(tables_[i].size()) + " entries, expected " +
                       std::to_string(states_));
    }
    for (std::size_t a = 0; a < tables_[i].size(); ++a) {
      const int target = tables_[i][a];
      if (target < 0 || target >= states_) {
        throw InputError("map table " + std::to_string(i + 1) + " sends state " +
                         std::to_string(a) + " to " + std::to_string(target) +
                         ", outside 0.." + std::to_string(states_ - 1));
      }
    }
  }
}

std::shared_ptr<TableSystem> TableSystem::identity(int states, int arity) {
  std::vector<int> id(static_cast<std::size_t>(states));
  for (int a = 0; a < states; ++a) id[static_cast<std::size_t>(a)] = a;
  return std::make_shared<TableSystem>(std::vector<std::vector<int>>(static_cast<std::size_t>(arity), id));
}

Point TableSystem::map(int symbol, Point s) const {
  return state(tables_[static_cast<std::size_t>(symbol - 1)][static_cast<std::size_t>(s.id)]);
}

std::string TableSystem::label(Point s) const { return std::to_string(s.id); }

Point TableSystem::parse(std::string_view text) const {
  const int index = parse_int(text, "state label");
  if (index < 0 || index >= states_) {
    throw InputError("state '" + std::string(text) + "' outside 0.." + std::to_string(states_ - 1));
  }
  return state(index);
}

// --- words ------------------------------------------------------------------

Point compose_forward(const BranchSystem& system, const Word& w, Point s) {
  for (std::size_t k = w.size(); k-- > 0;) s = system.apply(w[k], s);
  return s;
}

Point compose_reversed(const BranchSystem& system, const Word& w, Point s) {
  for (std::size_t k = 0; k < w.size(); ++k) s = system.apply(w[k], s);
  return s;
}

void for_each_word(int arity, std::size_t length, const std::function<void(const Word&)>& fn,
                   const Limits& limits) {
  const std::uint64_t count = checked_word_count(arity, length, limits);
  std::vector<int> digits(length, 1);
  for (std::uint64_t k = 0; k < count; ++k) {
    fn(Word(digits));
    for (std::size_t pos = length; pos-- > 0;) {
      if (++digits[pos] <= arity) break;
      digits[pos] = 1;
    }
  }
}

std::vector<Word> enumerate_words(int arity, std::size_t length, const Limits& limits) {
  std::vector<Word> out;
  out.reserve(checked_word_count(arity, length, limits));
  for_each_word(arity, length, [&](const Word& w) { out.push_back(w); }, limits);
  return out;
}

std::vector<Point> orbit_closure(const BranchSystem& system, const std::vector<Point>& base,
                                 std::size_t depth, const Limits& limits) {
  std::vector<Point> out;
  std::unordered_set<Point, PointHash> seen;
  for (Point p : base) {
    if (seen.insert(p).second) out.push_back(p);
  }
  std::size_t frontier_begin = 0;
  for (std::size_t level = 0; level < depth; ++level) {
    const std::size_t frontier_end = out.size();
    if (frontier_begin == frontier_end) break;
    for (std::size_t k = frontier_begin; k < frontier_end; ++k) {
      for (int i = 1; i <= system.arity(); ++i) {
        const Point next = system.apply(i, out[k]);
        if (seen.insert(next).second) {
          out.push_back(next);
          if (out.size() > limits.max_words) {
            throw ResourceError("orbit closure exceeds cap of " + std::to_string(limits.max_words) +
                                " points at depth " + std::to_string(level + 1));
          }
        }
      }
    }
    frontier_begin = frontier_end;
  }
  return out;
}

std::vector<std::string> labels(const BranchSystem& system, const std::vector<Point>& points) {
  std::vector<std::string> out;
  out.reserve(points.size());
  for (Point p : points) out.push_back(system.label(p));
  return out;
}

}  // namespace kt
