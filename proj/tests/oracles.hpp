#pragma once

// Test-only references computed straight from closed-form formulas on word
// labels. Nothing here calls into the tower or the model oracles.

#include <cmath>
#include <string>

namespace oracle {

struct Params {
  int m = 2;
  double r = 0.5, c = 0.5, eta = 1.0;
};

inline std::size_t len(const std::string& w) { return w == "∅" ? 0 : w.size(); }

inline double J(const Params& p, const std::string& u, const std::string& v) {
  const double j0 = u == v ? std::pow(p.m, -double(len(u))) : 0.0;
  const double j1 = std::pow(p.m, -0.5 * double(len(u) + len(v)));
  return j0 + p.eta * j1;
}

inline double E(const Params& p, const std::string& u, const std::string& v) {
  return u == v ? p.c * std::pow(p.r, double(len(u))) * std::pow(p.m, -double(len(u))) : 0.0;
}

// K_n = J - r^n E
inline double K_n(const Params& p, std::size_t n, const std::string& u, const std::string& v) {
  return J(p, u, v) - std::pow(p.r, double(n)) * E(p, u, v);
}

// D_n = r^n (1 - r) E
inline double D_n(const Params& p, std::size_t n, const std::string& u, const std::string& v) {
  return std::pow(p.r, double(n)) * (1.0 - p.r) * E(p, u, v);
}

}  // namespace oracle
