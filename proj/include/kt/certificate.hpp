#pragma once

#include <functional>
#include <string>
#include <vector>

#include "kt/point_space.hpp"

namespace kt {

// Which pair of premises a Lyapunov function is checked against.
//   diagonal: u0 <= C r and P r <= r         (beta must be 1)
//   defect:   d0 <= C r and P r <= beta r    (0 < beta < 1)
enum class LyapunovForm { diagonal, defect };

struct LyapunovCandidate {
  std::function<double(Point)> r;
  double C = 0.0;
  double beta = 1.0;
  LyapunovForm form = LyapunovForm::defect;
  std::string description;
};

// A candidate whose premises were verified pointwise on `domain`.
struct TailCertificate {
  LyapunovCandidate candidate;
  std::vector<Point> domain;

  bool covers(Point s) const;
  // (C / (1 - beta)) beta^N sqrt(r(s) r(t)); defect form only.
  double bound(std::size_t level, Point s, Point t) const;
};

}  // namespace kt
