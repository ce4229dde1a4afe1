#include "kt/certificate.hpp"

#include <algorithm>
#include <cmath>

#include "kt/errors.hpp"

namespace kt {

bool TailCertificate::covers(Point s) const {
  return std::find(domain.begin(), domain.end(), s) != domain.end();
}

double TailCertificate::bound(std::size_t level, Point s, Point t) const {
  const auto& c = candidate;
  if (c.form != LyapunovForm::defect || !(c.beta > 0.0 && c.beta < 1.0)) {
    throw ContractError("tail bound needs a defect-form certificate with 0 < beta < 1");
  }
  return c.C / (1.0 - c.beta) * std::pow(c.beta, static_cast<double>(level)) *
         std::sqrt(c.r(s) * c.r(t));
}

}  // namespace kt
