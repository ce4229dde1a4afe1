#pragma once

// CSV helpers. Doubles are written in shortest round-trip form, so files
// are bit-faithful.

#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace kt {

std::string format_double(double v);

// Quotes a field when it contains a comma, quote or newline.
std::string csv_field(std::string_view text);

void write_csv_row(std::ostream& out, const std::vector<std::string>& fields);

}  // namespace kt
