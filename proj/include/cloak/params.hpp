#pragma once

#include <string>
#include <vector>

namespace cloak {

// "k/255"-style fractions or plain decimals ("0.0314"). Throws InvalidInput.
double parse_fraction(const std::string& text);

// A comma-separated list of fractions/decimals, or an inclusive range
// "a/d..b/d" that steps the numerator by one ("1/255..10/255" is ten values).
std::vector<double> parse_value_list(const std::string& text);

}  // namespace cloak
