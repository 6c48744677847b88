#include "cloak/params.hpp"

#include <charconv>
#include <cmath>

#include "cloak/errors.hpp"

namespace cloak {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

double parse_number(const std::string& text, const std::string& whole) {
  double v = 0.0;
  const char* first = text.data();
  const char* last = first + text.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (text.empty() || ec != std::errc() || ptr != last || !std::isfinite(v)) {
    throw InvalidInput("cannot parse '" + whole + "' as a number");
  }
  return v;
}

struct Fraction {
  double numerator = 0.0;
  double denominator = 1.0;
  bool has_denominator = false;
};

Fraction split_fraction(const std::string& raw) {
  const std::string text = trim(raw);
  Fraction f;
  const auto slash = text.find('/');
  if (slash == std::string::npos) {
    f.numerator = parse_number(text, raw);
    return f;
  }
  f.numerator = parse_number(trim(text.substr(0, slash)), raw);
  f.denominator = parse_number(trim(text.substr(slash + 1)), raw);
  f.has_denominator = true;
  if (f.denominator == 0.0) throw InvalidInput("zero denominator in '" + raw + "'");
  return f;
}

}  // namespace

double parse_fraction(const std::string& text) {
  const Fraction f = split_fraction(text);
  return f.numerator / f.denominator;
}

std::vector<double> parse_value_list(const std::string& text) {
  std::vector<double> values;
  const auto dots = text.find("..");
  if (dots != std::string::npos) {
    const Fraction lo = split_fraction(text.substr(0, dots));
    const Fraction hi = split_fraction(text.substr(dots + 2));
    if (lo.denominator != hi.denominator) throw InvalidInput("range ends need the same denominator: '" + text + "'");
    if (lo.numerator != std::floor(lo.numerator) || hi.numerator != std::floor(hi.numerator)) {
      throw InvalidInput("range ends need integer numerators: '" + text + "'");
    }
    if (hi.numerator < lo.numerator) throw InvalidInput("empty range '" + text + "'");
    for (double k = lo.numerator; k <= hi.numerator; k += 1.0) values.push_back(k / lo.denominator);
    return values;
  }
  std::size_t start = 0;
  while (true) {
    const auto comma = text.find(',', start);
    values.push_back(parse_fraction(text.substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return values;
}

}  // namespace cloak
