#pragma once

#include <cmath>

#include "cloak/image.hpp"

namespace cloak::testing {

// Straightforward references: direct sums, no shared code with the library.
inline double naive_psnr(const Image& a, const Image& b) {
  double se = 0.0;
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x)
      for (int c = 0; c < 3; ++c) se += (a.at(y, x, c) - b.at(y, x, c)) * (a.at(y, x, c) - b.at(y, x, c));
  const double mse = se / (a.height() * a.width() * 3.0);
  return 10.0 * std::log10(1.0 / mse);
}

inline double naive_ssim(const Image& a, const Image& b, int win = 8) {
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0.0;
  int count = 0;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y + win <= a.height(); ++y) {
      for (int x = 0; x + win <= a.width(); ++x) {
        double ma = 0, mb = 0;
        for (int v = 0; v < win; ++v)
          for (int u = 0; u < win; ++u) {
            ma += a.at(y + v, x + u, c);
            mb += b.at(y + v, x + u, c);
          }
        ma /= win * win;
        mb /= win * win;
        double va = 0, vb = 0, cov = 0;
        for (int v = 0; v < win; ++v)
          for (int u = 0; u < win; ++u) {
            const double da = a.at(y + v, x + u, c) - ma, db = b.at(y + v, x + u, c) - mb;
            va += da * da;
            vb += db * db;
            cov += da * db;
          }
        va /= win * win;
        vb /= win * win;
        cov /= win * win;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
    }
  }
  return total / count;
}

}  // namespace cloak::testing
