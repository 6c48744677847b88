#pragma once

// Per-plane / per-row work units shared by the serial and OpenMP kernels.
// The two drivers differ only in how they iterate over units.

#include <cstddef>
#include <span>
#include <vector>

#include "cloak/image.hpp"
#include "cloak/kernels.hpp"

namespace cloak::kernels::detail {

inline void conv_forward_plane(const ConvShape& s, int co, std::span<const double> in, std::span<const double> w,
                               std::span<const double> bias, std::span<double> out) {
  const int H = s.height, W = s.width;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  double* o = out.data() + co * plane;
  for (std::size_t i = 0; i < plane; ++i) o[i] = bias[co];
  for (int ci = 0; ci < s.in_channels; ++ci) {
    const double* src = in.data() + ci * plane;
    const double* k = w.data() + (static_cast<std::size_t>(co) * s.in_channels + ci) * 9;
    for (int ky = 0; ky < 3; ++ky) {
      const int dy = ky - 1;
      const int y0 = dy < 0 ? 1 : 0;
      const int y1 = dy > 0 ? H - 1 : H;
      for (int kx = 0; kx < 3; ++kx) {
        const int dx = kx - 1;
        const int x0 = dx < 0 ? 1 : 0;
        const int x1 = dx > 0 ? W - 1 : W;
        const double wv = k[ky * 3 + kx];
        for (int y = y0; y < y1; ++y) {
          double* orow = o + static_cast<std::size_t>(y) * W;
          const double* irow = src + static_cast<std::size_t>(y + dy) * W + dx;
          for (int x = x0; x < x1; ++x) orow[x] += wv * irow[x];
        }
      }
    }
  }
}

inline void conv_backward_input_plane(const ConvShape& s, int ci, std::span<const double> dout,
                                      std::span<const double> w, std::span<double> din) {
  const int H = s.height, W = s.width;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  double* d = din.data() + ci * plane;
  for (std::size_t i = 0; i < plane; ++i) d[i] = 0.0;
  for (int co = 0; co < s.out_channels; ++co) {
    const double* g = dout.data() + co * plane;
    const double* k = w.data() + (static_cast<std::size_t>(co) * s.in_channels + ci) * 9;
    // out[y][x] += w[ky][kx] * in[y+dy][x+dx]  =>  din[y'][x'] += w * dout[y'-dy][x'-dx]
    for (int ky = 0; ky < 3; ++ky) {
      const int dy = ky - 1;
      const int y0 = dy > 0 ? 1 : 0;
      const int y1 = dy < 0 ? H - 1 : H;
      for (int kx = 0; kx < 3; ++kx) {
        const int dx = kx - 1;
        const int x0 = dx > 0 ? 1 : 0;
        const int x1 = dx < 0 ? W - 1 : W;
        const double wv = k[ky * 3 + kx];
        for (int y = y0; y < y1; ++y) {
          double* drow = d + static_cast<std::size_t>(y) * W;
          const double* grow = g + static_cast<std::size_t>(y - dy) * W - dx;
          for (int x = x0; x < x1; ++x) drow[x] += wv * grow[x];
        }
      }
    }
  }
}

inline void conv_backward_params_plane(const ConvShape& s, int co, std::span<const double> in,
                                       std::span<const double> dout, std::span<double> dw, std::span<double> db) {
  const int H = s.height, W = s.width;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const double* g = dout.data() + co * plane;
  double bsum = 0.0;
  for (std::size_t i = 0; i < plane; ++i) bsum += g[i];
  db[co] += bsum;
  for (int ci = 0; ci < s.in_channels; ++ci) {
    const double* src = in.data() + ci * plane;
    double* k = dw.data() + (static_cast<std::size_t>(co) * s.in_channels + ci) * 9;
    for (int ky = 0; ky < 3; ++ky) {
      const int dy = ky - 1;
      const int y0 = dy < 0 ? 1 : 0;
      const int y1 = dy > 0 ? H - 1 : H;
      for (int kx = 0; kx < 3; ++kx) {
        const int dx = kx - 1;
        const int x0 = dx < 0 ? 1 : 0;
        const int x1 = dx > 0 ? W - 1 : W;
        double acc = 0.0;
        for (int y = y0; y < y1; ++y) {
          const double* grow = g + static_cast<std::size_t>(y) * W;
          const double* irow = src + static_cast<std::size_t>(y + dy) * W + dx;
          for (int x = x0; x < x1; ++x) acc += grow[x] * irow[x];
        }
        k[ky * 3 + kx] += acc;
      }
    }
  }
}

// Summed-area tables for one channel of an image pair; (H+1) x (W+1).
struct SsimTables {
  int stride = 0;
  std::vector<double> a, b, aa, bb, ab;

  SsimTables(const Image& x, const Image& y, int c) {
    const int H = x.height(), W = x.width();
    stride = W + 1;
    const std::size_t n = static_cast<std::size_t>(H + 1) * stride;
    a.assign(n, 0.0);
    b.assign(n, 0.0);
    aa.assign(n, 0.0);
    bb.assign(n, 0.0);
    ab.assign(n, 0.0);
    for (int r = 0; r < H; ++r) {
      for (int q = 0; q < W; ++q) {
        const double va = x.at(r, q, c), vb = y.at(r, q, c);
        const std::size_t i = static_cast<std::size_t>(r + 1) * stride + q + 1;
        const std::size_t up = i - stride, left = i - 1, diag = i - stride - 1;
        a[i] = va + a[up] + a[left] - a[diag];
        b[i] = vb + b[up] + b[left] - b[diag];
        aa[i] = va * va + aa[up] + aa[left] - aa[diag];
        bb[i] = vb * vb + bb[up] + bb[left] - bb[diag];
        ab[i] = va * vb + ab[up] + ab[left] - ab[diag];
      }
    }
  }

  static double rect(const std::vector<double>& t, int stride, int y, int x, int w) {
    const std::size_t y0 = static_cast<std::size_t>(y) * stride, y1 = static_cast<std::size_t>(y + w) * stride;
    return t[y1 + x + w] - t[y0 + x + w] - t[y1 + x] + t[y0 + x];
  }
};

// Sum of local SSIM values along one row of window origins.
inline double ssim_row_sum(const SsimTables& t, int y, int windows_x, const SsimParams& p) {
  const double n = static_cast<double>(p.window) * p.window;
  const double c1 = (p.k1 * p.peak) * (p.k1 * p.peak);
  const double c2 = (p.k2 * p.peak) * (p.k2 * p.peak);
  double acc = 0.0;
  for (int x = 0; x < windows_x; ++x) {
    const double ma = SsimTables::rect(t.a, t.stride, y, x, p.window) / n;
    const double mb = SsimTables::rect(t.b, t.stride, y, x, p.window) / n;
    const double va = SsimTables::rect(t.aa, t.stride, y, x, p.window) / n - ma * ma;
    const double vb = SsimTables::rect(t.bb, t.stride, y, x, p.window) / n - mb * mb;
    const double cov = SsimTables::rect(t.ab, t.stride, y, x, p.window) / n - ma * mb;
    acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return acc;
}

}  // namespace cloak::kernels::detail
