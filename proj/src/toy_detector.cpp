#include "cloak/toy_detector.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "cloak/errors.hpp"

namespace cloak {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct ToyDetector::Layout {
  int k = 0;       // categories
  int c1 = 0;      // conv1 channels
  int c2 = 0;      // conv2 channels
  int grid = 0;    // RoI grid side
  int feat = 0;    // c2 * grid * grid
  int hidden = 0;
  std::size_t c1w = 0, c1b = 0, c2w = 0, c2b = 0, f1w = 0, f1b = 0, f2w = 0, f2b = 0, total = 0;

  Layout(const ToyDetectorConfig& cfg, int categories)
      : k(categories), c1(cfg.conv1_channels), c2(cfg.conv2_channels), grid(cfg.roi_grid),
        feat(cfg.conv2_channels * cfg.roi_grid * cfg.roi_grid), hidden(cfg.hidden_units) {
    std::size_t at = 0;
    c1w = at; at += static_cast<std::size_t>(c1) * 3 * 9;
    c1b = at; at += c1;
    c2w = at; at += static_cast<std::size_t>(c2) * c1 * 9;
    c2b = at; at += c2;
    f1w = at; at += static_cast<std::size_t>(hidden) * feat;
    f1b = at; at += hidden;
    f2w = at; at += static_cast<std::size_t>(k) * hidden;
    f2b = at; at += k;
    total = at;
  }
};

namespace {

using Layout = ToyDetector::Layout;

constexpr int kObjectnessFeatures = 11;
constexpr int kRingWidth = 2;

// ---------------------------------------------------------------- input

struct Normalized {
  int height = 0;
  int width = 0;
  double mean = 0.0;
  double scale = 1.0;
  std::vector<double> planes;  // 3 x H x W
};

Normalized normalize(const Image& image, double floor) {
  Normalized n;
  n.height = image.height();
  n.width = image.width();
  const auto px = image.data();
  const double count = static_cast<double>(px.size());
  double sum = 0.0;
  for (double v : px) sum += v;
  n.mean = sum / count;
  double sq = 0.0;
  for (double v : px) sq += (v - n.mean) * (v - n.mean);
  n.scale = std::sqrt(sq / count + floor * floor);
  const std::size_t plane = static_cast<std::size_t>(n.height) * n.width;
  n.planes.resize(3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) n.planes[c * plane + i] = (px[i * 3 + c] - n.mean) / n.scale;
  }
  return n;
}

// d loss / d pixel (interleaved) from d loss / d normalised plane.
Image normalize_backward(const Normalized& n, const std::vector<double>& grad_planes) {
  const std::size_t total = grad_planes.size();
  const std::size_t plane = total / 3;
  double gsum = 0.0, gx = 0.0;
  for (std::size_t i = 0; i < total; ++i) {
    gsum += grad_planes[i];
    gx += grad_planes[i] * n.planes[i];
  }
  const double gmean = gsum / static_cast<double>(total);
  const double gxmean = gx / static_cast<double>(total);
  Image out(n.height, n.width);
  auto px = out.data();
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      const std::size_t p = c * plane + i;
      px[i * 3 + c] = (grad_planes[p] - gmean - n.planes[p] * gxmean) / n.scale;
    }
  }
  return out;
}

// ---------------------------------------------------------------- RoI sampling

// Bilinear sampling weights along one axis of one RoI: bin `b` reads the
// pixels lo + first[b] .. lo + last[b] with weights w[b * span + i].
struct AxisWeights {
  int lo = 0;
  int span = 0;
  std::vector<int> first, last;
  std::vector<double> w;
};

// Samples `per_bin` evenly spaced points in each of `grid` bins covering
// [start, start + grid * bin) and spreads each bilinearly over its two
// neighbouring pixels, averaging within the bin.
AxisWeights axis_weights(double start, double bin, int per_bin, int grid, int length) {
  std::vector<std::pair<int, double>> taps;
  taps.reserve(static_cast<std::size_t>(grid) * per_bin * 2);
  AxisWeights a;
  a.lo = length;
  int hi = 0;
  const double share = 1.0 / per_bin;
  for (int g = 0; g < grid; ++g) {
    for (int s = 0; s < per_bin; ++s) {
      // Sample position in pixel-centre coordinates.
      const double u = std::clamp(start + (g + (s + 0.5) / per_bin) * bin - 0.5, 0.0, length - 1.0);
      const int u0 = static_cast<int>(std::floor(u));
      const int u1 = std::min(u0 + 1, length - 1);
      const double f = u - u0;
      taps.emplace_back(u0, share * (1 - f));
      taps.emplace_back(u1, share * f);
      a.lo = std::min(a.lo, u0);
      hi = std::max(hi, u1);
    }
  }
  a.span = hi - a.lo + 1;
  a.first.assign(grid, a.span);
  a.last.assign(grid, -1);
  a.w.assign(static_cast<std::size_t>(grid) * a.span, 0.0);
  const int per = per_bin * 2;
  for (int g = 0; g < grid; ++g) {
    for (int t = 0; t < per; ++t) {
      const auto& [at, weight] = taps[static_cast<std::size_t>(g) * per + t];
      const int i = at - a.lo;
      a.w[static_cast<std::size_t>(g) * a.span + i] += weight;
      a.first[g] = std::min(a.first[g], i);
      a.last[g] = std::max(a.last[g], i);
    }
  }
  return a;
}

// Average pooling over each bin of the (context-grown) box: every bin is
// sampled densely, about one bilinear sample per pixel and at least 2x2, so
// the pooled feature reflects the whole bin rather than a few points. The
// sample lattice is a product of x and y positions, so the operator factors
// into a horizontal and a vertical pass.
struct RoiTable {
  int grid = 0;
  std::vector<AxisWeights> x, y;
};

RoiTable build_roi_table(std::span<const Proposal> proposals, int height, int width, int grid, double context) {
  RoiTable t;
  t.grid = grid;
  t.x.reserve(proposals.size());
  t.y.reserve(proposals.size());
  for (const auto& p : proposals) {
    const Box& r = p.box;
    const Box b{r.x_min - context * r.width(), r.y_min - context * r.height(), r.x_max + context * r.width(),
                r.y_max + context * r.height()};
    const double bw = b.width() / grid, bh = b.height() / grid;
    const int nx = std::max(2, static_cast<int>(std::ceil(bw))), ny = std::max(2, static_cast<int>(std::ceil(bh)));
    t.x.push_back(axis_weights(b.x_min, bw, nx, grid, width));
    t.y.push_back(axis_weights(b.y_min, bh, ny, grid, height));
  }
  return t;
}

// out[by * grid + bx] = sum over pixels of wy[by][y] * wx[bx][x] * map[y][x].
void roi_pool(const AxisWeights& ax, const AxisWeights& ay, int grid, const double* map, int width,
              std::vector<double>& rows, double* out) {
  rows.assign(static_cast<std::size_t>(ay.span) * grid, 0.0);
  for (int y = 0; y < ay.span; ++y) {
    const double* line = map + static_cast<std::size_t>(ay.lo + y) * width + ax.lo;
    for (int bx = 0; bx < grid; ++bx) {
      const double* w = ax.w.data() + static_cast<std::size_t>(bx) * ax.span;
      double acc = 0.0;
      for (int i = ax.first[bx]; i <= ax.last[bx]; ++i) acc += w[i] * line[i];
      rows[static_cast<std::size_t>(y) * grid + bx] = acc;
    }
  }
  for (int by = 0; by < grid; ++by) {
    const double* w = ay.w.data() + static_cast<std::size_t>(by) * ay.span;
    for (int bx = 0; bx < grid; ++bx) {
      double acc = 0.0;
      for (int i = ay.first[by]; i <= ay.last[by]; ++i) acc += w[i] * rows[static_cast<std::size_t>(i) * grid + bx];
      out[by * grid + bx] = acc;
    }
  }
}

// Adjoint of roi_pool: map[y][x] += sum over bins of wy[by][y] * wx[bx][x] * g[by * grid + bx].
void roi_pool_backward(const AxisWeights& ax, const AxisWeights& ay, int grid, const double* g, int width,
                       std::vector<double>& rows, double* map) {
  rows.assign(static_cast<std::size_t>(ay.span) * grid, 0.0);
  for (int by = 0; by < grid; ++by) {
    const double* w = ay.w.data() + static_cast<std::size_t>(by) * ay.span;
    for (int i = ay.first[by]; i <= ay.last[by]; ++i) {
      double* row = rows.data() + static_cast<std::size_t>(i) * grid;
      for (int bx = 0; bx < grid; ++bx) row[bx] += w[i] * g[by * grid + bx];
    }
  }
  for (int y = 0; y < ay.span; ++y) {
    double* line = map + static_cast<std::size_t>(ay.lo + y) * width + ax.lo;
    const double* row = rows.data() + static_cast<std::size_t>(y) * grid;
    for (int bx = 0; bx < grid; ++bx) {
      const double* w = ax.w.data() + static_cast<std::size_t>(bx) * ax.span;
      for (int i = ax.first[bx]; i <= ax.last[bx]; ++i) line[i] += w[i] * row[bx];
    }
  }
}

// ---------------------------------------------------------------- network

struct Forward {
  Normalized input;
  std::vector<double> a1, a2;  // tanh activations, planar
  RoiTable roi;
  int rois = 0;
  std::vector<double> feats;   // rois x feat
  std::vector<double> hidden;  // rois x hidden (post tanh)
  std::vector<double> logits;  // rois x k
  std::vector<double> probs;   // rois x k
};

Forward forward(const Layout& L, std::span<const double> p, const ToyDetectorConfig& cfg, kernels::Backend backend,
                const Image& image, std::span<const Proposal> proposals) {
  Forward f;
  f.input = normalize(image, cfg.norm_floor);
  const int H = image.height(), W = image.width();
  const std::size_t plane = static_cast<std::size_t>(H) * W;

  const kernels::ConvShape s1{3, L.c1, H, W};
  f.a1.resize(s1.output_size());
  kernels::conv3x3_forward(backend, s1, f.input.planes, p.subspan(L.c1w, s1.weight_size()), p.subspan(L.c1b, L.c1),
                           f.a1);
  for (double& v : f.a1) v = std::tanh(v);

  const kernels::ConvShape s2{L.c1, L.c2, H, W};
  f.a2.resize(s2.output_size());
  kernels::conv3x3_forward(backend, s2, f.a1, p.subspan(L.c2w, s2.weight_size()), p.subspan(L.c2b, L.c2), f.a2);
  for (double& v : f.a2) v = std::tanh(v);

  f.rois = static_cast<int>(proposals.size());
  f.roi = build_roi_table(proposals, H, W, L.grid, cfg.roi_context);
  const int bins = L.grid * L.grid;
  f.feats.assign(static_cast<std::size_t>(f.rois) * L.feat, 0.0);
  std::vector<double> rows;
  for (int j = 0; j < f.rois; ++j) {
    double* feat = f.feats.data() + static_cast<std::size_t>(j) * L.feat;
    for (int c = 0; c < L.c2; ++c) {
      roi_pool(f.roi.x[j], f.roi.y[j], L.grid, f.a2.data() + c * plane, W, rows, feat + c * bins);
    }
  }

  f.hidden.assign(static_cast<std::size_t>(f.rois) * L.hidden, 0.0);
  f.logits.assign(static_cast<std::size_t>(f.rois) * L.k, 0.0);
  f.probs.assign(f.logits.size(), 0.0);
  const double* w1 = p.data() + L.f1w;
  const double* b1 = p.data() + L.f1b;
  const double* w2 = p.data() + L.f2w;
  const double* b2 = p.data() + L.f2b;
  for (int j = 0; j < f.rois; ++j) {
    const double* x = f.feats.data() + static_cast<std::size_t>(j) * L.feat;
    double* h = f.hidden.data() + static_cast<std::size_t>(j) * L.hidden;
    for (int u = 0; u < L.hidden; ++u) {
      const double* row = w1 + static_cast<std::size_t>(u) * L.feat;
      double acc = b1[u];
      for (int d = 0; d < L.feat; ++d) acc += row[d] * x[d];
      h[u] = std::tanh(acc);
    }
    double* z = f.logits.data() + static_cast<std::size_t>(j) * L.k;
    double* pr = f.probs.data() + static_cast<std::size_t>(j) * L.k;
    double zmax = -1e300;
    for (int k = 0; k < L.k; ++k) {
      const double* row = w2 + static_cast<std::size_t>(k) * L.hidden;
      double acc = b2[k];
      for (int u = 0; u < L.hidden; ++u) acc += row[u] * h[u];
      z[k] = acc;
      zmax = std::max(zmax, acc);
    }
    double denom = 0.0;
    for (int k = 0; k < L.k; ++k) {
      pr[k] = std::exp(z[k] - zmax);
      denom += pr[k];
    }
    for (int k = 0; k < L.k; ++k) pr[k] /= denom;
  }
  return f;
}

double cross_entropy(const Forward& f, int k, int row, int label) {
  const double* z = f.logits.data() + static_cast<std::size_t>(row) * k;
  double zmax = -1e300;
  for (int c = 0; c < k; ++c) zmax = std::max(zmax, z[c]);
  double s = 0.0;
  for (int c = 0; c < k; ++c) s += std::exp(z[c] - zmax);
  return zmax + std::log(s) - z[label];
}

// Backpropagates d loss / d logits. Parameter gradients are accumulated into
// `dparams` when non-null; the pixel gradient is returned when requested.
Image backward(const Layout& L, std::span<const double> p, kernels::Backend backend, const Forward& f,
               std::span<const double> dlogits, std::vector<double>* dparams, bool want_input_grad) {
  const int H = f.input.height, W = f.input.width;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const double* w1 = p.data() + L.f1w;
  const double* w2 = p.data() + L.f2w;
  const int bins = L.grid * L.grid;
  std::vector<double> rows;

  std::vector<double> da2(f.a2.size(), 0.0);
  std::vector<double> dh(L.hidden), dfeat(L.feat);
  for (int j = 0; j < f.rois; ++j) {
    const double* dz = dlogits.data() + static_cast<std::size_t>(j) * L.k;
    const double* h = f.hidden.data() + static_cast<std::size_t>(j) * L.hidden;
    const double* x = f.feats.data() + static_cast<std::size_t>(j) * L.feat;
    std::fill(dh.begin(), dh.end(), 0.0);
    for (int k = 0; k < L.k; ++k) {
      const double* row = w2 + static_cast<std::size_t>(k) * L.hidden;
      for (int u = 0; u < L.hidden; ++u) dh[u] += dz[k] * row[u];
    }
    if (dparams) {
      double* gw2 = dparams->data() + L.f2w;
      double* gb2 = dparams->data() + L.f2b;
      for (int k = 0; k < L.k; ++k) {
        for (int u = 0; u < L.hidden; ++u) gw2[static_cast<std::size_t>(k) * L.hidden + u] += dz[k] * h[u];
        gb2[k] += dz[k];
      }
    }
    for (int u = 0; u < L.hidden; ++u) dh[u] *= 1.0 - h[u] * h[u];
    if (dparams) {
      double* gw1 = dparams->data() + L.f1w;
      double* gb1 = dparams->data() + L.f1b;
      for (int u = 0; u < L.hidden; ++u) {
        if (dh[u] == 0.0) continue;
        double* grow = gw1 + static_cast<std::size_t>(u) * L.feat;
        for (int d = 0; d < L.feat; ++d) grow[d] += dh[u] * x[d];
        gb1[u] += dh[u];
      }
    }
    std::fill(dfeat.begin(), dfeat.end(), 0.0);
    for (int u = 0; u < L.hidden; ++u) {
      const double* row = w1 + static_cast<std::size_t>(u) * L.feat;
      for (int d = 0; d < L.feat; ++d) dfeat[d] += dh[u] * row[d];
    }
    for (int c = 0; c < L.c2; ++c) {
      roi_pool_backward(f.roi.x[j], f.roi.y[j], L.grid, dfeat.data() + c * bins, W, rows, da2.data() + c * plane);
    }
  }

  for (std::size_t i = 0; i < da2.size(); ++i) da2[i] *= 1.0 - f.a2[i] * f.a2[i];
  const kernels::ConvShape s2{L.c1, L.c2, H, W};
  if (dparams) {
    kernels::conv3x3_backward_params(backend, s2, f.a1, da2, std::span(*dparams).subspan(L.c2w, s2.weight_size()),
                                     std::span(*dparams).subspan(L.c2b, L.c2));
  }
  std::vector<double> da1(f.a1.size());
  kernels::conv3x3_backward_input(backend, s2, da2, p.subspan(L.c2w, s2.weight_size()), da1);
  for (std::size_t i = 0; i < da1.size(); ++i) da1[i] *= 1.0 - f.a1[i] * f.a1[i];

  const kernels::ConvShape s1{3, L.c1, H, W};
  if (dparams) {
    kernels::conv3x3_backward_params(backend, s1, f.input.planes, da1,
                                     std::span(*dparams).subspan(L.c1w, s1.weight_size()),
                                     std::span(*dparams).subspan(L.c1b, L.c1));
  }
  if (!want_input_grad) return Image();
  std::vector<double> dx(f.input.planes.size());
  kernels::conv3x3_backward_input(backend, s1, da1, p.subspan(L.c1w, s1.weight_size()), dx);
  return normalize_backward(f.input, dx);
}

// ---------------------------------------------------------------- objectness

struct WindowMaps {
  int height = 0;
  int width = 0;
  int stride = 0;
  std::array<std::vector<double>, 7> sat;  // 3 channel sums, 3 squared sums, gradient magnitude

  double rect(int which, int x0, int y0, int x1, int y1) const {
    const auto& t = sat[which];
    return t[static_cast<std::size_t>(y1) * stride + x1] - t[static_cast<std::size_t>(y0) * stride + x1] -
           t[static_cast<std::size_t>(y1) * stride + x0] + t[static_cast<std::size_t>(y0) * stride + x0];
  }
};

WindowMaps build_window_maps(const Normalized& n) {
  WindowMaps m;
  m.height = n.height;
  m.width = n.width;
  m.stride = n.width + 1;
  const int H = n.height, W = n.width;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::vector<double> grad(plane, 0.0);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double g = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double* P = n.planes.data() + c * plane;
        const double gx = P[y * W + std::min(x + 1, W - 1)] - P[y * W + std::max(x - 1, 0)];
        const double gy = P[std::min(y + 1, H - 1) * W + x] - P[std::max(y - 1, 0) * W + x];
        g += gx * gx + gy * gy;
      }
      grad[static_cast<std::size_t>(y) * W + x] = std::sqrt(g);
    }
  }
  for (auto& t : m.sat) t.assign(static_cast<std::size_t>(H + 1) * m.stride, 0.0);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const std::size_t i = static_cast<std::size_t>(y + 1) * m.stride + x + 1;
      const std::size_t src = static_cast<std::size_t>(y) * W + x;
      double vals[7];
      for (int c = 0; c < 3; ++c) {
        const double v = n.planes[c * plane + src];
        vals[c] = v;
        vals[3 + c] = v * v;
      }
      vals[6] = grad[src];
      for (int q = 0; q < 7; ++q) {
        auto& t = m.sat[q];
        t[i] = vals[q] + t[i - m.stride] + t[i - 1] - t[i - m.stride - 1];
      }
    }
  }
  return m;
}

struct RegionStats {
  double n = 0.0;
  double sum[7] = {};

  static RegionStats of(const WindowMaps& m, int x0, int y0, int x1, int y1) {
    RegionStats s;
    x0 = std::clamp(x0, 0, m.width);
    x1 = std::clamp(x1, 0, m.width);
    y0 = std::clamp(y0, 0, m.height);
    y1 = std::clamp(y1, 0, m.height);
    if (x1 <= x0 || y1 <= y0) return s;
    s.n = static_cast<double>(x1 - x0) * (y1 - y0);
    for (int q = 0; q < 7; ++q) s.sum[q] = m.rect(q, x0, y0, x1, y1);
    return s;
  }
  RegionStats minus(const RegionStats& o) const {
    RegionStats s;
    s.n = n - o.n;
    for (int q = 0; q < 7; ++q) s.sum[q] = sum[q] - o.sum[q];
    return s;
  }
  double mean(int q) const { return n > 0.5 ? sum[q] / n : 0.0; }
  double spread() const {
    if (n < 0.5) return 0.0;
    double v = 0.0;
    for (int c = 0; c < 3; ++c) v += std::max(0.0, mean(3 + c) - mean(c) * mean(c));
    return std::sqrt(v);
  }
};

double colour_distance(const RegionStats& a, const RegionStats& b) {
  double d = 0.0;
  for (int c = 0; c < 3; ++c) d += (a.mean(c) - b.mean(c)) * (a.mean(c) - b.mean(c));
  return std::sqrt(d);
}

struct Window {
  int x = 0, y = 0, size = 0;
  Box box() const {
    return Box{static_cast<double>(x), static_cast<double>(y), static_cast<double>(x + size),
               static_cast<double>(y + size)};
  }
};

std::vector<Window> enumerate_windows(const ToyDetectorConfig& cfg, int height, int width) {
  std::vector<Window> out;
  for (int s = cfg.min_window; s <= cfg.max_window; s += cfg.window_step) {
    if (s > width || s > height) break;
    for (int y = 0; y + s <= height; y += cfg.window_stride) {
      for (int x = 0; x + s <= width; x += cfg.window_stride) out.push_back(Window{x, y, s});
    }
  }
  return out;
}

std::array<double, kObjectnessFeatures> window_features(const WindowMaps& m, const Window& w, int max_window) {
  const int x0 = w.x, y0 = w.y, x1 = w.x + w.size, y1 = w.y + w.size;
  const RegionStats window = RegionStats::of(m, x0, y0, x1, y1);
  const RegionStats outer = RegionStats::of(m, x0 - kRingWidth, y0 - kRingWidth, x1 + kRingWidth, y1 + kRingWidth);
  const RegionStats inner = RegionStats::of(m, x0 + kRingWidth, y0 + kRingWidth, x1 - kRingWidth, y1 - kRingWidth);
  const RegionStats ring = outer.minus(window);
  const RegionStats band = window.minus(inner);
  const double full_ring = static_cast<double>(w.size + 2 * kRingWidth) * (w.size + 2 * kRingWidth) -
                           static_cast<double>(w.size) * w.size;
  return {colour_distance(band, ring),
          colour_distance(inner, ring),
          colour_distance(band, inner),
          ring.spread(),
          band.spread(),
          inner.spread(),
          ring.mean(6),
          band.mean(6),
          inner.mean(6),
          static_cast<double>(w.size) / max_window,
          ring.n / full_ring};
}

// Small MLP: features -> tanh hidden -> logit.
struct ObjectnessNet {
  int in = kObjectnessFeatures;
  int hidden = 0;
  std::size_t size() const { return static_cast<std::size_t>(hidden) * in + hidden + hidden + 1; }

  double logit(std::span<const double> p, const double* x, double* h) const {
    const double* w1 = p.data();
    const double* b1 = w1 + static_cast<std::size_t>(hidden) * in;
    const double* w2 = b1 + hidden;
    const double b2 = w2[hidden];
    double z = b2;
    for (int u = 0; u < hidden; ++u) {
      double a = b1[u];
      for (int d = 0; d < in; ++d) a += w1[u * in + d] * x[d];
      h[u] = std::tanh(a);
      z += w2[u] * h[u];
    }
    return z;
  }

  // d loss / d logit = g. Accumulates parameter gradients.
  void backward(std::span<const double> p, const double* x, const double* h, double g, double* grad) const {
    const double* w2 = p.data() + static_cast<std::size_t>(hidden) * in + hidden;
    double* gw1 = grad;
    double* gb1 = gw1 + static_cast<std::size_t>(hidden) * in;
    double* gw2 = gb1 + hidden;
    for (int u = 0; u < hidden; ++u) {
      gw2[u] += g * h[u];
      const double dz = g * w2[u] * (1.0 - h[u] * h[u]);
      for (int d = 0; d < in; ++d) gw1[u * in + d] += dz * x[d];
      gb1[u] += dz;
    }
    gw2[hidden] += g;
  }
};

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// ---------------------------------------------------------------- optimisation

struct Adam {
  double lr;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<double> m, v;
  long step = 0;

  Adam(std::size_t n, double learning_rate) : lr(learning_rate), m(n, 0.0), v(n, 0.0) {}

  void apply(std::vector<double>& params, const std::vector<double>& grad) {
    ++step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = beta1 * m[i] + (1 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1 - beta2) * grad[i] * grad[i];
      params[i] -= lr * ((m[i] / c1) / (std::sqrt(v[i] / c2) + eps));
    }
  }
};

void init_dense(std::vector<double>& p, std::size_t offset, int fan_in, std::size_t count, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  for (std::size_t i = 0; i < count; ++i) p[offset + i] = nd(rng);
}

double max_iou(const Box& box, std::span<const Annotation> truth, int* category) {
  double best = 0.0;
  int cat = 0;
  for (const auto& a : truth) {
    const double v = iou(box, a.box);
    if (v > best) {
      best = v;
      cat = a.category;
    }
  }
  if (category) *category = cat;
  return best;
}

void validate_config(const ToyDetectorConfig& c) {
  if (c.conv1_channels < 1 || c.conv2_channels < 1 || c.roi_grid < 1 || c.hidden_units < 1 ||
      c.objectness_hidden < 1 || c.max_proposals < 1 || c.min_window < 4 || c.max_window < c.min_window ||
      c.window_step < 1 || c.window_stride < 1 || !(c.norm_floor > 0.0) || !(c.roi_context >= 0.0) ||
      !(c.proposal_nms_iou > 0.0 && c.proposal_nms_iou <= 1.0) || !(c.min_objectness >= 0.0 && c.min_objectness < 1.0)) {
    throw InvalidInput("invalid toy detector configuration");
  }
}

}  // namespace

// ====================================================================== class

ToyDetector::ToyDetector(ToyDetectorConfig config, std::vector<std::string> category_names)
    : config_(config), names_(std::move(category_names)) {
  validate_config(config_);
  if (names_.size() < 3) throw InvalidInput("toy detector needs background plus at least two object categories");
  const Layout L(config_, static_cast<int>(names_.size()));
  params_.assign(L.total, 0.0);
  objectness_params_.assign(ObjectnessNet{kObjectnessFeatures, config_.objectness_hidden}.size(), 0.0);
  feature_shift_.assign(kObjectnessFeatures, 0.0);
  feature_scale_.assign(kObjectnessFeatures, 1.0);
}

std::vector<Proposal> ToyDetector::propose(const Image& image) const {
  propose_calls_->fetch_add(1);
  validate_image(image, min_image_side());
  const Normalized n = normalize(image, config_.norm_floor);
  const WindowMaps maps = build_window_maps(n);
  const auto windows = enumerate_windows(config_, image.height(), image.width());
  const ObjectnessNet net{kObjectnessFeatures, config_.objectness_hidden};

  std::vector<Proposal> scored(windows.size());
  std::vector<double> hidden(net.hidden);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    auto f = window_features(maps, windows[i], config_.max_window);
    for (int d = 0; d < kObjectnessFeatures; ++d) f[d] = (f[d] - feature_shift_[d]) / feature_scale_[d];
    scored[i] = Proposal{windows[i].box(), sigmoid(net.logit(objectness_params_, f.data(), hidden.data()))};
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const Proposal& a, const Proposal& b) { return a.objectness > b.objectness; });

  std::vector<Proposal> kept;
  for (const auto& p : scored) {
    if (static_cast<int>(kept.size()) >= config_.max_proposals || p.objectness < config_.min_objectness) break;
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Proposal& k) {
      return iou(k.box, p.box) > config_.proposal_nms_iou;
    });
    if (!suppressed) kept.push_back(p);
  }
  return kept;
}

namespace {

void check_proposals(const Image& image, std::span<const Proposal> proposals) {
  for (const auto& p : proposals) {
    const Box& b = p.box;
    if (!b.valid() || b.x_min < 0.0 || b.y_min < 0.0 || b.x_max > image.width() || b.y_max > image.height()) {
      throw InvalidInput("proposal geometry lies outside the image");
    }
  }
}

}  // namespace

ScoreMatrix ToyDetector::classify(const Image& image, std::span<const Proposal> proposals) const {
  validate_image(image, min_image_side());
  ScoreMatrix scores(static_cast<int>(proposals.size()), names_);
  if (proposals.empty()) return scores;
  check_proposals(image, proposals);
  const Layout L(config_, static_cast<int>(names_.size()));
  const Forward f = forward(L, params_, config_, backend_, image, proposals);
  for (int j = 0; j < f.rois; ++j) {
    for (int k = 0; k < L.k; ++k) scores.at(j, k) = f.probs[static_cast<std::size_t>(j) * L.k + k];
  }
  return scores;
}

LossGradient ToyDetector::loss_and_gradient(const Image& image, std::span<const Proposal> proposals,
                                            int target_label) const {
  validate_image(image, min_image_side());
  if (proposals.empty()) throw InvalidInput("loss_and_gradient needs at least one proposal");
  if (target_label < 0 || target_label >= category_count()) throw InvalidInput("target label out of range");
  check_proposals(image, proposals);
  const Layout L(config_, static_cast<int>(names_.size()));
  const Forward f = forward(L, params_, config_, backend_, image, proposals);

  const double inv_m = 1.0 / f.rois;
  std::vector<double> dlogits(f.probs.size());
  LossGradient out;
  out.scores = ScoreMatrix(f.rois, names_);
  for (int j = 0; j < f.rois; ++j) {
    out.loss += cross_entropy(f, L.k, j, target_label);
    for (int k = 0; k < L.k; ++k) {
      const std::size_t i = static_cast<std::size_t>(j) * L.k + k;
      dlogits[i] = (f.probs[i] - (k == target_label ? 1.0 : 0.0)) * inv_m;
      out.scores.at(j, k) = f.probs[i];
    }
  }
  out.loss *= inv_m;
  out.gradient = backward(L, params_, backend_, f, dlogits, nullptr, true);
  return out;
}

// ====================================================================== training

struct ToyDetectorTrainer {
  static void train_objectness(ToyDetector& det, std::span<const LabeledImage> corpus, const TrainConfig& tc,
                               std::mt19937_64& rng) {
    const auto& cfg = det.config_;
    struct Sample {
      std::array<double, kObjectnessFeatures> x;
      double target;
    };
    std::vector<Sample> samples;
    for (const auto& item : corpus) {
      const Normalized n = normalize(item.image, cfg.norm_floor);
      const WindowMaps maps = build_window_maps(n);
      const auto windows = enumerate_windows(cfg, item.image.height(), item.image.width());
      std::vector<std::size_t> background;
      for (std::size_t i = 0; i < windows.size(); ++i) {
        const double overlap = max_iou(windows[i].box(), item.annotations, nullptr);
        if (overlap >= 0.25) {
          samples.push_back({window_features(maps, windows[i], cfg.max_window), overlap});
        } else {
          background.push_back(i);
        }
      }
      std::shuffle(background.begin(), background.end(), rng);
      const std::size_t keep = std::min<std::size_t>(background.size(), 48);
      for (std::size_t i = 0; i < keep; ++i) {
        const auto& w = windows[background[i]];
        samples.push_back({window_features(maps, w, cfg.max_window), max_iou(w.box(), item.annotations, nullptr)});
      }
    }
    if (samples.empty()) throw InvalidInput("objectness training found no windows");

    // Standardise features.
    for (int d = 0; d < kObjectnessFeatures; ++d) {
      double mean = 0.0;
      for (const auto& s : samples) mean += s.x[d];
      mean /= samples.size();
      double var = 0.0;
      for (const auto& s : samples) var += (s.x[d] - mean) * (s.x[d] - mean);
      var /= samples.size();
      det.feature_shift_[d] = mean;
      det.feature_scale_[d] = std::sqrt(var) > 1e-9 ? std::sqrt(var) : 1.0;
    }
    for (auto& s : samples) {
      for (int d = 0; d < kObjectnessFeatures; ++d) s.x[d] = (s.x[d] - det.feature_shift_[d]) / det.feature_scale_[d];
    }

    const ObjectnessNet net{kObjectnessFeatures, cfg.objectness_hidden};
    auto& p = det.objectness_params_;
    init_dense(p, 0, kObjectnessFeatures, static_cast<std::size_t>(net.hidden) * net.in, rng);
    init_dense(p, static_cast<std::size_t>(net.hidden) * net.in + net.hidden, net.hidden, net.hidden, rng);
    Adam adam(p.size(), tc.learning_rate * 2.5);
    std::vector<double> grad(p.size());
    std::vector<double> hidden(net.hidden);
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    constexpr std::size_t kBatch = 256;
    for (int epoch = 0; epoch < tc.objectness_epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t start = 0; start < order.size(); start += kBatch) {
        const std::size_t end = std::min(order.size(), start + kBatch);
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t i = start; i < end; ++i) {
          const auto& s = samples[order[i]];
          const double z = net.logit(p, s.x.data(), hidden.data());
          net.backward(p, s.x.data(), hidden.data(), (sigmoid(z) - s.target) / (end - start), grad.data());
        }
        adam.apply(p, grad);
      }
    }
  }

  static void train_classifier(ToyDetector& det, std::span<const LabeledImage> corpus, const TrainConfig& tc,
                               std::mt19937_64& rng) {
    const auto& cfg = det.config_;
    const Layout L(cfg, static_cast<int>(det.names_.size()));
    auto& p = det.params_;
    init_dense(p, L.c1w, 27, static_cast<std::size_t>(L.c1) * 27, rng);
    init_dense(p, L.c2w, L.c1 * 9, static_cast<std::size_t>(L.c2) * L.c1 * 9, rng);
    init_dense(p, L.f1w, L.feat, static_cast<std::size_t>(L.hidden) * L.feat, rng);
    init_dense(p, L.f2w, L.hidden, static_cast<std::size_t>(L.k) * L.hidden, rng);

    // Proposals are a function of the (already trained) objectness stage.
    std::vector<std::vector<Proposal>> proposals;
    proposals.reserve(corpus.size());
    for (const auto& item : corpus) proposals.push_back(det.propose(item.image));

    Adam adam(p.size(), tc.learning_rate);
    std::vector<double> grad(p.size());
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    std::uniform_int_distribution<int> jitter(-2, 2);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    for (int epoch = 0; epoch < tc.classifier_epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t idx : order) {
        const auto& item = corpus[idx];
        const double W = item.image.width(), H = item.image.height();
        std::vector<Proposal> rois;
        std::vector<int> labels;
        std::vector<const Proposal*> negatives;
        for (const auto& prop : proposals[idx]) {
          int cat = 0;
          if (max_iou(prop.box, item.annotations, &cat) >= tc.foreground_iou) {
            rois.push_back(prop);
            labels.push_back(cat);
          } else if (static_cast<int>(negatives.size()) < tc.negative_pool) {
            negatives.push_back(&prop);
          }
        }
        std::shuffle(negatives.begin(), negatives.end(), rng);
        const std::size_t keep = std::min<std::size_t>(negatives.size(), tc.negatives_per_image);
        for (std::size_t i = 0; i < keep; ++i) {
          rois.push_back(*negatives[i]);
          labels.push_back(0);
        }
        for (const auto& a : item.annotations) {
          for (int r = 0; r < tc.jittered_positives; ++r) {
            const double ds = jitter(rng);
            Box b{a.box.x_min + jitter(rng), a.box.y_min + jitter(rng), 0, 0};
            b.x_max = b.x_min + a.box.width() + ds;
            b.y_max = b.y_min + a.box.height() + ds;
            b = b.clipped(W, H);
            if (!b.valid() || iou(b, a.box) < 0.6) continue;
            rois.push_back(Proposal{b, 1.0});
            labels.push_back(a.category);
          }
          for (int r = 0; r < tc.hard_negatives; ++r) {
            const double side = a.box.width() * (0.6 + 0.8 * unit(rng));
            const double cx = a.box.x_min + a.box.width() * (unit(rng) * 1.6 - 0.3);
            const double cy = a.box.y_min + a.box.height() * (unit(rng) * 1.6 - 0.3);
            const Box b = Box{cx - side / 2, cy - side / 2, cx + side / 2, cy + side / 2}.clipped(W, H);
            if (!b.valid() || b.width() < 4 || b.height() < 4) continue;
            const double overlap = max_iou(b, item.annotations, nullptr);
            if (overlap < 0.05 || overlap >= 0.45) continue;
            rois.push_back(Proposal{b, 0.0});
            labels.push_back(0);
          }
        }
        if (rois.empty()) continue;

        const Forward f = forward(L, p, cfg, kernels::Backend::kSerial, item.image, rois);
        std::vector<double> dlogits(f.probs.size());
        const double inv = 1.0 / f.rois;
        for (int j = 0; j < f.rois; ++j) {
          for (int k = 0; k < L.k; ++k) {
            const std::size_t i = static_cast<std::size_t>(j) * L.k + k;
            dlogits[i] = (f.probs[i] - (k == labels[j] ? 1.0 : 0.0)) * inv;
          }
        }
        std::fill(grad.begin(), grad.end(), 0.0);
        backward(L, p, kernels::Backend::kSerial, f, dlogits, &grad, false);
        if (tc.adversarial_steps > 0 && epoch >= tc.classifier_epochs / 3) {
          add_perturbed_background(L, det, item, proposals[idx], tc, rng, grad);
        }
        adam.apply(p, grad);
      }
    }
  }

  // Background RoIs of a copy of the image pushed a few signed-gradient steps
  // toward a random object category, still labelled background. Teaches the
  // head that small structured perturbations do not make an object.
  static void add_perturbed_background(const Layout& L, const ToyDetector& det, const LabeledImage& item,
                                       std::span<const Proposal> proposals, const TrainConfig& tc,
                                       std::mt19937_64& rng, std::vector<double>& grad) {
    const auto& cfg = det.config_;
    const auto& p = det.params_;
    std::vector<Proposal> rois;
    for (const auto& prop : proposals) {
      if (max_iou(prop.box, item.annotations, nullptr) < tc.foreground_iou) rois.push_back(prop);
    }
    std::shuffle(rois.begin(), rois.end(), rng);
    if (static_cast<int>(rois.size()) > tc.adversarial_negatives) rois.resize(tc.adversarial_negatives);
    if (rois.empty()) return;

    std::uniform_int_distribution<int> pick_target(1, L.k - 1), pick_steps(1, tc.adversarial_steps);
    const int target = pick_target(rng);
    const int steps = pick_steps(rng);
    const double inv = 1.0 / static_cast<double>(rois.size());
    auto label_gradient = [&](const Forward& f, int label) {
      std::vector<double> d(f.probs.size());
      for (int j = 0; j < f.rois; ++j) {
        for (int k = 0; k < L.k; ++k) {
          const std::size_t i = static_cast<std::size_t>(j) * L.k + k;
          d[i] = (f.probs[i] - (k == label ? 1.0 : 0.0)) * inv;
        }
      }
      return d;
    };

    Image x = item.image;
    for (int s = 0; s < steps; ++s) {
      const Forward f = forward(L, p, cfg, kernels::Backend::kSerial, x, rois);
      const Image g = backward(L, p, kernels::Backend::kSerial, f, label_gradient(f, target), nullptr, true);
      auto px = x.data();
      const auto gx = g.data();
      for (std::size_t i = 0; i < px.size(); ++i) {
        const double moved = gx[i] > 0.0 ? px[i] - tc.adversarial_step : gx[i] < 0.0 ? px[i] + tc.adversarial_step : px[i];
        px[i] = std::clamp(moved, 0.0, 1.0);
      }
    }
    const Forward f = forward(L, p, cfg, kernels::Backend::kSerial, x, rois);
    backward(L, p, kernels::Backend::kSerial, f, label_gradient(f, 0), &grad, false);
  }
};

ToyDetector ToyDetector::train(std::span<const LabeledImage> corpus, std::vector<std::string> category_names,
                               const ToyDetectorConfig& config, const TrainConfig& train_config) {
  if (corpus.empty()) throw InvalidInput("training corpus is empty");
  const int K = static_cast<int>(category_names.size());
  std::vector<bool> seen(static_cast<std::size_t>(std::max(K, 0)), false);
  for (const auto& item : corpus) {
    validate_image(item.image, 16);
    for (const auto& a : item.annotations) {
      if (a.category <= 0 || a.category >= K) {
        throw InvalidInput("annotation category " + std::to_string(a.category) + " outside [1, K)");
      }
      seen[a.category] = true;
    }
  }
  if (std::count(seen.begin(), seen.end(), true) < 2) {
    throw InvalidInput("training corpus must contain at least two object categories");
  }

  ToyDetector det(config, std::move(category_names));
  det.backend_ = kernels::Backend::kSerial;
  std::mt19937_64 rng(train_config.seed);
  ToyDetectorTrainer::train_objectness(det, corpus, train_config, rng);
  ToyDetectorTrainer::train_classifier(det, corpus, train_config, rng);
  det.backend_ = kernels::Backend::kParallel;
  *det.propose_calls_ = 0;
  return det;
}

// ====================================================================== checkpoint

namespace {

constexpr char kMagic[8] = {'C', 'L', 'O', 'A', 'K', 'T', 'O', 'Y'};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  void u32(std::uint32_t v) { out_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void i32(std::int32_t v) { out_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void f64(double v) { out_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void vec(const std::vector<double>& v) {
    u32(static_cast<std::uint32_t>(v.size()));
    out_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string origin) : in_(in), origin_(std::move(origin)) {}
  template <typename T>
  T scalar() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in_) fail("truncated checkpoint");
    return v;
  }
  std::string str() {
    const auto n = scalar<std::uint32_t>();
    if (n > (1u << 16)) fail("implausible string length");
    std::string s(n, '\0');
    in_.read(s.data(), n);
    if (!in_) fail("truncated checkpoint");
    return s;
  }
  std::vector<double> vec(std::size_t expected) {
    const auto n = scalar<std::uint32_t>();
    if (n != expected) fail("parameter block has " + std::to_string(n) + " values, expected " + std::to_string(expected));
    std::vector<double> v(n);
    in_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in_) fail("truncated checkpoint");
    return v;
  }
  [[noreturn]] void fail(const std::string& why) const { throw LoadError(origin_ + ": " + why); }

 private:
  std::istream& in_;
  std::string origin_;
};

}  // namespace

void ToyDetector::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  Writer w(out);
  w.u32(kFormatVersion);
  const auto& c = config_;
  for (int v : {c.conv1_channels, c.conv2_channels, c.roi_grid, c.hidden_units, c.objectness_hidden, c.max_proposals,
                c.min_window, c.max_window, c.window_step, c.window_stride}) {
    w.i32(v);
  }
  w.f64(c.proposal_nms_iou);
  w.f64(c.norm_floor);
  w.f64(c.roi_context);
  w.f64(c.min_objectness);
  w.u32(static_cast<std::uint32_t>(names_.size()));
  for (const auto& n : names_) w.str(n);
  w.vec(params_);
  w.vec(objectness_params_);
  w.vec(feature_shift_);
  w.vec(feature_scale_);
  if (!out) throw LoadError("short write to checkpoint " + path.string());
}

ToyDetector ToyDetector::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  Reader r(in, path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) r.fail("not a toy detector checkpoint");
  const auto version = r.scalar<std::uint32_t>();
  if (version != kFormatVersion) {
    throw VersionError(path.string() + ": checkpoint format version " + std::to_string(version) +
                       " is not supported (expected " + std::to_string(kFormatVersion) + ")");
  }
  ToyDetectorConfig c;
  for (int* v : {&c.conv1_channels, &c.conv2_channels, &c.roi_grid, &c.hidden_units, &c.objectness_hidden,
                 &c.max_proposals, &c.min_window, &c.max_window, &c.window_step, &c.window_stride}) {
    *v = r.scalar<std::int32_t>();
  }
  c.proposal_nms_iou = r.scalar<double>();
  c.norm_floor = r.scalar<double>();
  c.roi_context = r.scalar<double>();
  c.min_objectness = r.scalar<double>();
  const auto count = r.scalar<std::uint32_t>();
  if (count < 3 || count > 1024) r.fail("implausible category count");
  std::vector<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) names.push_back(r.str());
  ToyDetector det(c, std::move(names));
  det.params_ = r.vec(det.params_.size());
  det.objectness_params_ = r.vec(det.objectness_params_.size());
  det.feature_shift_ = r.vec(kObjectnessFeatures);
  det.feature_scale_ = r.vec(kObjectnessFeatures);
  return det;
}

}  // namespace cloak
