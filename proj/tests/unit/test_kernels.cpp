#include <doctest.h>

#include <random>
#include <vector>

#include "cloak/kernels.hpp"
#include "support/fixtures.hpp"

using namespace cloak;
using namespace cloak::kernels;

namespace {

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = nd(rng);
  return v;
}

// Direct definition of a zero-padded 3x3 convolution.
std::vector<double> naive_conv(const ConvShape& s, const std::vector<double>& in, const std::vector<double>& w,
                               const std::vector<double>& b) {
  std::vector<double> out(s.output_size());
  for (int o = 0; o < s.out_channels; ++o)
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) {
        double acc = b[o];
        for (int i = 0; i < s.in_channels; ++i)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int yy = y + ky - 1, xx = x + kx - 1;
              if (yy < 0 || xx < 0 || yy >= s.height || xx >= s.width) continue;
              acc += w[((o * s.in_channels + i) * 3 + ky) * 3 + kx] * in[(i * s.height + yy) * s.width + xx];
            }
        out[(o * s.height + y) * s.width + x] = acc;
      }
  return out;
}

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("conv forward matches the direct definition") {
    const ConvShape s{3, 5, 11, 13};
    const auto in = random_vector(s.input_size(), 1), w = random_vector(s.weight_size(), 2),
               b = random_vector(s.out_channels, 3);
    std::vector<double> out(s.output_size());
    serial::conv3x3_forward(s, in, w, b, out);
    const auto ref = naive_conv(s, in, w, b);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }

  TEST_CASE("conv backward is the adjoint of forward") {
    // <conv(x), g> = <x, conv^T(g)> + <b, sum g>, and the weight gradient
    // satisfies the same identity with the roles of x and w swapped.
    const ConvShape s{2, 3, 9, 7};
    const auto x = random_vector(s.input_size(), 4), w = random_vector(s.weight_size(), 5),
               g = random_vector(s.output_size(), 6);
    const std::vector<double> zero_bias(s.out_channels, 0.0);
    std::vector<double> y(s.output_size()), gx(s.input_size()), gw(s.weight_size(), 0.0), gb(s.out_channels, 0.0);
    serial::conv3x3_forward(s, x, w, zero_bias, y);
    serial::conv3x3_backward_input(s, g, w, gx);
    serial::conv3x3_backward_params(s, x, g, gw, gb);
    double lhs = 0, rhs_x = 0, rhs_w = 0, sum_g = 0;
    for (std::size_t i = 0; i < y.size(); ++i) lhs += y[i] * g[i];
    for (std::size_t i = 0; i < x.size(); ++i) rhs_x += x[i] * gx[i];
    for (std::size_t i = 0; i < w.size(); ++i) rhs_w += w[i] * gw[i];
    for (double v : g) sum_g += v;
    CHECK(lhs == doctest::Approx(rhs_x).epsilon(1e-10));
    CHECK(lhs == doctest::Approx(rhs_w).epsilon(1e-10));
    double gb_total = 0;
    for (double v : gb) gb_total += v;
    CHECK(gb_total == doctest::Approx(sum_g).epsilon(1e-10));
  }

  TEST_CASE("parallel kernels are bit-identical to the serial reference") {
    for (const ConvShape s : {ConvShape{3, 8, 64, 64}, ConvShape{8, 12, 32, 32}, ConvShape{1, 1, 5, 3}}) {
      const auto in = random_vector(s.input_size(), 7), w = random_vector(s.weight_size(), 8),
                 b = random_vector(s.out_channels, 9), g = random_vector(s.output_size(), 10);
      std::vector<double> o1(s.output_size()), o2(s.output_size());
      serial::conv3x3_forward(s, in, w, b, o1);
      parallel::conv3x3_forward(s, in, w, b, o2);
      CHECK(o1 == o2);
      std::vector<double> gi1(s.input_size()), gi2(s.input_size());
      serial::conv3x3_backward_input(s, g, w, gi1);
      parallel::conv3x3_backward_input(s, g, w, gi2);
      CHECK(gi1 == gi2);
      std::vector<double> gw1(s.weight_size(), 0.5), gw2(s.weight_size(), 0.5), gb1(s.out_channels, 0.25),
          gb2(s.out_channels, 0.25);
      serial::conv3x3_backward_params(s, in, g, gw1, gb1);
      parallel::conv3x3_backward_params(s, in, g, gw2, gb2);
      CHECK(gw1 == gw2);
      CHECK(gb1 == gb2);
    }
    for (int seed = 0; seed < 5; ++seed) {
      const Image a = testing::random_image(40 + seed, 33, 100 + seed), b = testing::random_image(40 + seed, 33, 200 + seed);
      CHECK(serial::ssim_mean(a, b, {}) == parallel::ssim_mean(a, b, {}));
    }
  }
}
