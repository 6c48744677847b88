#include <omp.h>

#include <memory>
#include <vector>

#include "cloak/kernels.hpp"
#include "units.hpp"

namespace cloak::kernels {
namespace parallel {

void conv3x3_forward(const ConvShape& shape, std::span<const double> input, std::span<const double> weights,
                     std::span<const double> bias, std::span<double> output) {
#pragma omp parallel for schedule(static)
  for (int co = 0; co < shape.out_channels; ++co) detail::conv_forward_plane(shape, co, input, weights, bias, output);
}

void conv3x3_backward_input(const ConvShape& shape, std::span<const double> grad_output,
                            std::span<const double> weights, std::span<double> grad_input) {
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < shape.in_channels; ++ci) {
    detail::conv_backward_input_plane(shape, ci, grad_output, weights, grad_input);
  }
}

void conv3x3_backward_params(const ConvShape& shape, std::span<const double> input,
                             std::span<const double> grad_output, std::span<double> grad_weights,
                             std::span<double> grad_bias) {
#pragma omp parallel for schedule(static)
  for (int co = 0; co < shape.out_channels; ++co) {
    detail::conv_backward_params_plane(shape, co, input, grad_output, grad_weights, grad_bias);
  }
}

double ssim_mean(const Image& a, const Image& b, const SsimParams& params) {
  const int wy = a.height() - params.window + 1;
  const int wx = a.width() - params.window + 1;
  std::vector<double> partial(static_cast<std::size_t>(Image::kChannels) * wy, 0.0);
  std::vector<std::unique_ptr<detail::SsimTables>> tables(Image::kChannels);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < Image::kChannels; ++c) tables[c] = std::make_unique<detail::SsimTables>(a, b, c);
#pragma omp parallel for collapse(2) schedule(static)
  for (int c = 0; c < Image::kChannels; ++c) {
    for (int y = 0; y < wy; ++y) {
      partial[static_cast<std::size_t>(c) * wy + y] = detail::ssim_row_sum(*tables[c], y, wx, params);
    }
  }
  double total = 0.0;
  for (double v : partial) total += v;
  return total / (static_cast<double>(Image::kChannels) * wy * wx);
}

}  // namespace parallel

void conv3x3_forward(Backend backend, const ConvShape& shape, std::span<const double> input,
                     std::span<const double> weights, std::span<const double> bias, std::span<double> output) {
  if (backend == Backend::kParallel) {
    parallel::conv3x3_forward(shape, input, weights, bias, output);
  } else {
    serial::conv3x3_forward(shape, input, weights, bias, output);
  }
}

void conv3x3_backward_input(Backend backend, const ConvShape& shape, std::span<const double> grad_output,
                            std::span<const double> weights, std::span<double> grad_input) {
  if (backend == Backend::kParallel) {
    parallel::conv3x3_backward_input(shape, grad_output, weights, grad_input);
  } else {
    serial::conv3x3_backward_input(shape, grad_output, weights, grad_input);
  }
}

void conv3x3_backward_params(Backend backend, const ConvShape& shape, std::span<const double> input,
                             std::span<const double> grad_output, std::span<double> grad_weights,
                             std::span<double> grad_bias) {
  if (backend == Backend::kParallel) {
    parallel::conv3x3_backward_params(shape, input, grad_output, grad_weights, grad_bias);
  } else {
    serial::conv3x3_backward_params(shape, input, grad_output, grad_weights, grad_bias);
  }
}

double ssim_mean(Backend backend, const Image& a, const Image& b, const SsimParams& params) {
  return backend == Backend::kParallel ? parallel::ssim_mean(a, b, params) : serial::ssim_mean(a, b, params);
}

}  // namespace cloak::kernels
