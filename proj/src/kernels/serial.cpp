#include <vector>

#include "cloak/errors.hpp"
#include "cloak/kernels.hpp"
#include "units.hpp"

namespace cloak::kernels::serial {

void conv3x3_forward(const ConvShape& shape, std::span<const double> input, std::span<const double> weights,
                     std::span<const double> bias, std::span<double> output) {
  for (int co = 0; co < shape.out_channels; ++co) detail::conv_forward_plane(shape, co, input, weights, bias, output);
}

void conv3x3_backward_input(const ConvShape& shape, std::span<const double> grad_output,
                            std::span<const double> weights, std::span<double> grad_input) {
  for (int ci = 0; ci < shape.in_channels; ++ci) {
    detail::conv_backward_input_plane(shape, ci, grad_output, weights, grad_input);
  }
}

void conv3x3_backward_params(const ConvShape& shape, std::span<const double> input,
                             std::span<const double> grad_output, std::span<double> grad_weights,
                             std::span<double> grad_bias) {
  for (int co = 0; co < shape.out_channels; ++co) {
    detail::conv_backward_params_plane(shape, co, input, grad_output, grad_weights, grad_bias);
  }
}

double ssim_mean(const Image& a, const Image& b, const SsimParams& params) {
  const int wy = a.height() - params.window + 1;
  const int wx = a.width() - params.window + 1;
  std::vector<double> partial(static_cast<std::size_t>(Image::kChannels) * wy, 0.0);
  for (int c = 0; c < Image::kChannels; ++c) {
    const detail::SsimTables tables(a, b, c);
    for (int y = 0; y < wy; ++y) partial[static_cast<std::size_t>(c) * wy + y] = detail::ssim_row_sum(tables, y, wx, params);
  }
  double total = 0.0;
  for (double v : partial) total += v;
  return total / (static_cast<double>(Image::kChannels) * wy * wx);
}

}  // namespace cloak::kernels::serial
