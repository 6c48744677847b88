#pragma once

// Data-parallel inner loops. Every kernel exists twice: a plain serial
// reference and an OpenMP version. The OpenMP versions partition work so that
// each output element is accumulated by one thread in the same order as the
// reference, so both produce bit-identical results.

#include <span>

#include "cloak/image.hpp"

namespace cloak::kernels {

// 3x3 convolution, stride 1, zero padding 1, planar CHW tensors.
// Weight layout is [out][in][ky][kx].
struct ConvShape {
  int in_channels = 0;
  int out_channels = 0;
  int height = 0;
  int width = 0;

  std::size_t input_size() const noexcept {
    return static_cast<std::size_t>(in_channels) * height * width;
  }
  std::size_t output_size() const noexcept {
    return static_cast<std::size_t>(out_channels) * height * width;
  }
  std::size_t weight_size() const noexcept {
    return static_cast<std::size_t>(out_channels) * in_channels * 9;
  }
};

struct SsimParams {
  int window = 8;
  double peak = 1.0;
  double k1 = 0.01;
  double k2 = 0.03;
  bool operator==(const SsimParams&) const = default;
};

enum class Backend { kSerial, kParallel };

namespace serial {

void conv3x3_forward(const ConvShape& shape, std::span<const double> input, std::span<const double> weights,
                     std::span<const double> bias, std::span<double> output);
void conv3x3_backward_input(const ConvShape& shape, std::span<const double> grad_output,
                            std::span<const double> weights, std::span<double> grad_input);
// Accumulates into grad_weights / grad_bias.
void conv3x3_backward_params(const ConvShape& shape, std::span<const double> input,
                             std::span<const double> grad_output, std::span<double> grad_weights,
                             std::span<double> grad_bias);
// Mean local SSIM over all uniform windows (stride 1) and channels.
double ssim_mean(const Image& a, const Image& b, const SsimParams& params);

}  // namespace serial

namespace parallel {

void conv3x3_forward(const ConvShape& shape, std::span<const double> input, std::span<const double> weights,
                     std::span<const double> bias, std::span<double> output);
void conv3x3_backward_input(const ConvShape& shape, std::span<const double> grad_output,
                            std::span<const double> weights, std::span<double> grad_input);
void conv3x3_backward_params(const ConvShape& shape, std::span<const double> input,
                             std::span<const double> grad_output, std::span<double> grad_weights,
                             std::span<double> grad_bias);
double ssim_mean(const Image& a, const Image& b, const SsimParams& params);

}  // namespace parallel

// Dispatch helpers used by the detector and metrics.
void conv3x3_forward(Backend backend, const ConvShape& shape, std::span<const double> input,
                     std::span<const double> weights, std::span<const double> bias, std::span<double> output);
void conv3x3_backward_input(Backend backend, const ConvShape& shape, std::span<const double> grad_output,
                            std::span<const double> weights, std::span<double> grad_input);
void conv3x3_backward_params(Backend backend, const ConvShape& shape, std::span<const double> input,
                             std::span<const double> grad_output, std::span<double> grad_weights,
                             std::span<double> grad_bias);
double ssim_mean(Backend backend, const Image& a, const Image& b, const SsimParams& params);

}  // namespace cloak::kernels
