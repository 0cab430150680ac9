#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace bhrnet {

// Dense 4-D float32 tensor, extents (batch, channels, height, width), data
// contiguous row-major with width fastest. The only numeric currency of the
// engine; weights reuse the same type with extents
// (out_channels, in_channels/groups, kernel_h, kernel_w).
struct Tensor {
  std::array<int64_t, 4> shape{0, 0, 0, 0};
  std::vector<float> data;

  Tensor() = default;
  Tensor(int64_t n, int64_t c, int64_t h, int64_t w, float fill = 0.0f);

  int64_t batch() const { return shape[0]; }
  int64_t channels() const { return shape[1]; }
  int64_t height() const { return shape[2]; }
  int64_t width() const { return shape[3]; }
  int64_t size() const { return static_cast<int64_t>(data.size()); }

  int64_t index(int64_t n, int64_t c, int64_t y, int64_t x) const {
    return ((n * shape[1] + c) * shape[2] + y) * shape[3] + x;
  }
  float& at(int64_t n, int64_t c, int64_t y, int64_t x) {
    return data[index(n, c, y, x)];
  }
  float at(int64_t n, int64_t c, int64_t y, int64_t x) const {
    return data[index(n, c, y, x)];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  std::string shape_str() const;

  // Throws std::invalid_argument unless data length equals the product of the
  // extents and every extent is non-negative.
  void validate(const char* what) const;
};

struct ConvParams {
  Tensor weights;           // (out, in/groups, kh, kw)
  std::vector<float> bias;  // empty or out entries
  int stride_h = 1, stride_w = 1;
  int pad_h = 0, pad_w = 0;
  int groups = 1;

  int64_t out_channels() const { return weights.shape[0]; }
  int64_t in_channels() const { return weights.shape[1] * groups; }
  int64_t kernel_h() const { return weights.shape[2]; }
  int64_t kernel_w() const { return weights.shape[3]; }
};

struct BatchNormParams {
  std::vector<float> mean, var, scale, shift;  // one entry per channel
  float eps = 1e-5f;

  // Identity statistics: mean 0, var 1, scale 1, shift 0.
  static BatchNormParams identity(int64_t channels, float eps = 1e-5f);
};

// Output extent of a strided convolution along one axis.
int64_t conv_out_extent(int64_t in, int64_t kernel, int64_t stride, int64_t pad);

// Standard 2-D convolution with zero padding and channel groups. Accumulates
// each output value in float32 over (in-channel, ky, kx) in that fixed order;
// results are bit-identical across runs.
Tensor conv2d(const Tensor& input, const ConvParams& p);

// Depthwise convolution: groups must equal the channel count, so every output
// channel depends only on its own input channel.
Tensor depthwise_conv2d(const Tensor& input, const ConvParams& p);

// Adjoint of conv2d for the same parameters: accepts a tensor shaped like the
// conv2d output and scatters back to the input geometry,
// H_out = (H_in - 1) * stride - 2 * pad + kernel.
Tensor conv_transpose2d(const Tensor& input, const ConvParams& p);

// Inference-mode normalization: y = (x - mean) / sqrt(var + eps) * scale + shift.
Tensor batchnorm_infer(const Tensor& input, const BatchNormParams& p);

Tensor relu(const Tensor& input);
Tensor add(const Tensor& a, const Tensor& b);
Tensor upsample_nearest(const Tensor& input, int factor);

}  // namespace bhrnet
