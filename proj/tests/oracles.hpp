#pragma once

// Reference implementations used only by tests. They are written in a
// deliberately different style from the library kernels: scatter-form loops,
// double-precision accumulation, no shortcuts.

#include <cstdint>
#include <random>
#include <vector>

#include "bhrnet/tensor.hpp"

namespace oracle {

inline int64_t out_extent(int64_t in, int64_t k, int64_t s, int64_t p) {
  return (in + 2 * p - k) / s + 1;
}

// Scatter-form grouped convolution: walk input pixels and distribute each
// one into every output position it contributes to.
inline std::vector<double> conv2d_ref(const bhrnet::Tensor& in,
                                      const bhrnet::ConvParams& p) {
  const int64_t kh = p.kernel_h(), kw = p.kernel_w();
  const int64_t oh = out_extent(in.height(), kh, p.stride_h, p.pad_h);
  const int64_t ow = out_extent(in.width(), kw, p.stride_w, p.pad_w);
  const int64_t in_pg = p.weights.shape[1];
  const int64_t out_pg = p.out_channels() / p.groups;
  std::vector<double> out(static_cast<size_t>(in.batch() * p.out_channels() * oh * ow), 0.0);
  auto oidx = [&](int64_t n, int64_t c, int64_t y, int64_t x) {
    return ((n * p.out_channels() + c) * oh + y) * ow + x;
  };
  for (int64_t n = 0; n < in.batch(); ++n) {
    for (int64_t c = 0; c < in.channels(); ++c) {
      const int64_t g = c / in_pg;
      const int64_t ic = c % in_pg;
      for (int64_t iy = 0; iy < in.height(); ++iy) {
        for (int64_t ix = 0; ix < in.width(); ++ix) {
          const double v = in.at(n, c, iy, ix);
          for (int64_t ocg = 0; ocg < out_pg; ++ocg) {
            const int64_t oc = g * out_pg + ocg;
            for (int64_t ky = 0; ky < kh; ++ky) {
              const int64_t num_y = iy + p.pad_h - ky;
              if (num_y < 0 || num_y % p.stride_h != 0) continue;
              const int64_t oy = num_y / p.stride_h;
              if (oy >= oh) continue;
              for (int64_t kx = 0; kx < kw; ++kx) {
                const int64_t num_x = ix + p.pad_w - kx;
                if (num_x < 0 || num_x % p.stride_w != 0) continue;
                const int64_t ox = num_x / p.stride_w;
                if (ox >= ow) continue;
                out[oidx(n, oc, oy, ox)] +=
                    v * static_cast<double>(p.weights.at(oc, ic, ky, kx));
              }
            }
          }
        }
      }
    }
  }
  if (!p.bias.empty()) {
    for (int64_t n = 0; n < in.batch(); ++n)
      for (int64_t oc = 0; oc < p.out_channels(); ++oc)
        for (int64_t y = 0; y < oh; ++y)
          for (int64_t x = 0; x < ow; ++x) out[oidx(n, oc, y, x)] += p.bias[oc];
  }
  return out;
}

// Gather-form transposed convolution: each output pixel collects every
// (input pixel, tap) pair that lands on it.
inline std::vector<double> conv_transpose2d_ref(const bhrnet::Tensor& in,
                                                const bhrnet::ConvParams& p) {
  const int64_t kh = p.kernel_h(), kw = p.kernel_w();
  const int64_t oh = (in.height() - 1) * p.stride_h - 2 * p.pad_h + kh;
  const int64_t ow = (in.width() - 1) * p.stride_w - 2 * p.pad_w + kw;
  const int64_t in_pg = p.weights.shape[1];
  const int64_t out_pg = p.out_channels() / p.groups;
  const int64_t out_ch = in_pg * p.groups;
  std::vector<double> out(static_cast<size_t>(in.batch() * out_ch * oh * ow), 0.0);
  auto oidx = [&](int64_t n, int64_t c, int64_t y, int64_t x) {
    return ((n * out_ch + c) * oh + y) * ow + x;
  };
  for (int64_t n = 0; n < in.batch(); ++n) {
    for (int64_t co = 0; co < out_ch; ++co) {
      const int64_t g = co / in_pg;
      const int64_t ic = co % in_pg;
      for (int64_t oy = 0; oy < oh; ++oy) {
        for (int64_t ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          for (int64_t cg = 0; cg < out_pg; ++cg) {
            const int64_t c = g * out_pg + cg;
            for (int64_t iy = 0; iy < in.height(); ++iy) {
              const int64_t ky = oy - (iy * p.stride_h - p.pad_h);
              if (ky < 0 || ky >= kh) continue;
              for (int64_t ix = 0; ix < in.width(); ++ix) {
                const int64_t kx = ox - (ix * p.stride_w - p.pad_w);
                if (kx < 0 || kx >= kw) continue;
                acc += static_cast<double>(in.at(n, c, iy, ix)) *
                       static_cast<double>(p.weights.at(c, ic, ky, kx));
              }
            }
          }
          if (!p.bias.empty()) acc += p.bias[co];
          out[oidx(n, co, oy, ox)] = acc;
        }
      }
    }
  }
  return out;
}

inline bhrnet::Tensor random_tensor(std::mt19937& rng, int64_t n, int64_t c,
                                    int64_t h, int64_t w) {
  bhrnet::Tensor t(n, c, h, w);
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  for (float& v : t.data) v = d(rng);
  return t;
}

inline std::vector<float> random_vec(std::mt19937& rng, int64_t n) {
  std::vector<float> v(static_cast<size_t>(n));
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  for (float& x : v) x = d(rng);
  return v;
}

inline double max_abs_diff(const bhrnet::Tensor& got, const std::vector<double>& want) {
  double m = 0.0;
  for (size_t i = 0; i < got.data.size(); ++i) {
    double d = std::abs(static_cast<double>(got.data[i]) - want[i]);
    if (d > m) m = d;
  }
  return m;
}

}  // namespace oracle
