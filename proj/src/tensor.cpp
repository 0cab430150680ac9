#include "bhrnet/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace bhrnet {

namespace {

void ensure_finite(const Tensor& t, const char* op) {
  for (float v : t.data) {
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string(op) + ": non-finite value in output");
    }
  }
}

void check_conv_common(const Tensor& input, const ConvParams& p, const char* op) {
  input.validate(op);
  p.weights.validate(op);
  if (input.batch() < 1 || input.channels() < 1) {
    throw std::invalid_argument(std::string(op) + ": empty input");
  }
  if (p.stride_h < 1 || p.stride_w < 1) {
    throw std::invalid_argument(std::string(op) + ": stride must be positive");
  }
  if (p.pad_h < 0 || p.pad_w < 0) {
    throw std::invalid_argument(std::string(op) + ": negative padding");
  }
  if (p.groups < 1) {
    throw std::invalid_argument(std::string(op) + ": groups must be positive");
  }
  if (p.out_channels() % p.groups != 0) {
    throw std::invalid_argument(std::string(op) + ": out-channels not divisible by groups");
  }
}

// Bias is per produced channel, which differs between conv2d and its adjoint.
void check_bias(const ConvParams& p, int64_t produced, const char* op) {
  if (!p.bias.empty() && static_cast<int64_t>(p.bias.size()) != produced) {
    throw std::invalid_argument(std::string(op) + ": bias length mismatch");
  }
}

}  // namespace

Tensor::Tensor(int64_t n, int64_t c, int64_t h, int64_t w, float fill)
    : shape{n, c, h, w} {
  if (n < 0 || c < 0 || h < 0 || w < 0) {
    throw std::invalid_argument("Tensor: negative extent");
  }
  data.assign(static_cast<size_t>(n * c * h * w), fill);
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << shape[0] << "x" << shape[1] << "x" << shape[2] << "x" << shape[3];
  return os.str();
}

void Tensor::validate(const char* what) const {
  for (int64_t e : shape) {
    if (e < 0) throw std::invalid_argument(std::string(what) + ": negative extent");
  }
  int64_t n = shape[0] * shape[1] * shape[2] * shape[3];
  if (n != size()) {
    throw std::invalid_argument(std::string(what) + ": data length " +
                                std::to_string(size()) + " does not match extents " +
                                shape_str());
  }
}

BatchNormParams BatchNormParams::identity(int64_t channels, float eps) {
  BatchNormParams p;
  p.mean.assign(channels, 0.0f);
  p.var.assign(channels, 1.0f);
  p.scale.assign(channels, 1.0f);
  p.shift.assign(channels, 0.0f);
  p.eps = eps;
  return p;
}

int64_t conv_out_extent(int64_t in, int64_t kernel, int64_t stride, int64_t pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

Tensor conv2d(const Tensor& input, const ConvParams& p) {
  check_conv_common(input, p, "conv2d");
  check_bias(p, p.out_channels(), "conv2d");
  if (p.in_channels() != input.channels()) {
    throw std::invalid_argument("conv2d: weights expect " +
                                std::to_string(p.in_channels()) + " input channels, got " +
                                std::to_string(input.channels()));
  }
  const int64_t kh = p.kernel_h(), kw = p.kernel_w();
  const int64_t oh = conv_out_extent(input.height(), kh, p.stride_h, p.pad_h);
  const int64_t ow = conv_out_extent(input.width(), kw, p.stride_w, p.pad_w);
  if (oh < 1 || ow < 1) {
    throw std::invalid_argument("conv2d: kernel does not fit, output would be " +
                                std::to_string(oh) + "x" + std::to_string(ow));
  }
  const int64_t in_pg = p.weights.shape[1];           // in-channels per group
  const int64_t out_pg = p.out_channels() / p.groups;  // out-channels per group

  Tensor out(input.batch(), p.out_channels(), oh, ow);
  for (int64_t n = 0; n < input.batch(); ++n) {
    for (int64_t oc = 0; oc < p.out_channels(); ++oc) {
      const int64_t g = oc / out_pg;
      for (int64_t oy = 0; oy < oh; ++oy) {
        const int64_t iy0 = oy * p.stride_h - p.pad_h;
        for (int64_t ox = 0; ox < ow; ++ox) {
          const int64_t ix0 = ox * p.stride_w - p.pad_w;
          float acc = 0.0f;
          // Fixed accumulation order (ic, ky, kx); out-of-bounds taps are
          // zero padding and are skipped rather than accumulated.
          for (int64_t ic = 0; ic < in_pg; ++ic) {
            const int64_t c = g * in_pg + ic;
            for (int64_t ky = 0; ky < kh; ++ky) {
              const int64_t iy = iy0 + ky;
              if (iy < 0 || iy >= input.height()) continue;
              const float* in_row = &input.data[input.index(n, c, iy, 0)];
              const float* w_row = &p.weights.data[p.weights.index(oc, ic, ky, 0)];
              for (int64_t kx = 0; kx < kw; ++kx) {
                const int64_t ix = ix0 + kx;
                if (ix < 0 || ix >= input.width()) continue;
                acc += in_row[ix] * w_row[kx];
              }
            }
          }
          if (!p.bias.empty()) acc += p.bias[oc];
          out.at(n, oc, oy, ox) = acc;
        }
      }
    }
  }
  ensure_finite(out, "conv2d");
  return out;
}

Tensor depthwise_conv2d(const Tensor& input, const ConvParams& p) {
  if (p.groups != input.channels()) {
    throw std::invalid_argument("depthwise_conv2d: groups (" + std::to_string(p.groups) +
                                ") must equal channels (" +
                                std::to_string(input.channels()) + ")");
  }
  check_conv_common(input, p, "depthwise_conv2d");
  check_bias(p, p.out_channels(), "depthwise_conv2d");
  if (p.weights.shape[1] != 1 || p.out_channels() != input.channels()) {
    throw std::invalid_argument("depthwise_conv2d: weights must be (C,1,kh,kw)");
  }
  const int64_t kh = p.kernel_h(), kw = p.kernel_w();
  const int64_t oh = conv_out_extent(input.height(), kh, p.stride_h, p.pad_h);
  const int64_t ow = conv_out_extent(input.width(), kw, p.stride_w, p.pad_w);
  if (oh < 1 || ow < 1) {
    throw std::invalid_argument("depthwise_conv2d: kernel does not fit");
  }

  Tensor out(input.batch(), input.channels(), oh, ow);
  for (int64_t n = 0; n < input.batch(); ++n) {
    for (int64_t c = 0; c < input.channels(); ++c) {
      for (int64_t oy = 0; oy < oh; ++oy) {
        const int64_t iy0 = oy * p.stride_h - p.pad_h;
        for (int64_t ox = 0; ox < ow; ++ox) {
          const int64_t ix0 = ox * p.stride_w - p.pad_w;
          float acc = 0.0f;
          for (int64_t ky = 0; ky < kh; ++ky) {
            const int64_t iy = iy0 + ky;
            if (iy < 0 || iy >= input.height()) continue;
            const float* in_row = &input.data[input.index(n, c, iy, 0)];
            const float* w_row = &p.weights.data[p.weights.index(c, 0, ky, 0)];
            for (int64_t kx = 0; kx < kw; ++kx) {
              const int64_t ix = ix0 + kx;
              if (ix < 0 || ix >= input.width()) continue;
              acc += in_row[ix] * w_row[kx];
            }
          }
          if (!p.bias.empty()) acc += p.bias[c];
          out.at(n, c, oy, ox) = acc;
        }
      }
    }
  }
  ensure_finite(out, "depthwise_conv2d");
  return out;
}

Tensor conv_transpose2d(const Tensor& input, const ConvParams& p) {
  check_conv_common(input, p, "conv_transpose2d");
  // Weights keep the forward-conv layout (out, in/groups, kh, kw); the
  // transpose consumes "out" channels and produces "in" channels.
  if (input.channels() != p.out_channels()) {
    throw std::invalid_argument("conv_transpose2d: weights expect " +
                                std::to_string(p.out_channels()) + " input channels, got " +
                                std::to_string(input.channels()));
  }
  const int64_t kh = p.kernel_h(), kw = p.kernel_w();
  const int64_t oh = (input.height() - 1) * p.stride_h - 2 * p.pad_h + kh;
  const int64_t ow = (input.width() - 1) * p.stride_w - 2 * p.pad_w + kw;
  if (oh < 1 || ow < 1) {
    throw std::invalid_argument("conv_transpose2d: output would be " +
                                std::to_string(oh) + "x" + std::to_string(ow));
  }
  const int64_t in_pg = p.weights.shape[1];
  const int64_t out_pg = p.out_channels() / p.groups;
  const int64_t out_channels = in_pg * p.groups;
  check_bias(p, out_channels, "conv_transpose2d");

  Tensor out(input.batch(), out_channels, oh, ow);
  for (int64_t n = 0; n < input.batch(); ++n) {
    for (int64_t c = 0; c < input.channels(); ++c) {
      const int64_t g = c / out_pg;
      for (int64_t iy = 0; iy < input.height(); ++iy) {
        for (int64_t ix = 0; ix < input.width(); ++ix) {
          const float v = input.at(n, c, iy, ix);
          const int64_t oy0 = iy * p.stride_h - p.pad_h;
          const int64_t ox0 = ix * p.stride_w - p.pad_w;
          for (int64_t ic = 0; ic < in_pg; ++ic) {
            const int64_t co = g * in_pg + ic;
            for (int64_t ky = 0; ky < kh; ++ky) {
              const int64_t oy = oy0 + ky;
              if (oy < 0 || oy >= oh) continue;
              float* out_row = &out.data[out.index(n, co, oy, 0)];
              const float* w_row = &p.weights.data[p.weights.index(c, ic, ky, 0)];
              for (int64_t kx = 0; kx < kw; ++kx) {
                const int64_t ox = ox0 + kx;
                if (ox < 0 || ox >= ow) continue;
                out_row[ox] += v * w_row[kx];
              }
            }
          }
        }
      }
    }
  }
  if (!p.bias.empty()) {
    for (int64_t n = 0; n < out.batch(); ++n) {
      for (int64_t c = 0; c < out_channels; ++c) {
        float* base = &out.data[out.index(n, c, 0, 0)];
        for (int64_t i = 0; i < oh * ow; ++i) base[i] += p.bias[c];
      }
    }
  }
  ensure_finite(out, "conv_transpose2d");
  return out;
}

Tensor batchnorm_infer(const Tensor& input, const BatchNormParams& p) {
  input.validate("batchnorm_infer");
  const size_t c = static_cast<size_t>(input.channels());
  if (p.mean.size() != c || p.var.size() != c || p.scale.size() != c ||
      p.shift.size() != c) {
    throw std::invalid_argument("batchnorm_infer: parameter length mismatch");
  }
  for (float v : p.var) {
    if (v + p.eps <= 0.0f) {
      throw std::invalid_argument("batchnorm_infer: var + eps must be positive");
    }
  }
  Tensor out(input.shape[0], input.shape[1], input.shape[2], input.shape[3]);
  const int64_t hw = input.height() * input.width();
  for (int64_t n = 0; n < input.batch(); ++n) {
    for (int64_t ch = 0; ch < input.channels(); ++ch) {
      const float inv = 1.0f / std::sqrt(p.var[ch] + p.eps);
      const float sc = p.scale[ch], sh = p.shift[ch], mu = p.mean[ch];
      const float* in = &input.data[input.index(n, ch, 0, 0)];
      float* o = &out.data[out.index(n, ch, 0, 0)];
      for (int64_t i = 0; i < hw; ++i) {
        o[i] = (in[i] - mu) * inv * sc + sh;
      }
    }
  }
  ensure_finite(out, "batchnorm_infer");
  return out;
}

Tensor relu(const Tensor& input) {
  input.validate("relu");
  Tensor out = input;
  // NaN compares false against 0 and passes through to the finiteness check.
  for (float& v : out.data) v = (v < 0.0f ? 0.0f : v);
  ensure_finite(out, "relu");
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  a.validate("add");
  b.validate("add");
  if (!a.same_shape(b)) {
    throw std::invalid_argument("add: shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
  }
  Tensor out = a;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
  ensure_finite(out, "add");
  return out;
}

Tensor upsample_nearest(const Tensor& input, int factor) {
  input.validate("upsample_nearest");
  if (factor < 1) {
    throw std::invalid_argument("upsample_nearest: factor must be positive");
  }
  Tensor out(input.batch(), input.channels(), input.height() * factor,
             input.width() * factor);
  for (int64_t n = 0; n < input.batch(); ++n) {
    for (int64_t c = 0; c < input.channels(); ++c) {
      for (int64_t y = 0; y < out.height(); ++y) {
        const float* in_row = &input.data[input.index(n, c, y / factor, 0)];
        float* out_row = &out.data[out.index(n, c, y, 0)];
        for (int64_t x = 0; x < out.width(); ++x) {
          out_row[x] = in_row[x / factor];
        }
      }
    }
  }
  ensure_finite(out, "upsample_nearest");
  return out;
}

}  // namespace bhrnet
