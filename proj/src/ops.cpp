#include "srlab/ops.hpp"

#include <cmath>
#include <cstring>
#include <memory>
#include <string>

#include "gemm.hpp"

namespace srlab::ops {
namespace {

void require(bool condition, const std::string& message) {
  if (!condition) throw ShapeError(message);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  require(a.dtype() == b.dtype(), std::string(op) + ": dtype mismatch");
}

void check_forward_finite([[maybe_unused]] const Tensor& out,
                          [[maybe_unused]] std::initializer_list<const Tensor*> inputs,
                          [[maybe_unused]] const char* op) {
#ifndef NDEBUG
  if (all_finite(out)) return;
  for (const auto* in : inputs)
    if (in->defined() && !all_finite(*in)) return;
  throw NumericalError(std::string(op) + " produced non-finite values from finite inputs");
#endif
}

std::shared_ptr<Node> make_node(const char* name, std::vector<Tensor> inputs) {
  auto node = std::make_shared<Node>();
  node->name = name;
  node->inputs = std::move(inputs);
  return node;
}

struct ConvGeometry {
  int batch, channels, in_h, in_w, kernel, stride, padding, out_h, out_w;
};

// Range of output columns [lo, hi) whose tap ox * stride + offset lands inside [0, extent).
inline void valid_range(int out_extent, int stride, int offset, int extent, int& lo, int& hi) {
  lo = 0;
  while (lo < out_extent && lo * stride + offset < 0) ++lo;
  hi = out_extent;
  while (hi > lo && (hi - 1) * stride + offset >= extent) --hi;
}

// Column matrix rows are (channel, ky, kx); columns are (n, oy, ox).
template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* col) {
  const std::int64_t plane = static_cast<std::int64_t>(g.out_h) * g.out_w;
  const std::int64_t cols = plane * g.batch;
  for (int c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        T* row = col + ((static_cast<std::int64_t>(c) * g.kernel + ky) * g.kernel + kx) * cols;
        int x_lo, x_hi;
        valid_range(g.out_w, g.stride, kx - g.padding, g.in_w, x_lo, x_hi);
        for (int n = 0; n < g.batch; ++n) {
          const T* src = image + (static_cast<std::int64_t>(n) * g.channels + c) * g.in_h * g.in_w;
          T* dst_plane = row + n * plane;
          for (int oy = 0; oy < g.out_h; ++oy) {
            const int iy = oy * g.stride + ky - g.padding;
            T* dst = dst_plane + static_cast<std::int64_t>(oy) * g.out_w;
            if (iy < 0 || iy >= g.in_h) {
              std::fill(dst, dst + g.out_w, T(0));
              continue;
            }
            const T* src_row = src + static_cast<std::int64_t>(iy) * g.in_w + (kx - g.padding);
            std::fill(dst, dst + x_lo, T(0));
            if (g.stride == 1) {
              std::copy(src_row + x_lo, src_row + x_hi, dst + x_lo);
            } else {
              for (int ox = x_lo; ox < x_hi; ++ox) dst[ox] = src_row[ox * g.stride];
            }
            std::fill(dst + x_hi, dst + g.out_w, T(0));
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* image) {
  const std::int64_t plane = static_cast<std::int64_t>(g.out_h) * g.out_w;
  const std::int64_t cols = plane * g.batch;
  for (int c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        const T* row = col + ((static_cast<std::int64_t>(c) * g.kernel + ky) * g.kernel + kx) * cols;
        int x_lo, x_hi;
        valid_range(g.out_w, g.stride, kx - g.padding, g.in_w, x_lo, x_hi);
        for (int n = 0; n < g.batch; ++n) {
          T* dst = image + (static_cast<std::int64_t>(n) * g.channels + c) * g.in_h * g.in_w;
          const T* src_plane = row + n * plane;
          for (int oy = 0; oy < g.out_h; ++oy) {
            const int iy = oy * g.stride + ky - g.padding;
            if (iy < 0 || iy >= g.in_h) continue;
            const T* src = src_plane + static_cast<std::int64_t>(oy) * g.out_w;
            T* dst_row = dst + static_cast<std::int64_t>(iy) * g.in_w + (kx - g.padding);
            if (g.stride == 1) {
              for (int ox = x_lo; ox < x_hi; ++ox) dst_row[ox] += src[ox];
            } else {
              for (int ox = x_lo; ox < x_hi; ++ox) dst_row[ox * g.stride] += src[ox];
            }
          }
        }
      }
    }
  }
}

// Scratch buffer without value-initialization; every element is written before use.
template <typename T>
struct Scratch {
  explicit Scratch(std::size_t n) : data(new T[n]), size(n) {}
  std::unique_ptr<T[]> data;
  std::size_t size;
  T* get() { return data.get(); }
};

// N x C x P  <->  C x (N * P)
template <typename T>
void batch_to_channel_major(const T* src, int n, int c, std::int64_t plane, T* dst) {
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      std::memcpy(dst + (static_cast<std::int64_t>(ch) * n + i) * plane,
                  src + (static_cast<std::int64_t>(i) * c + ch) * plane, sizeof(T) * plane);
}

template <typename T>
void channel_major_to_batch(const T* src, int n, int c, std::int64_t plane, T* dst) {
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      std::memcpy(dst + (static_cast<std::int64_t>(i) * c + ch) * plane,
                  src + (static_cast<std::int64_t>(ch) * n + i) * plane, sizeof(T) * plane);
}

template <typename T>
void add_channel_bias(T* out, const T* bias, int n, int c, std::int64_t plane) {
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      T* p = out + (static_cast<std::int64_t>(i) * c + ch) * plane;
      for (std::int64_t j = 0; j < plane; ++j) p[j] += bias[ch];
    }
}

template <typename T>
Tensor bias_grad(const Tensor& grad_out) {
  const auto n = static_cast<int>(grad_out.dim(0));
  const auto c = static_cast<int>(grad_out.dim(1));
  const std::int64_t plane = grad_out.dim(2) * grad_out.dim(3);
  Tensor gb = Tensor::zeros({c}, dtype_of<T>());
  auto dst = gb.data<T>();
  auto src = grad_out.data<T>();
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const T* p = src.data() + (static_cast<std::int64_t>(i) * c + ch) * plane;
      T acc = 0;
      for (std::int64_t j = 0; j < plane; ++j) acc += p[j];
      dst[ch] += acc;
    }
  return gb;
}

void check_conv_args(const char* op, const Tensor& input, const Tensor& weight, const Tensor& bias,
                     int stride, int padding, std::int64_t in_channels_axis_of_weight,
                     std::int64_t bias_channels) {
  require(input.rank() == 4, std::string(op) + ": input must be N x C x H x W, got " +
                                 shape_str(input.shape()));
  require(weight.rank() == 4, std::string(op) + ": weight must be rank 4, got " +
                                  shape_str(weight.shape()));
  require(weight.dim(2) == weight.dim(3),
          std::string(op) + ": kernel must be square, got " + shape_str(weight.shape()));
  require(input.dim(1) == in_channels_axis_of_weight,
          std::string(op) + ": input channels " + std::to_string(input.dim(1)) +
              " do not match weight input channels " + std::to_string(in_channels_axis_of_weight));
  require(input.dtype() == weight.dtype(), std::string(op) + ": input/weight dtype mismatch");
  require(stride > 0, std::string(op) + ": stride must be positive");
  require(padding >= 0, std::string(op) + ": padding must be nonnegative");
  if (bias.defined()) {
    require(bias.shape() == Shape{bias_channels},
            std::string(op) + ": bias shape " + shape_str(bias.shape()) + " does not match " +
                std::to_string(bias_channels) + " output channels");
    require(bias.dtype() == input.dtype(), std::string(op) + ": bias dtype mismatch");
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int padding) {
  require(weight.defined() && weight.rank() == 4,
          "conv2d: weight must be Cout x Cin x k x k");
  check_conv_args("conv2d", input, weight, bias, stride, padding, weight.dim(1), weight.dim(0));
  const int k = static_cast<int>(weight.dim(2));
  const int h = static_cast<int>(input.dim(2));
  const int w = static_cast<int>(input.dim(3));
  require(h + 2 * padding >= k && w + 2 * padding >= k,
          "conv2d: input " + std::to_string(h) + "x" + std::to_string(w) + " with padding " +
              std::to_string(padding) + " is smaller than kernel " + std::to_string(k));

  ConvGeometry g{static_cast<int>(input.dim(0)), static_cast<int>(input.dim(1)), h, w, k, stride,
                 padding, (h + 2 * padding - k) / stride + 1, (w + 2 * padding - k) / stride + 1};
  const int cout = static_cast<int>(weight.dim(0));
  const int kdim = g.channels * k * k;
  const std::int64_t plane = static_cast<std::int64_t>(g.out_h) * g.out_w;
  const auto cols = static_cast<int>(plane * g.batch);
  Tensor out = Tensor::zeros({g.batch, cout, g.out_h, g.out_w}, input.dtype());

  auto node = make_node("conv2d", {input, weight, bias});
  const bool record = any_requires_grad({&input, &weight, &bias});

  visit_dtype(input.dtype(), [&]<typename T>() {
    auto col = std::make_shared<Scratch<T>>(static_cast<std::size_t>(kdim) * cols);
    im2col(input.data<T>().data(), g, col->get());
    Scratch<T> out_mat(static_cast<std::size_t>(cout) * cols);
    detail::gemm<T>(false, false, cout, cols, kdim, weight.data<T>().data(), col->get(), out_mat.get());
    channel_major_to_batch(out_mat.get(), g.batch, cout, plane, out.data<T>().data());
    if (bias.defined()) add_channel_bias(out.data<T>().data(), bias.data<T>().data(), g.batch, cout, plane);

    if (!record) return;
    node->backward = [=](const Tensor& grad_out) {
      std::vector<Tensor> grads(3);
      Scratch<T> g_mat(static_cast<std::size_t>(cout) * cols);
      batch_to_channel_major(grad_out.data<T>().data(), g.batch, cout, plane, g_mat.get());
      if (weight.requires_grad()) {
        Tensor gw = Tensor::zeros(weight.shape(), dtype_of<T>());
        detail::gemm<T>(false, true, cout, kdim, cols, g_mat.get(), col->get(), gw.data<T>().data());
        grads[1] = gw;
      }
      if (bias.defined() && bias.requires_grad()) grads[2] = bias_grad<T>(grad_out);
      if (input.requires_grad()) {
        Scratch<T> g_col(static_cast<std::size_t>(kdim) * cols);
        detail::gemm<T>(true, false, kdim, cols, cout, weight.data<T>().data(), g_mat.get(), g_col.get());
        Tensor gx = Tensor::zeros(input.shape(), dtype_of<T>());
        col2im(g_col.get(), g, gx.data<T>().data());
        grads[0] = gx;
      }
      return grads;
    };
  });
  if (record) Tensor::attach(out, node);
  check_forward_finite(out, {&input, &weight, &bias}, "conv2d");
  return out;
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
                        int padding) {
  require(weight.defined() && weight.rank() == 4,
          "conv_transpose2d: weight must be Cin x Cout x k x k");
  check_conv_args("conv_transpose2d", input, weight, bias, stride, padding, weight.dim(0),
                  weight.dim(1));
  const int k = static_cast<int>(weight.dim(2));
  const int h = static_cast<int>(input.dim(2));
  const int w = static_cast<int>(input.dim(3));
  const int out_h = (h - 1) * stride - 2 * padding + k;
  const int out_w = (w - 1) * stride - 2 * padding + k;
  require(out_h >= 1 && out_w >= 1,
          "conv_transpose2d: non-positive output extent for input " + shape_str(input.shape()));

  const int batch = static_cast<int>(input.dim(0));
  const int cin = static_cast<int>(input.dim(1));
  const int cout = static_cast<int>(weight.dim(1));
  // The output plays the role of the conv2d input image, the input the role of its output.
  ConvGeometry g{batch, cout, out_h, out_w, k, stride, padding, h, w};
  const int rows = cout * k * k;
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  const auto cols = static_cast<int>(plane * batch);
  Tensor out = Tensor::zeros({batch, cout, out_h, out_w}, input.dtype());

  auto node = make_node("conv_transpose2d", {input, weight, bias});
  const bool record = any_requires_grad({&input, &weight, &bias});

  visit_dtype(input.dtype(), [&]<typename T>() {
    auto x_mat = std::make_shared<Scratch<T>>(static_cast<std::size_t>(cin) * cols);
    batch_to_channel_major(input.data<T>().data(), batch, cin, plane, x_mat->get());
    Scratch<T> col(static_cast<std::size_t>(rows) * cols);
    detail::gemm<T>(true, false, rows, cols, cin, weight.data<T>().data(), x_mat->get(), col.get());
    col2im(col.get(), g, out.data<T>().data());
    if (bias.defined())
      add_channel_bias(out.data<T>().data(), bias.data<T>().data(), batch, cout,
                       static_cast<std::int64_t>(out_h) * out_w);

    if (!record) return;
    node->backward = [=](const Tensor& grad_out) {
      std::vector<Tensor> grads(3);
      Scratch<T> g_col(static_cast<std::size_t>(rows) * cols);
      im2col(grad_out.data<T>().data(), g, g_col.get());
      if (input.requires_grad()) {
        Scratch<T> gx_mat(static_cast<std::size_t>(cin) * cols);
        detail::gemm<T>(false, false, cin, cols, rows, weight.data<T>().data(), g_col.get(), gx_mat.get());
        Tensor gx = Tensor::zeros(input.shape(), dtype_of<T>());
        channel_major_to_batch(gx_mat.get(), batch, cin, plane, gx.data<T>().data());
        grads[0] = gx;
      }
      if (weight.requires_grad()) {
        Tensor gw = Tensor::zeros(weight.shape(), dtype_of<T>());
        detail::gemm<T>(false, true, cin, rows, cols, x_mat->get(), g_col.get(), gw.data<T>().data());
        grads[1] = gw;
      }
      if (bias.defined() && bias.requires_grad()) grads[2] = bias_grad<T>(grad_out);
      return grads;
    };
  });
  if (record) Tensor::attach(out, node);
  check_forward_finite(out, {&input, &weight, &bias}, "conv_transpose2d");
  return out;
}

namespace {

template <typename T>
void shuffle_kernel(const T* src, T* dst, std::int64_t n, std::int64_t c_out, std::int64_t h,
                    std::int64_t w, int r, bool forward) {
  // Low-res index (n, c*r*r + i*r + j, y, x) <-> high-res index (n, c, y*r + i, x*r + j).
  const std::int64_t hr_w = w * r;
  const std::int64_t hr_h = h * r;
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t c = 0; c < c_out; ++c)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) {
          const std::int64_t lr_c = c * r * r + i * r + j;
          for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
              const std::int64_t lr_idx = ((b * c_out * r * r + lr_c) * h + y) * w + x;
              const std::int64_t hr_idx = ((b * c_out + c) * hr_h + y * r + i) * hr_w + x * r + j;
              if (forward) {
                dst[hr_idx] = src[lr_idx];
              } else {
                dst[lr_idx] = src[hr_idx];
              }
            }
        }
}

}  // namespace

Tensor pixel_shuffle(const Tensor& input, int factor) {
  require(input.rank() == 4, "pixel_shuffle: input must be rank 4, got " + shape_str(input.shape()));
  require(factor > 0, "pixel_shuffle: factor must be positive");
  const std::int64_t rr = static_cast<std::int64_t>(factor) * factor;
  require(input.dim(1) % rr == 0, "pixel_shuffle: channel count " + std::to_string(input.dim(1)) +
                                      " not divisible by " + std::to_string(rr));
  const auto n = input.dim(0), c = input.dim(1) / rr, h = input.dim(2), w = input.dim(3);
  Tensor out = Tensor::zeros({n, c, h * factor, w * factor}, input.dtype());
  visit_dtype(input.dtype(), [&]<typename T>() {
    shuffle_kernel(input.data<T>().data(), out.data<T>().data(), n, c, h, w, factor, true);
  });
  if (any_requires_grad({&input})) {
    auto node = make_node("pixel_shuffle", {input});
    node->backward = [factor](const Tensor& g) {
      return std::vector<Tensor>{pixel_unshuffle(g, factor)};
    };
    Tensor::attach(out, node);
  }
  return out;
}

Tensor pixel_unshuffle(const Tensor& input, int factor) {
  require(input.rank() == 4, "pixel_unshuffle: input must be rank 4, got " + shape_str(input.shape()));
  require(factor > 0, "pixel_unshuffle: factor must be positive");
  require(input.dim(2) % factor == 0 && input.dim(3) % factor == 0,
          "pixel_unshuffle: spatial extent " + shape_str(input.shape()) + " not divisible by " +
              std::to_string(factor));
  const auto n = input.dim(0), c = input.dim(1), h = input.dim(2) / factor, w = input.dim(3) / factor;
  Tensor out = Tensor::zeros({n, c * factor * factor, h, w}, input.dtype());
  visit_dtype(input.dtype(), [&]<typename T>() {
    shuffle_kernel(input.data<T>().data(), out.data<T>().data(), n, c, h, w, factor, false);
  });
  if (any_requires_grad({&input})) {
    auto node = make_node("pixel_unshuffle", {input});
    node->backward = [factor](const Tensor& g) {
      return std::vector<Tensor>{pixel_shuffle(g, factor)};
    };
    Tensor::attach(out, node);
  }
  return out;
}

namespace {

template <typename Fwd>
Tensor map_values(const Tensor& x, Fwd fwd) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  visit_dtype(x.dtype(), [&]<typename T>() {
    auto src = x.data<T>();
    auto dst = out.data<T>();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = fwd(src[i]);
  });
  return out;
}

// g * d(x), with d the local derivative evaluated at the forward input.
template <typename Deriv>
Tensor scale_by_derivative(const Tensor& g, const Tensor& x, Deriv deriv) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  visit_dtype(x.dtype(), [&]<typename T>() {
    auto gs = g.data<T>();
    auto xs = x.data<T>();
    auto dst = out.data<T>();
    for (std::size_t i = 0; i < xs.size(); ++i) dst[i] = gs[i] * deriv(xs[i]);
  });
  return out;
}

}  // namespace

Tensor relu(const Tensor& x) {
  Tensor out = map_values(x, [](auto v) { return v > 0 ? v : decltype(v)(0); });
  if (any_requires_grad({&x})) {
    auto node = make_node("relu", {x});
    node->backward = [x](const Tensor& g) {
      return std::vector<Tensor>{
          scale_by_derivative(g, x, [](auto v) { return v > 0 ? decltype(v)(1) : decltype(v)(0); })};
    };
    Tensor::attach(out, node);
  }
  return out;
}

Tensor abs(const Tensor& x) {
  Tensor out = map_values(x, [](auto v) { return v < 0 ? -v : v; });
  if (any_requires_grad({&x})) {
    auto node = make_node("abs", {x});
    node->backward = [x](const Tensor& g) {
      return std::vector<Tensor>{scale_by_derivative(g, x, [](auto v) {
        using T = decltype(v);
        return v > 0 ? T(1) : (v < 0 ? T(-1) : T(0));
      })};
    };
    Tensor::attach(out, node);
  }
  return out;
}

namespace {

Tensor combine(const Tensor& a, const Tensor& b, double sign_b, const char* op) {
  require_same_shape(a, b, op);
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  visit_dtype(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto dst = out.data<T>();
    if (sign_b > 0) {
      for (std::size_t i = 0; i < x.size(); ++i) dst[i] = x[i] + y[i];
    } else {
      for (std::size_t i = 0; i < x.size(); ++i) dst[i] = x[i] - y[i];
    }
  });
  if (any_requires_grad({&a, &b})) {
    auto node = make_node(op, {a, b});
    node->backward = [sign_b](const Tensor& g) {
      return std::vector<Tensor>{g, sign_b > 0 ? g : mul_scalar(g, -1.0)};
    };
    Tensor::attach(out, node);
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return combine(a, b, 1.0, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return combine(a, b, -1.0, "sub"); }

Tensor mul_scalar(const Tensor& x, double factor) {
  Tensor out = visit_dtype(x.dtype(), [&]<typename T>() {
    const T f = static_cast<T>(factor);
    return map_values(x, [f](T v) { return v * f; });
  });
  if (any_requires_grad({&x})) {
    auto node = make_node("mul_scalar", {x});
    node->backward = [factor](const Tensor& g) { return std::vector<Tensor>{mul_scalar(g, factor)}; };
    Tensor::attach(out, node);
  }
  return out;
}

Tensor mul_learned(const Tensor& x, const Tensor& scale) {
  require(scale.numel() == 1, "mul_learned: scale must have one element, got " +
                                  shape_str(scale.shape()));
  require(scale.dtype() == x.dtype(), "mul_learned: dtype mismatch");
  Tensor out = visit_dtype(x.dtype(), [&]<typename T>() {
    const T s = scale.data<T>()[0];
    return map_values(x, [s](T v) { return v * s; });
  });
  if (any_requires_grad({&x, &scale})) {
    auto node = make_node("mul_learned", {x, scale});
    node->backward = [x, scale](const Tensor& g) {
      std::vector<Tensor> grads(2);
      if (x.requires_grad()) grads[0] = mul_scalar(g, scale.item());
      if (scale.requires_grad()) {
        grads[1] = visit_dtype(x.dtype(), [&]<typename T>() {
          auto gs = g.data<T>();
          auto xs = x.data<T>();
          T acc = 0;
          for (std::size_t i = 0; i < xs.size(); ++i) acc += gs[i] * xs[i];
          Tensor t = Tensor::zeros(scale.shape(), x.dtype());
          t.data<T>()[0] = acc;
          return t;
        });
      }
      return grads;
    };
    Tensor::attach(out, node);
  }
  return out;
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_channels: no inputs");
  const Tensor& first = parts.front();
  require(first.rank() == 4, "concat_channels: inputs must be rank 4");
  std::int64_t channels = 0;
  std::vector<std::int64_t> offsets;
  for (const auto& p : parts) {
    require(p.rank() == 4 && p.dim(0) == first.dim(0) && p.dim(2) == first.dim(2) &&
                p.dim(3) == first.dim(3),
            "concat_channels: non-channel dims differ: " + shape_str(first.shape()) + " vs " +
                shape_str(p.shape()));
    require(p.dtype() == first.dtype(), "concat_channels: dtype mismatch");
    offsets.push_back(channels);
    channels += p.dim(1);
  }
  const auto n = first.dim(0);
  const std::int64_t plane = first.dim(2) * first.dim(3);
  Tensor out = Tensor::zeros({n, channels, first.dim(2), first.dim(3)}, first.dtype());
  visit_dtype(first.dtype(), [&]<typename T>() {
    auto dst = out.data<T>();
    for (std::size_t k = 0; k < parts.size(); ++k) {
      auto src = parts[k].data<T>();
      const auto c = parts[k].dim(1);
      for (std::int64_t b = 0; b < n; ++b)
        std::memcpy(dst.data() + (b * channels + offsets[k]) * plane, src.data() + b * c * plane,
                    sizeof(T) * c * plane);
    }
  });
  bool record = false;
  for (const auto& p : parts) record = record || any_requires_grad({&p});
  if (record) {
    auto node = make_node("concat_channels", parts);
    std::vector<Shape> shapes;
    for (const auto& p : parts) shapes.push_back(p.shape());
    node->backward = [shapes, offsets, channels, n, plane](const Tensor& g) {
      std::vector<Tensor> grads;
      for (std::size_t k = 0; k < shapes.size(); ++k) {
        Tensor part = Tensor::zeros(shapes[k], g.dtype());
        visit_dtype(g.dtype(), [&]<typename T>() {
          auto src = g.data<T>();
          auto dst = part.data<T>();
          const auto c = shapes[k][1];
          for (std::int64_t b = 0; b < n; ++b)
            std::memcpy(dst.data() + b * c * plane, src.data() + (b * channels + offsets[k]) * plane,
                        sizeof(T) * c * plane);
        });
        grads.push_back(part);
      }
      return grads;
    };
    Tensor::attach(out, node);
  }
  return out;
}

namespace {

Tensor reduce_sum(const Tensor& x, double factor, const char* op) {
  Tensor out = visit_dtype(x.dtype(), [&]<typename T>() {
    // Accumulate in double for f32 inputs so the loss is order-stable.
    double acc = 0.0;
    for (T v : x.data<T>()) acc += static_cast<double>(v);
    return Tensor::scalar(acc * factor, x.dtype());
  });
  if (any_requires_grad({&x})) {
    auto node = make_node(op, {x});
    const Shape shape = x.shape();
    node->backward = [shape, factor](const Tensor& g) {
      return std::vector<Tensor>{Tensor::full(shape, g.item() * factor, g.dtype())};
    };
    Tensor::attach(out, node);
  }
  return out;
}

}  // namespace

Tensor mean(const Tensor& x) {
  require(x.numel() > 0, "mean: empty tensor");
  return reduce_sum(x, 1.0 / static_cast<double>(x.numel()), "mean");
}

Tensor sum(const Tensor& x) { return reduce_sum(x, 1.0, "sum"); }

namespace {

constexpr int kSobelX[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
constexpr int kSobelY[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};

}  // namespace

Tensor sobel(const Tensor& x) {
  require(x.rank() == 4, "sobel: input must be N x C x H x W, got " + shape_str(x.shape()));
  const auto planes = x.dim(0) * x.dim(1);
  const auto h = x.dim(2), w = x.dim(3);
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  Tensor gx = Tensor::zeros(x.shape(), x.dtype());
  Tensor gy = Tensor::zeros(x.shape(), x.dtype());
  visit_dtype(x.dtype(), [&]<typename T>() {
    auto src = x.data<T>();
    auto dx = gx.data<T>();
    auto dy = gy.data<T>();
    auto mag = out.data<T>();
    for (std::int64_t p = 0; p < planes; ++p) {
      const T* s = src.data() + p * h * w;
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t xx = 0; xx < w; ++xx) {
          T sx = 0, sy = 0;
          for (int a = -1; a <= 1; ++a) {
            const std::int64_t yy = y + a;
            if (yy < 0 || yy >= h) continue;
            for (int b = -1; b <= 1; ++b) {
              const std::int64_t xb = xx + b;
              if (xb < 0 || xb >= w) continue;
              const T v = s[yy * w + xb];
              sx += kSobelX[a + 1][b + 1] * v;
              sy += kSobelY[a + 1][b + 1] * v;
            }
          }
          const std::int64_t i = p * h * w + y * w + xx;
          dx[i] = sx;
          dy[i] = sy;
          mag[i] = std::sqrt(sx * sx + sy * sy);
        }
    }
  });
  if (any_requires_grad({&x})) {
    auto node = make_node("sobel", {x});
    node->backward = [gx, gy, planes, h, w](const Tensor& g) {
      Tensor gin = Tensor::zeros(g.shape(), g.dtype());
      visit_dtype(g.dtype(), [&]<typename T>() {
        auto gs = g.data<T>();
        auto dx = gx.data<T>();
        auto dy = gy.data<T>();
        auto dst = gin.data<T>();
        for (std::int64_t p = 0; p < planes; ++p)
          for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t xx = 0; xx < w; ++xx) {
              const std::int64_t i = p * h * w + y * w + xx;
              const T mag = std::sqrt(dx[i] * dx[i] + dy[i] * dy[i]);
              // Subgradient 0 where the magnitude vanishes.
              if (mag == T(0)) continue;
              const T cx = gs[i] * dx[i] / mag;
              const T cy = gs[i] * dy[i] / mag;
              for (int a = -1; a <= 1; ++a) {
                const std::int64_t yy = y + a;
                if (yy < 0 || yy >= h) continue;
                for (int b = -1; b <= 1; ++b) {
                  const std::int64_t xb = xx + b;
                  if (xb < 0 || xb >= w) continue;
                  dst[p * h * w + yy * w + xb] += kSobelX[a + 1][b + 1] * cx + kSobelY[a + 1][b + 1] * cy;
                }
              }
            }
      });
      return std::vector<Tensor>{gin};
    };
    Tensor::attach(out, node);
  }
  return out;
}

Tensor stack_batch(const std::vector<Tensor>& items) {
  require(!items.empty(), "stack_batch: no items");
  const Tensor& first = items.front();
  require(first.rank() == 4 && first.dim(0) == 1,
          "stack_batch: items must be 1 x C x H x W, got " + shape_str(first.shape()));
  Shape shape = first.shape();
  shape[0] = static_cast<std::int64_t>(items.size());
  Tensor out = Tensor::zeros(shape, first.dtype());
  const auto per_item = first.numel();
  visit_dtype(first.dtype(), [&]<typename T>() {
    auto dst = out.data<T>();
    for (std::size_t i = 0; i < items.size(); ++i) {
      require(items[i].shape() == first.shape() && items[i].dtype() == first.dtype(),
              "stack_batch: item shapes differ");
      auto src = items[i].data<T>();
      std::memcpy(dst.data() + i * per_item, src.data(), sizeof(T) * per_item);
    }
  });
  return out;
}

Tensor batch_item(const Tensor& batch, std::int64_t index) {
  require(batch.rank() == 4 && index >= 0 && index < batch.dim(0), "batch_item: index out of range");
  Shape shape = batch.shape();
  shape[0] = 1;
  Tensor out = Tensor::zeros(shape, batch.dtype());
  const auto per_item = out.numel();
  visit_dtype(batch.dtype(), [&]<typename T>() {
    std::memcpy(out.data<T>().data(), batch.data<T>().data() + index * per_item, sizeof(T) * per_item);
  });
  return out;
}

}  // namespace srlab::ops
