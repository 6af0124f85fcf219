#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "rbp/autograd.hpp"

namespace rbp {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

struct ConvDims {
  std::size_t n, c, h, w;
  std::size_t o, kh, kw;
  std::size_t oh, ow;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t pixels() const { return oh * ow; }
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& input, const Tensor<T>& weight, const Conv2dGeometry& g) {
  if (input.rank() != 4 || weight.rank() != 4) {
    throw ShapeError("conv2d expects NCHW input and OIHW weight, got input " + to_string(input.shape()) +
                     " and weight " + to_string(weight.shape()));
  }
  if (input.dim(1) != weight.dim(1)) {
    throw ShapeError("conv2d channel mismatch: input " + to_string(input.shape()) + " vs weight " +
                     to_string(weight.shape()));
  }
  if (g.stride_h == 0 || g.stride_w == 0) throw ShapeError("conv2d stride must be positive");
  ConvDims d{input.dim(0), input.dim(1), input.dim(2), input.dim(3), weight.dim(0), weight.dim(2), weight.dim(3), 0, 0};
  d.oh = conv_out_extent(d.h, d.kh, g.stride_h, g.pad_h);
  d.ow = conv_out_extent(d.w, d.kw, g.stride_w, g.pad_w);
  return d;
}

// Expands sample `n` of `input` into a (C*kH*kW, oH*oW) patch matrix.
template <typename T>
void im2col(const T* image, const ConvDims& d, const Conv2dGeometry& g, T* col) {
  std::size_t row = 0;
  for (std::size_t c = 0; c < d.c; ++c) {
    const T* plane = image + c * d.h * d.w;
    for (std::size_t ki = 0; ki < d.kh; ++ki) {
      for (std::size_t kj = 0; kj < d.kw; ++kj, ++row) {
        T* out = col + row * d.pixels();
        for (std::size_t y = 0; y < d.oh; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * g.stride_h + ki) - static_cast<std::ptrdiff_t>(g.pad_h);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) {
            std::fill(out + y * d.ow, out + (y + 1) * d.ow, T{0});
            continue;
          }
          for (std::size_t x = 0; x < d.ow; ++x) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * g.stride_w + kj) - static_cast<std::ptrdiff_t>(g.pad_w);
            out[y * d.ow + x] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) ? T{0} : plane[iy * d.w + ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_accumulate(const T* col, const ConvDims& d, const Conv2dGeometry& g, T* image) {
  std::size_t row = 0;
  for (std::size_t c = 0; c < d.c; ++c) {
    T* plane = image + c * d.h * d.w;
    for (std::size_t ki = 0; ki < d.kh; ++ki) {
      for (std::size_t kj = 0; kj < d.kw; ++kj, ++row) {
        const T* in = col + row * d.pixels();
        for (std::size_t y = 0; y < d.oh; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * g.stride_h + ki) - static_cast<std::ptrdiff_t>(g.pad_h);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
          for (std::size_t x = 0; x < d.ow; ++x) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * g.stride_w + kj) - static_cast<std::ptrdiff_t>(g.pad_w);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(d.w)) plane[iy * d.w + ix] += in[y * d.ow + x];
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> conv_forward_impl(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias,
                            const Conv2dGeometry& g, const ConvDims& d, std::vector<T>* saved_cols) {
  if (bias && (bias->rank() != 1 || bias->dim(0) != d.o)) {
    throw ShapeError("conv2d bias " + to_string(bias->shape()) + " does not match weight " + to_string(weight.shape()));
  }
  Tensor<T> out({d.n, d.o, d.oh, d.ow});
  std::vector<T> local;
  std::vector<T>& cols = saved_cols ? *saved_cols : local;
  cols.resize(d.n * d.patch() * d.pixels());
  ConstMatMap<T> wmat(weight.raw(), d.o, d.patch());
  for (std::size_t n = 0; n < d.n; ++n) {
    T* col = cols.data() + n * d.patch() * d.pixels();
    im2col(input.raw() + n * d.c * d.h * d.w, d, g, col);
    ConstMatMap<T> cmat(col, d.patch(), d.pixels());
    MatMap<T> omat(out.raw() + n * d.o * d.pixels(), d.o, d.pixels());
    omat.noalias() = wmat * cmat;
    if (bias) {
      for (std::size_t o = 0; o < d.o; ++o) omat.row(o).array() += (*bias)[o];
    }
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias,
                         const Conv2dGeometry& geom) {
  const ConvDims d = conv_dims(input, weight, geom);
  return conv_forward_impl<T>(input, weight, bias, geom, d, nullptr);
}

template <typename T>
Var conv2d(Tape<T>& tape, Var input, Var weight, std::optional<Var> bias, const Conv2dGeometry& geom) {
  const Tensor<T>& x = tape.value(input);
  const Tensor<T>& w = tape.value(weight);
  const ConvDims d = conv_dims(x, w, geom);
  auto cols = std::make_shared<std::vector<T>>();
  Tensor<T> out = conv_forward_impl(x, w, bias ? &tape.value(*bias) : nullptr, geom, d, cols.get());

  auto backward = [input, weight, bias, geom, d, cols](Tape<T>& t, const Tensor<T>& gout) {
    const bool need_x = t.requires_grad(input);
    const bool need_w = t.requires_grad(weight);
    ConstMatMap<T> wmat(t.value(weight).raw(), d.o, d.patch());
    std::vector<T> dcol(need_x ? d.patch() * d.pixels() : 0);
    for (std::size_t n = 0; n < d.n; ++n) {
      ConstMatMap<T> gmat(gout.raw() + n * d.o * d.pixels(), d.o, d.pixels());
      ConstMatMap<T> cmat(cols->data() + n * d.patch() * d.pixels(), d.patch(), d.pixels());
      if (need_w) {
        MatMap<T> gw(t.grad_accumulator(weight).raw(), d.o, d.patch());
        gw.noalias() += gmat * cmat.transpose();
      }
      if (need_x) {
        MatMap<T> dc(dcol.data(), d.patch(), d.pixels());
        dc.noalias() = wmat.transpose() * gmat;
        col2im_accumulate(dcol.data(), d, geom, t.grad_accumulator(input).raw() + n * d.c * d.h * d.w);
      }
      if (bias && t.requires_grad(*bias)) {
        Tensor<T>& gb = t.grad_accumulator(*bias);
        for (std::size_t o = 0; o < d.o; ++o) gb[o] += gmat.row(o).sum();
      }
    }
  };
  if (bias) return tape.record(std::move(out), {input, weight, *bias}, backward);
  return tape.record(std::move(out), {input, weight}, backward);
}

template <typename T>
Var linear(Tape<T>& tape, Var input, Var weight, std::optional<Var> bias) {
  const Tensor<T>& x = tape.value(input);
  const Tensor<T>& w = tape.value(weight);
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1)) {
    throw ShapeError("linear shape mismatch: input " + to_string(x.shape()) + " vs weight " + to_string(w.shape()));
  }
  const std::size_t n = x.dim(0), in = x.dim(1), out_f = w.dim(0);
  Tensor<T> out({n, out_f});
  MatMap<T> omat(out.raw(), n, out_f);
  omat.noalias() = ConstMatMap<T>(x.raw(), n, in) * ConstMatMap<T>(w.raw(), out_f, in).transpose();
  if (bias) {
    const Tensor<T>& b = tape.value(*bias);
    if (b.rank() != 1 || b.dim(0) != out_f) {
      throw ShapeError("linear bias " + to_string(b.shape()) + " does not match weight " + to_string(w.shape()));
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < out_f; ++j) out[i * out_f + j] += b[j];
  }
  auto backward = [input, weight, bias, n, in, out_f](Tape<T>& t, const Tensor<T>& gout) {
    ConstMatMap<T> g(gout.raw(), n, out_f);
    if (t.requires_grad(weight)) {
      MatMap<T>(t.grad_accumulator(weight).raw(), out_f, in).noalias() +=
          g.transpose() * ConstMatMap<T>(t.value(input).raw(), n, in);
    }
    if (t.requires_grad(input)) {
      MatMap<T>(t.grad_accumulator(input).raw(), n, in).noalias() +=
          g * ConstMatMap<T>(t.value(weight).raw(), out_f, in);
    }
    if (bias && t.requires_grad(*bias)) {
      Tensor<T>& gb = t.grad_accumulator(*bias);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < out_f; ++j) gb[j] += gout[i * out_f + j];
    }
  };
  if (bias) return tape.record(std::move(out), {input, weight, *bias}, backward);
  return tape.record(std::move(out), {input, weight}, backward);
}

template <typename T>
Var channel_scale(Tape<T>& tape, Var input, Var scale_var) {
  const Tensor<T>& x = tape.value(input);
  const Tensor<T>& s = tape.value(scale_var);
  if (x.rank() < 2 || s.rank() != 1) {
    throw ShapeError("channel_scale expects (N, C, ...) input and (C) scale, got " + to_string(x.shape()) +
                     " and " + to_string(s.shape()));
  }
  const std::size_t n = x.dim(0), c = s.dim(0);
  if (x.size() % (n * c) != 0 || (x.rank() > 2 && x.dim(1) != c)) {
    throw ShapeError("channel_scale length mismatch: input " + to_string(x.shape()) + " vs scale " +
                     to_string(s.shape()));
  }
  const std::size_t group = x.size() / (n * c);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (i * c + ch) * group;
      for (std::size_t k = 0; k < group; ++k) out[base + k] = x[base + k] * s[ch];
    }
  auto backward = [input, scale_var, n, c, group](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(input);
    const Tensor<T>& sv = t.value(scale_var);
    const bool need_x = t.requires_grad(input);
    const bool need_s = t.requires_grad(scale_var);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t base = (i * c + ch) * group;
        if (need_x) {
          Tensor<T>& gx = t.grad_accumulator(input);
          for (std::size_t k = 0; k < group; ++k) gx[base + k] += g[base + k] * sv[ch];
        }
        if (need_s) {
          T acc{0};
          for (std::size_t k = 0; k < group; ++k) acc += g[base + k] * xv[base + k];
          t.grad_accumulator(scale_var)[ch] += acc;
        }
      }
  };
  return tape.record(std::move(out), {input, scale_var}, backward);
}

template <typename T>
Var relu(Tape<T>& tape, Var input) {
  const Tensor<T>& x = tape.value(input);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
  return tape.record(std::move(out), {input}, [input](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(input);
    Tensor<T>& gx = t.grad_accumulator(input);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > T{0}) gx[i] += g[i];
  });
}

namespace {

struct PoolDims {
  std::size_t n, c, h, w, oh, ow;
};

template <typename T>
PoolDims pool_dims(const Tensor<T>& x, const Pool2dGeometry& g) {
  if (x.rank() != 4) throw ShapeError("pooling expects NCHW input, got " + to_string(x.shape()));
  if (g.kernel == 0 || g.stride == 0) throw ShapeError("pooling kernel and stride must be positive");
  if (g.padding * 2 > g.kernel) throw ShapeError("pooling padding must be at most half the kernel");
  return {x.dim(0), x.dim(1), x.dim(2), x.dim(3), conv_out_extent(x.dim(2), g.kernel, g.stride, g.padding),
          conv_out_extent(x.dim(3), g.kernel, g.stride, g.padding)};
}

}  // namespace

template <typename T>
Var max_pool2d(Tape<T>& tape, Var input, const Pool2dGeometry& geom) {
  const Tensor<T>& x = tape.value(input);
  const PoolDims d = pool_dims(x, geom);
  Tensor<T> out({d.n, d.c, d.oh, d.ow});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  std::size_t idx = 0;
  for (std::size_t p = 0; p < d.n * d.c; ++p) {
    const std::size_t plane = p * d.h * d.w;
    for (std::size_t y = 0; y < d.oh; ++y)
      for (std::size_t xo = 0; xo < d.ow; ++xo, ++idx) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_at = plane;
        for (std::size_t ki = 0; ki < geom.kernel; ++ki) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * geom.stride + ki) - static_cast<std::ptrdiff_t>(geom.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
          for (std::size_t kj = 0; kj < geom.kernel; ++kj) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xo * geom.stride + kj) - static_cast<std::ptrdiff_t>(geom.padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) continue;
            const std::size_t at = plane + static_cast<std::size_t>(iy) * d.w + static_cast<std::size_t>(ix);
            if (x[at] > best) {
              best = x[at];
              best_at = at;
            }
          }
        }
        out[idx] = best;
        (*argmax)[idx] = best_at;
      }
  }
  return tape.record(std::move(out), {input}, [input, argmax](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_accumulator(input);
    for (std::size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
  });
}

template <typename T>
Var avg_pool2d(Tape<T>& tape, Var input, const Pool2dGeometry& geom) {
  const Tensor<T>& x = tape.value(input);
  const PoolDims d = pool_dims(x, geom);
  Tensor<T> out({d.n, d.c, d.oh, d.ow});
  // Visits each window of plane p, calling fn(input_index, 1/count, output_index).
  auto for_windows = [d, geom](std::size_t p, auto&& fn) {
    const std::size_t plane = p * d.h * d.w;
    for (std::size_t y = 0; y < d.oh; ++y)
      for (std::size_t xo = 0; xo < d.ow; ++xo) {
        const std::size_t oi = (p * d.oh + y) * d.ow + xo;
        const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(y * geom.stride) - static_cast<std::ptrdiff_t>(geom.padding);
        const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(xo * geom.stride) - static_cast<std::ptrdiff_t>(geom.padding);
        const std::ptrdiff_t y1 = std::min<std::ptrdiff_t>(y0 + geom.kernel, d.h), x1 = std::min<std::ptrdiff_t>(x0 + geom.kernel, d.w);
        const std::ptrdiff_t ys = std::max<std::ptrdiff_t>(y0, 0), xs = std::max<std::ptrdiff_t>(x0, 0);
        const T inv = T{1} / static_cast<T>((y1 - ys) * (x1 - xs));
        for (std::ptrdiff_t iy = ys; iy < y1; ++iy)
          for (std::ptrdiff_t ix = xs; ix < x1; ++ix) fn(plane + iy * d.w + ix, inv, oi);
      }
  };
  for (std::size_t p = 0; p < d.n * d.c; ++p)
    for_windows(p, [&](std::size_t ii, T inv, std::size_t oi) { out[oi] += x[ii] * inv; });
  return tape.record(std::move(out), {input}, [input, d, for_windows](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_accumulator(input);
    for (std::size_t p = 0; p < d.n * d.c; ++p)
      for_windows(p, [&](std::size_t ii, T inv, std::size_t oi) { gx[ii] += g[oi] * inv; });
  });
}

template <typename T>
Var global_avg_pool(Tape<T>& tape, Var input) {
  const Tensor<T>& x = tape.value(input);
  if (x.rank() != 4) throw ShapeError("global_avg_pool expects NCHW input, got " + to_string(x.shape()));
  const std::size_t planes = x.dim(0) * x.dim(1), area = x.dim(2) * x.dim(3);
  Tensor<T> out({x.dim(0), x.dim(1), 1, 1});
  for (std::size_t p = 0; p < planes; ++p) {
    T acc{0};
    for (std::size_t k = 0; k < area; ++k) acc += x[p * area + k];
    out[p] = acc / static_cast<T>(area);
  }
  return tape.record(std::move(out), {input}, [input, planes, area](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_accumulator(input);
    for (std::size_t p = 0; p < planes; ++p) {
      const T share = g[p] / static_cast<T>(area);
      for (std::size_t k = 0; k < area; ++k) gx[p * area + k] += share;
    }
  });
}

template <typename T>
Var flatten(Tape<T>& tape, Var input) {
  const Tensor<T>& x = tape.value(input);
  const std::size_t n = x.dim(0);
  return tape.record(x.reshaped({n, x.size() / n}), {input}, [input](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_accumulator(input);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& x = tape.value(a);
  const Tensor<T>& y = tape.value(b);
  if (x.shape() != y.shape()) {
    throw ShapeError("add shape mismatch: " + to_string(x.shape()) + " vs " + to_string(y.shape()));
  }
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    for (Var v : {a, b}) {
      if (!t.requires_grad(v)) continue;
      Tensor<T>& gv = t.grad_accumulator(v);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var input, T factor) {
  const Tensor<T>& x = tape.value(input);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * factor;
  return tape.record(std::move(out), {input}, [input, factor](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_accumulator(input);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
  });
}

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& x = tape.value(a);
  const Tensor<T>& y = tape.value(b);
  if (x.shape() != y.shape()) {
    throw ShapeError("mul shape mismatch: " + to_string(x.shape()) + " vs " + to_string(y.shape()));
  }
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(a);
    const Tensor<T>& yv = t.value(b);
    if (t.requires_grad(a)) {
      Tensor<T>& ga = t.grad_accumulator(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * yv[i];
    }
    if (t.requires_grad(b)) {
      Tensor<T>& gb = t.grad_accumulator(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * xv[i];
    }
  });
}

template <typename T>
Var sum(Tape<T>& tape, Var input) {
  const Tensor<T>& x = tape.value(input);
  T acc{0};
  for (T v : x.data()) acc += v;
  return tape.record(Tensor<T>({1}, {acc}), {input}, [input](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_accumulator(input);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
  });
}

template <typename T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, std::span<const int> labels) {
  const Tensor<T>& z = tape.value(logits);
  if (z.rank() != 2 || z.dim(0) != labels.size()) {
    throw ShapeError("softmax_cross_entropy expects (N, K) logits with N labels, got " + to_string(z.shape()) +
                     " and " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = z.dim(0), k = z.dim(1);
  auto probs = std::make_shared<std::vector<T>>(n * k);
  T total{0};
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw ShapeError("label " + std::to_string(y) + " out of range for " + std::to_string(k) + " classes");
    }
    const T* row = z.raw() + i * k;
    const T m = *std::max_element(row, row + k);
    T sum{0};
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(row[j] - m);
    const T log_sum = std::log(sum) + m;
    for (std::size_t j = 0; j < k; ++j) (*probs)[i * k + j] = std::exp(row[j] - log_sum);
    total += log_sum - row[y];
  }
  std::vector<int> labels_copy(labels.begin(), labels.end());
  return tape.record(Tensor<T>({1}, {total / static_cast<T>(n)}), {logits},
                     [logits, probs, labels_copy, n, k](Tape<T>& t, const Tensor<T>& g) {
                       Tensor<T>& gz = t.grad_accumulator(logits);
                       const T s = g[0] / static_cast<T>(n);
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t j = 0; j < k; ++j) {
                           const T onehot = static_cast<int>(j) == labels_copy[i] ? T{1} : T{0};
                           gz[i * k + j] += s * ((*probs)[i * k + j] - onehot);
                         }
                     });
}

#define RBP_INSTANTIATE_OPS(T)                                                                          \
  template Tensor<T> conv2d_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,            \
                                       const Conv2dGeometry&);                                          \
  template Var conv2d<T>(Tape<T>&, Var, Var, std::optional<Var>, const Conv2dGeometry&);                \
  template Var linear<T>(Tape<T>&, Var, Var, std::optional<Var>);                                       \
  template Var channel_scale<T>(Tape<T>&, Var, Var);                                                    \
  template Var relu<T>(Tape<T>&, Var);                                                                  \
  template Var max_pool2d<T>(Tape<T>&, Var, const Pool2dGeometry&);                                     \
  template Var avg_pool2d<T>(Tape<T>&, Var, const Pool2dGeometry&);                                     \
  template Var global_avg_pool<T>(Tape<T>&, Var);                                                       \
  template Var flatten<T>(Tape<T>&, Var);                                                               \
  template Var add<T>(Tape<T>&, Var, Var);                                                              \
  template Var scale<T>(Tape<T>&, Var, T);                                                              \
  template Var mul<T>(Tape<T>&, Var, Var);                                                              \
  template Var sum<T>(Tape<T>&, Var);                                                                   \
  template Var softmax_cross_entropy<T>(Tape<T>&, Var, std::span<const int>);

RBP_INSTANTIATE_OPS(float)
RBP_INSTANTIATE_OPS(double)

}  // namespace rbp
