#include "adareg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "adareg/error.hpp"

namespace adareg::ad {

namespace {

// Layout of `a` as (outer, channels, inner) for channel-bias broadcasting.
struct ChannelLayout {
  std::size_t outer;
  std::size_t channels;
  std::size_t inner;
};

ChannelLayout channel_layout(const Shape& s) {
  if (s.size() == 2) return {s[0], s[1], 1};
  return {s[0], s[1], s[2] * s[3]};
}

bool is_channel_bias(const Shape& a, const Shape& b) {
  return b.size() == 1 && (a.size() == 2 || a.size() == 4) && a[1] == b[0];
}

void check_binary(const char* op, const Var& a, const Var& b) {
  if (a.shape() == b.shape() || is_channel_bias(a.shape(), b.shape())) return;
  throw ValidationError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

template <typename Fn>
Tensor map_values(const Tensor& a, Fn fn) {
  Tensor out(a.shape());
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = fn(src[i]);
  return out;
}

enum class Binary { add, sub, mul };

Var binary(Binary kind, Var a, Var b, const char* name) {
  check_binary(name, a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  const bool broadcast = av.shape() != bv.shape();
  const ChannelLayout lay = broadcast ? channel_layout(av.shape()) : ChannelLayout{1, av.size(), 1};

  auto apply = [kind](double x, double y) {
    switch (kind) {
      case Binary::add: return x + y;
      case Binary::sub: return x - y;
      case Binary::mul: return x * y;
    }
    return 0.0;
  };

  if (!broadcast) {
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = apply(av[i], bv[i]);
  } else {
    std::size_t i = 0;
    for (std::size_t o = 0; o < lay.outer; ++o)
      for (std::size_t c = 0; c < lay.channels; ++c)
        for (std::size_t k = 0; k < lay.inner; ++k, ++i) out[i] = apply(av[i], bv[c]);
  }

  return a.tape().record(std::move(out), {a, b}, [kind, broadcast, lay](const BackwardContext& ctx) {
    const Tensor& g = ctx.grad;
    const Tensor& av = *ctx.inputs[0];
    const Tensor& bv = *ctx.inputs[1];
    Tensor* ga = ctx.input_grads[0];
    Tensor* gb = ctx.input_grads[1];
    std::size_t i = 0;
    for (std::size_t o = 0; o < lay.outer; ++o) {
      for (std::size_t c = 0; c < lay.channels; ++c) {
        for (std::size_t k = 0; k < lay.inner; ++k, ++i) {
          const std::size_t j = broadcast ? c : i;
          switch (kind) {
            case Binary::add:
              if (ga) (*ga)[i] += g[i];
              if (gb) (*gb)[j] += g[i];
              break;
            case Binary::sub:
              if (ga) (*ga)[i] += g[i];
              if (gb) (*gb)[j] -= g[i];
              break;
            case Binary::mul:
              if (ga) (*ga)[i] += g[i] * bv[j];
              if (gb) (*gb)[j] += g[i] * av[i];
              break;
          }
        }
      }
    }
  });
}

}  // namespace

Var add(Var a, Var b) { return binary(Binary::add, a, b, "add"); }
Var sub(Var a, Var b) { return binary(Binary::sub, a, b, "sub"); }
Var mul(Var a, Var b) { return binary(Binary::mul, a, b, "mul"); }

Var scale(Var a, double factor) {
  return a.tape().record(map_values(a.value(), [factor](double x) { return x * factor; }), {a},
                         [factor](const BackwardContext& ctx) {
                           Tensor& ga = *ctx.input_grads[0];
                           for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += ctx.grad[i] * factor;
                         });
}

Var relu(Var a) {
  Tape& tape = a.tape();
  if (tape.tracking_branches()) {
    for (double x : a.value().data()) tape.note_branch(x > 0.0 ? 1 : 0);
  }
  return tape.record(map_values(a.value(), [](double x) { return x > 0.0 ? x : 0.0; }), {a},
                     [](const BackwardContext& ctx) {
                       const Tensor& x = *ctx.inputs[0];
                       Tensor& ga = *ctx.input_grads[0];
                       for (std::size_t i = 0; i < ga.size(); ++i) {
                         if (x[i] > 0.0) ga[i] += ctx.grad[i];
                       }
                     });
}

Var exp(Var a) {
  return a.tape().record(map_values(a.value(), [](double x) { return std::exp(x); }), {a},
                         [](const BackwardContext& ctx) {
                           Tensor& ga = *ctx.input_grads[0];
                           for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += ctx.grad[i] * ctx.output[i];
                         });
}

Var log(Var a) {
  for (double x : a.value().data()) {
    if (!(x > 0.0)) throw NumericError("log of non-positive value " + std::to_string(x));
  }
  return a.tape().record(map_values(a.value(), [](double x) { return std::log(x); }), {a},
                         [](const BackwardContext& ctx) {
                           const Tensor& x = *ctx.inputs[0];
                           Tensor& ga = *ctx.input_grads[0];
                           for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += ctx.grad[i] / x[i];
                         });
}

Var square(Var a) {
  return a.tape().record(map_values(a.value(), [](double x) { return x * x; }), {a},
                         [](const BackwardContext& ctx) {
                           const Tensor& x = *ctx.inputs[0];
                           Tensor& ga = *ctx.input_grads[0];
                           for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += ctx.grad[i] * 2.0 * x[i];
                         });
}

Var clamp(Var a, double lo, double hi) {
  if (!(lo <= hi)) throw ValidationError("clamp: lo " + std::to_string(lo) + " exceeds hi " + std::to_string(hi));
  Tape& tape = a.tape();
  if (tape.tracking_branches()) {
    for (double x : a.value().data()) tape.note_branch(x < lo ? 0 : (x > hi ? 2 : 1));
  }
  return tape.record(map_values(a.value(), [lo, hi](double x) { return std::clamp(x, lo, hi); }), {a},
                     [lo, hi](const BackwardContext& ctx) {
                       const Tensor& x = *ctx.inputs[0];
                       Tensor& ga = *ctx.input_grads[0];
                       for (std::size_t i = 0; i < ga.size(); ++i) {
                         if (x[i] >= lo && x[i] <= hi) ga[i] += ctx.grad[i];
                       }
                     });
}

Var matmul(Var a, Var b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2) {
    throw ValidationError("matmul needs matrices, got " + to_string(as) + " and " + to_string(bs));
  }
  if (as[1] != bs[0]) {
    throw ValidationError("matmul: inner dimensions differ, " + to_string(as) + " x " + to_string(bs));
  }
  const std::size_t m = as[0], k = as[1], n = bs[1];
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* row = &out[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = &bv[p * n];
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  return a.tape().record(std::move(out), {a, b}, [m, k, n](const BackwardContext& ctx) {
    const Tensor& g = ctx.grad;
    const Tensor& av = *ctx.inputs[0];
    const Tensor& bv = *ctx.inputs[1];
    if (Tensor* ga = ctx.input_grads[0]) {
      // dA = G * B^T
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
          (*ga)[i * k + p] += acc;
        }
    }
    if (Tensor* gb = ctx.input_grads[1]) {
      // dB = A^T * G
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) (*gb)[p * n + j] += aip * g[i * n + j];
        }
    }
  });
}

Var reduce(Reduce op, Var a, std::vector<std::size_t> axes) {
  const Shape& s = a.shape();
  std::vector<bool> reduced(s.size(), false);
  for (std::size_t ax : axes) {
    if (ax >= s.size()) {
      throw ValidationError("reduce: axis " + std::to_string(ax) + " invalid for shape " + to_string(s));
    }
    reduced[ax] = true;
  }
  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (reduced[i]) {
      count *= s[i];
    } else {
      out_shape.push_back(s[i]);
    }
  }
  if (out_shape.empty()) out_shape = {1};

  // Output offset of each input element.
  const std::size_t total = numel(s);
  std::vector<std::size_t> target(total);
  {
    std::vector<std::size_t> idx(s.size(), 0);
    for (std::size_t flat = 0; flat < total; ++flat) {
      std::size_t off = 0;
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (!reduced[i]) off = off * s[i] + idx[i];
      }
      target[flat] = off;
      for (std::size_t i = s.size(); i-- > 0;) {
        if (++idx[i] < s[i]) break;
        idx[i] = 0;
      }
    }
  }

  const double factor = op == Reduce::mean ? 1.0 / static_cast<double>(count) : 1.0;
  Tensor out(out_shape);
  const Tensor& av = a.value();
  for (std::size_t i = 0; i < total; ++i) out[target[i]] += av[i];
  if (op == Reduce::mean) {
    for (double& v : out.data()) v *= factor;
  }
  return a.tape().record(std::move(out), {a}, [target = std::move(target), factor](const BackwardContext& ctx) {
    Tensor& ga = *ctx.input_grads[0];
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += ctx.grad[target[i]] * factor;
  });
}

Var sum(Var a) {
  std::vector<std::size_t> axes(a.shape().size());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  return reduce(Reduce::sum, a, std::move(axes));
}

Var mean(Var a) {
  std::vector<std::size_t> axes(a.shape().size());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  return reduce(Reduce::mean, a, std::move(axes));
}

Var sum_squares(Var a) {
  double acc = 0.0;
  for (double x : a.value().data()) acc += x * x;
  return a.tape().record(Tensor::scalar(acc), {a}, [](const BackwardContext& ctx) {
    const Tensor& x = *ctx.inputs[0];
    Tensor& ga = *ctx.input_grads[0];
    const double g = ctx.grad[0];
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * 2.0 * x[i];
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape().record(std::move(out), {a}, [](const BackwardContext& ctx) {
    Tensor& ga = *ctx.input_grads[0];
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += ctx.grad[i];
  });
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t count) {
  const Shape& s = a.shape();
  if (axis >= s.size()) throw ValidationError("slice: axis out of range for " + to_string(s));
  if (count == 0 || begin + count > s[axis]) {
    throw ValidationError("slice [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                          ") out of range on axis " + std::to_string(axis) + " of " + to_string(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t dim = s[axis];
  Shape out_shape = s;
  out_shape[axis] = count;
  Tensor out(out_shape);
  const Tensor& av = a.value();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(&av[(o * dim + begin) * inner], count * inner, &out[o * count * inner]);
  }
  return a.tape().record(std::move(out), {a}, [outer, inner, dim, begin, count](const BackwardContext& ctx) {
    Tensor& ga = *ctx.input_grads[0];
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < count * inner; ++j) ga[(o * dim + begin) * inner + j] += ctx.grad[o * count * inner + j];
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ValidationError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ValidationError("concat: axis out of range for " + to_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    Shape s = p.shape();
    if (s.size() != first.size()) throw ValidationError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) {
        throw ValidationError("concat: shape mismatch " + to_string(first) + " vs " + to_string(s));
      }
    }
    widths.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t total = out_shape[axis];

  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& v = parts[p].value();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(&v[o * widths[p] * inner], widths[p] * inner, &out[(o * total + offset) * inner]);
    }
    offset += widths[p];
  }
  return parts[0].tape().record(std::move(out), parts, [widths, outer, inner, total](const BackwardContext& ctx) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < widths.size(); ++p) {
      if (Tensor* gp = ctx.input_grads[p]) {
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t j = 0; j < widths[p] * inner; ++j)
            (*gp)[o * widths[p] * inner + j] += ctx.grad[(o * total + offset) * inner + j];
      }
      offset += widths[p];
    }
  });
}

std::size_t conv_output_size(std::size_t in, std::size_t kernel, ConvGeometry g) {
  if (g.stride == 0) throw ValidationError("convolution stride must be positive");
  if (in + 2 * g.pad < kernel) {
    throw ValidationError("convolution output is empty: input " + std::to_string(in) + ", kernel " +
                          std::to_string(kernel) + ", pad " + std::to_string(g.pad));
  }
  return (in + 2 * g.pad - kernel) / g.stride + 1;
}

namespace {

struct ConvDims {
  std::size_t n, c, h, w, o, kh, kw, oh, ow, stride, pad;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t plane() const { return oh * ow; }
};

// Unfolds image n into a (c * kh * kw) x (oh * ow) matrix; out-of-bounds taps are 0.
void im2col(const ConvDims& d, const double* x, double* cols) {
  const auto pad = static_cast<std::ptrdiff_t>(d.pad);
  std::size_t q = 0;
  for (std::size_t c = 0; c < d.c; ++c) {
    const double* xc = x + c * d.h * d.w;
    for (std::size_t kh = 0; kh < d.kh; ++kh) {
      for (std::size_t kw = 0; kw < d.kw; ++kw, ++q) {
        double* row = cols + q * d.plane();
        for (std::size_t oh = 0; oh < d.oh; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * d.stride + kh) - pad;
          double* dst = row + oh * d.ow;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(d.h)) {
            std::fill_n(dst, d.ow, 0.0);
            continue;
          }
          const double* src = xc + static_cast<std::size_t>(ih) * d.w;
          for (std::size_t ow = 0; ow < d.ow; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * d.stride + kw) - pad;
            dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(d.w)) ? 0.0 : src[iw];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds column entries back onto image n.
void col2im_add(const ConvDims& d, const double* cols, double* gx) {
  const auto pad = static_cast<std::ptrdiff_t>(d.pad);
  std::size_t q = 0;
  for (std::size_t c = 0; c < d.c; ++c) {
    double* gc = gx + c * d.h * d.w;
    for (std::size_t kh = 0; kh < d.kh; ++kh) {
      for (std::size_t kw = 0; kw < d.kw; ++kw, ++q) {
        const double* row = cols + q * d.plane();
        for (std::size_t oh = 0; oh < d.oh; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * d.stride + kh) - pad;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(d.h)) continue;
          double* dst = gc + static_cast<std::size_t>(ih) * d.w;
          const double* src = row + oh * d.ow;
          for (std::size_t ow = 0; ow < d.ow; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * d.stride + kw) - pad;
            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(d.w)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

// out[o, :] += sum_q k[o, q] * rows[q, :], four output rows per pass; the
// per-entry accumulation order is q ascending.
void axpy_block(const double* k, const double* rows, double* out, std::size_t n_out, std::size_t n_q,
                std::size_t len) {
  std::size_t o = 0;
  for (; o + 4 <= n_out; o += 4) {
    double* o0 = out + o * len;
    double* o1 = o0 + len;
    double* o2 = o1 + len;
    double* o3 = o2 + len;
    const double* k0 = k + o * n_q;
    for (std::size_t q = 0; q < n_q; ++q) {
      const double w0 = k0[q], w1 = k0[n_q + q], w2 = k0[2 * n_q + q], w3 = k0[3 * n_q + q];
      const double* row = rows + q * len;
      for (std::size_t p = 0; p < len; ++p) {
        const double x = row[p];
        o0[p] += w0 * x;
        o1[p] += w1 * x;
        o2[p] += w2 * x;
        o3[p] += w3 * x;
      }
    }
  }
  for (; o < n_out; ++o) {
    double* op = out + o * len;
    for (std::size_t q = 0; q < n_q; ++q) {
      const double wv = k[o * n_q + q];
      const double* row = rows + q * len;
      for (std::size_t p = 0; p < len; ++p) op[p] += wv * row[p];
    }
  }
}

// Four interleaved partial sums so the compiler can vectorize the reduction.
inline double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

}  // namespace

Var conv2d(Var x, Var kernel, std::optional<Var> bias, ConvGeometry geometry) {
  const Shape& xs = x.shape();
  const Shape& ks = kernel.shape();
  if (xs.size() != 4) throw ValidationError("conv2d input must be NCHW, got " + to_string(xs));
  if (ks.size() != 4) throw ValidationError("conv2d kernel must be (out, in, kh, kw), got " + to_string(ks));
  if (xs[1] != ks[1]) {
    throw ValidationError("conv2d channel mismatch: input " + to_string(xs) + ", kernel " + to_string(ks));
  }
  if (bias && bias->shape() != Shape{ks[0]}) {
    throw ValidationError("conv2d bias shape " + to_string(bias->shape()) + " does not match kernel " + to_string(ks));
  }
  ConvDims d{xs[0], xs[1], xs[2], xs[3], ks[0], ks[2], ks[3], 0, 0, geometry.stride, geometry.pad};
  d.oh = conv_output_size(d.h, d.kh, geometry);
  d.ow = conv_output_size(d.w, d.kw, geometry);

  const Tensor& xv = x.value();
  const Tensor& kv = kernel.value();
  const std::size_t plane = d.plane(), patch = d.patch();
  auto cols = std::make_shared<std::vector<double>>(d.n * patch * plane);
  Tensor out({d.n, d.o, d.oh, d.ow});
  for (std::size_t n = 0; n < d.n; ++n) {
    double* cn = cols->data() + n * patch * plane;
    im2col(d, &xv[n * d.c * d.h * d.w], cn);
    double* on = &out[n * d.o * plane];
    for (std::size_t o = 0; o < d.o; ++o) std::fill_n(on + o * plane, plane, bias ? bias->value()[o] : 0.0);
    axpy_block(kv.data().data(), cn, on, d.o, patch, plane);
  }

  std::vector<Var> inputs{x, kernel};
  if (bias) inputs.push_back(*bias);
  return x.tape().record(std::move(out), inputs, [d, cols, has_bias = bias.has_value()](const BackwardContext& ctx) {
    const Tensor& g = ctx.grad;
    const Tensor& kv = *ctx.inputs[1];
    Tensor* gx = ctx.input_grads[0];
    Tensor* gk = ctx.input_grads[1];
    Tensor* gb = has_bias ? ctx.input_grads[2] : nullptr;
    const std::size_t plane = d.plane(), patch = d.patch();

    if (gb) {
      // (n, h, w) order per channel; batch norm relies on it
      for (std::size_t o = 0; o < d.o; ++o) {
        double acc = 0.0;
        for (std::size_t n = 0; n < d.n; ++n) {
          const double* gp = &g[(n * d.o + o) * plane];
          for (std::size_t i = 0; i < plane; ++i) acc += gp[i];
        }
        (*gb)[o] += acc;
      }
    }
    std::vector<double> gcols(gx ? patch * plane : 0);
    for (std::size_t n = 0; n < d.n; ++n) {
      const double* cn = cols->data() + n * patch * plane;
      const double* gn = &g[n * d.o * plane];
      if (gk) {
        for (std::size_t o = 0; o < d.o; ++o) {
          double* gko = &(*gk)[o * patch];
          for (std::size_t q = 0; q < patch; ++q) gko[q] += dot(gn + o * plane, cn + q * plane, plane);
        }
      }
      if (gx) {
        std::fill(gcols.begin(), gcols.end(), 0.0);
        for (std::size_t o = 0; o < d.o; ++o) {
          const double* go = gn + o * plane;
          const double* ko = &kv[o * patch];
          std::size_t q = 0;
          for (; q + 4 <= patch; q += 4) {
            const double w0 = ko[q], w1 = ko[q + 1], w2 = ko[q + 2], w3 = ko[q + 3];
            double* r0 = gcols.data() + q * plane;
            double* r1 = r0 + plane;
            double* r2 = r1 + plane;
            double* r3 = r2 + plane;
            for (std::size_t p = 0; p < plane; ++p) {
              const double gv = go[p];
              r0[p] += w0 * gv;
              r1[p] += w1 * gv;
              r2[p] += w2 * gv;
              r3[p] += w3 * gv;
            }
          }
          for (; q < patch; ++q) {
            const double wv = ko[q];
            double* row = gcols.data() + q * plane;
            for (std::size_t p = 0; p < plane; ++p) row[p] += wv * go[p];
          }
        }
        col2im_add(d, gcols.data(), &(*gx)[n * d.c * d.h * d.w]);
      }
    }
  });
}

Var avg_pool2d(Var x, std::size_t k) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ValidationError("avg_pool2d input must be NCHW, got " + to_string(s));
  if (k == 0 || s[2] % k != 0 || s[3] % k != 0) {
    throw ValidationError("avg_pool2d: window " + std::to_string(k) + " does not tile " + to_string(s));
  }
  const std::size_t nc = s[0] * s[1], h = s[2], w = s[3], oh = h / k, ow = w / k;
  const double inv = 1.0 / static_cast<double>(k * k);
  const Tensor& xv = x.value();
  Tensor out({s[0], s[1], oh, ow});
  for (std::size_t p = 0; p < nc; ++p)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double acc = 0.0;
        for (std::size_t a = 0; a < k; ++a)
          for (std::size_t b = 0; b < k; ++b) acc += xv[(p * h + i * k + a) * w + j * k + b];
        out[(p * oh + i) * ow + j] = acc * inv;
      }
  return x.tape().record(std::move(out), {x}, [nc, h, w, oh, ow, k, inv](const BackwardContext& ctx) {
    Tensor& gx = *ctx.input_grads[0];
    for (std::size_t p = 0; p < nc; ++p)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          const double gv = ctx.grad[(p * oh + i) * ow + j] * inv;
          for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = 0; b < k; ++b) gx[(p * h + i * k + a) * w + j * k + b] += gv;
        }
  });
}

namespace {

void check_norm_shapes(const char* op, const Var& x, const Var& gamma, const Var& beta) {
  const Shape& s = x.shape();
  if (s.size() != 2 && s.size() != 4) throw ValidationError(std::string(op) + " expects B x C or NCHW, got " + to_string(s));
  const Shape want{s[1]};
  if (gamma.shape() != want || beta.shape() != want) {
    throw ValidationError(std::string(op) + ": gamma/beta shapes " + to_string(gamma.shape()) + ", " +
                          to_string(beta.shape()) + " do not match input " + to_string(s));
  }
}

}  // namespace

Var batch_norm_train(Var x, Var gamma, Var beta, double epsilon, BatchMoments* moments) {
  check_norm_shapes("batch_norm_train", x, gamma, beta);
  const ChannelLayout lay = channel_layout(x.shape());
  const std::size_t count = lay.outer * lay.inner;
  if (count < 2) {
    throw ValidationError("batch_norm_train needs at least 2 values per channel, got " + std::to_string(count));
  }
  const Tensor& xv = x.value();
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  const std::size_t C = lay.channels;
  const double inv_count = 1.0 / static_cast<double>(count);

  std::vector<double> mu(C, 0.0), var(C, 0.0), inv_std(C);
  for (std::size_t n = 0; n < lay.outer; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const double* p = &xv[(n * C + c) * lay.inner];
      for (std::size_t i = 0; i < lay.inner; ++i) mu[c] += p[i];
    }
  for (double& m : mu) m *= inv_count;
  for (std::size_t n = 0; n < lay.outer; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const double* p = &xv[(n * C + c) * lay.inner];
      for (std::size_t i = 0; i < lay.inner; ++i) var[c] += (p[i] - mu[c]) * (p[i] - mu[c]);
    }
  for (std::size_t c = 0; c < C; ++c) {
    var[c] *= inv_count;
    inv_std[c] = 1.0 / std::sqrt(var[c] + epsilon);
  }

  Tensor out(xv.shape());
  for (std::size_t n = 0; n < lay.outer; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (n * C + c) * lay.inner;
      for (std::size_t i = 0; i < lay.inner; ++i) {
        out[base + i] = gv[c] * ((xv[base + i] - mu[c]) * inv_std[c]) + bv[c];
      }
    }
  if (moments) {
    moments->mean = Tensor({C}, mu);
    moments->var = Tensor({C}, var);
  }

  return x.tape().record(std::move(out), {x, gamma, beta}, [lay, mu, inv_std](const BackwardContext& ctx) {
    const Tensor& g = ctx.grad;
    const Tensor& xv = *ctx.inputs[0];
    const Tensor& gv = *ctx.inputs[1];
    Tensor* gx = ctx.input_grads[0];
    Tensor* gg = ctx.input_grads[1];
    Tensor* gb = ctx.input_grads[2];
    const std::size_t C = lay.channels;
    const std::size_t count = lay.outer * lay.inner;

    std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
    for (std::size_t n = 0; n < lay.outer; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t base = (n * C + c) * lay.inner;
        for (std::size_t i = 0; i < lay.inner; ++i) {
          const double xhat = (xv[base + i] - mu[c]) * inv_std[c];
          sum_g[c] += g[base + i];
          sum_gx[c] += g[base + i] * xhat;
        }
      }
    for (std::size_t c = 0; c < C; ++c) {
      if (gg) (*gg)[c] += sum_gx[c];
      if (gb) (*gb)[c] += sum_g[c];
    }
    if (!gx) return;

    const double m = static_cast<double>(count);
    std::vector<double> dx(count);
    for (std::size_t c = 0; c < C; ++c) {
      const double k = gv[c] * inv_std[c] / m;
      std::size_t j = 0;
      for (std::size_t n = 0; n < lay.outer; ++n) {
        const std::size_t base = (n * C + c) * lay.inner;
        for (std::size_t i = 0; i < lay.inner; ++i, ++j) {
          const double xhat = (xv[base + i] - mu[c]) * inv_std[c];
          dx[j] = k * (m * g[base + i] - sum_g[c] - xhat * sum_gx[c]);
        }
      }
      // Make the sequential channel sum exactly zero.
      double running = 0.0;
      for (std::size_t t = 0; t + 1 < count; ++t) running += dx[t];
      dx[count - 1] = -running;
      j = 0;
      for (std::size_t n = 0; n < lay.outer; ++n) {
        const std::size_t base = (n * C + c) * lay.inner;
        for (std::size_t i = 0; i < lay.inner; ++i, ++j) (*gx)[base + i] += dx[j];
      }
    }
  });
}

Var batch_norm_infer(Var x, Var gamma, Var beta, const Tensor& running_mean, const Tensor& running_var,
                     double epsilon) {
  check_norm_shapes("batch_norm_infer", x, gamma, beta);
  const ChannelLayout lay = channel_layout(x.shape());
  const std::size_t C = lay.channels;
  if (running_mean.shape() != Shape{C} || running_var.shape() != Shape{C}) {
    throw ValidationError("batch_norm_infer: running statistics do not match " + std::to_string(C) + " channels");
  }
  std::vector<double> mu(running_mean.data().begin(), running_mean.data().end());
  std::vector<double> inv_std(C);
  for (std::size_t c = 0; c < C; ++c) inv_std[c] = 1.0 / std::sqrt(running_var[c] + epsilon);

  const Tensor& xv = x.value();
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor out(xv.shape());
  for (std::size_t n = 0; n < lay.outer; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (n * C + c) * lay.inner;
      for (std::size_t i = 0; i < lay.inner; ++i) {
        out[base + i] = gv[c] * ((xv[base + i] - mu[c]) * inv_std[c]) + bv[c];
      }
    }
  return x.tape().record(std::move(out), {x, gamma, beta}, [lay, mu, inv_std](const BackwardContext& ctx) {
    const Tensor& g = ctx.grad;
    const Tensor& xv = *ctx.inputs[0];
    const Tensor& gv = *ctx.inputs[1];
    const std::size_t C = lay.channels;
    for (std::size_t n = 0; n < lay.outer; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t base = (n * C + c) * lay.inner;
        for (std::size_t i = 0; i < lay.inner; ++i) {
          const double xhat = (xv[base + i] - mu[c]) * inv_std[c];
          if (ctx.input_grads[0]) (*ctx.input_grads[0])[base + i] += g[base + i] * gv[c] * inv_std[c];
          if (ctx.input_grads[1]) (*ctx.input_grads[1])[c] += g[base + i] * xhat;
          if (ctx.input_grads[2]) (*ctx.input_grads[2])[c] += g[base + i];
        }
      }
  });
}

}  // namespace adareg::ad
