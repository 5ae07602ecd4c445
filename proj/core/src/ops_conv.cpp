#include <algorithm>
#include <vector>

#include "blas.hpp"
#include "dida/ops.hpp"

namespace dida {

namespace {

struct ConvGeom {
  int64_t n, cin, h, w;
  int64_t cout, kh, kw;
  int64_t ho, wo;
  int stride, pad, dil;
};

int64_t out_extent(int64_t in, int64_t k, int stride, int pad, int dil) {
  return (in + 2 * pad - static_cast<int64_t>(dil) * (k - 1) - 1) / stride + 1;
}

ConvGeom conv_geometry(const Shape& xs, const Shape& ws, const ConvOpts& o) {
  if (xs.size() != 4) throw ShapeError("conv2d: input must be (N,C,H,W)");
  if (ws.size() != 4) throw ShapeError("conv2d: weight must be (Cout,Cin,kh,kw)");
  if (o.stride < 1 || o.pad < 0 || o.dilation < 1)
    throw ValueError("conv2d: stride >= 1, pad >= 0, dilation >= 1 required");
  if (xs[1] != ws[1])
    throw ShapeError("conv2d: input channels " + std::to_string(xs[1]) +
                     " do not match weight channels " + std::to_string(ws[1]));
  ConvGeom g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], 0, 0,
             o.stride,  o.pad,  o.dilation};
  g.ho = out_extent(g.h, g.kh, o.stride, o.pad, o.dilation);
  g.wo = out_extent(g.w, g.kw, o.stride, o.pad, o.dilation);
  if (g.ho < 1 || g.wo < 1)
    throw ShapeError("conv2d: kernel does not fit input " + shape_str(xs));
  return g;
}

// col is (cin*kh*kw) x (ho*wo), row major.
template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  int64_t plane = g.h * g.w;
  int64_t ncols = g.ho * g.wo;
  for (int64_t c = 0; c < g.cin; ++c) {
    const T* xc = x + c * plane;
    for (int64_t ki = 0; ki < g.kh; ++ki) {
      for (int64_t kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((c * g.kh + ki) * g.kw + kj) * ncols;
        for (int64_t oy = 0; oy < g.ho; ++oy) {
          int64_t iy = oy * g.stride - g.pad + ki * g.dil;
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* src = xc + iy * g.w;
          for (int64_t ox = 0; ox < g.wo; ++ox) {
            int64_t ix = ox * g.stride - g.pad + kj * g.dil;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

// Scatter-add of a col matrix back onto the padded input layout.
template <typename T>
void col2im_add(const T* col, const ConvGeom& g, T* dx) {
  int64_t plane = g.h * g.w;
  int64_t ncols = g.ho * g.wo;
  for (int64_t c = 0; c < g.cin; ++c) {
    T* xc = dx + c * plane;
    for (int64_t ki = 0; ki < g.kh; ++ki) {
      for (int64_t kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((c * g.kh + ki) * g.kw + kj) * ncols;
        for (int64_t oy = 0; oy < g.ho; ++oy) {
          int64_t iy = oy * g.stride - g.pad + ki * g.dil;
          if (iy < 0 || iy >= g.h) continue;
          const T* src = row + oy * g.wo;
          T* dst = xc + iy * g.w;
          for (int64_t ox = 0; ox < g.wo; ++ox) {
            int64_t ix = ox * g.stride - g.pad + kj * g.dil;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 const ConvOpts& opts) {
  if (!x.defined() || !w.defined())
    throw ValueError("conv2d: undefined input");
  ConvGeom g = conv_geometry(x.shape(), w.shape(), opts);
  if (b.defined() && (b.ndim() != 1 || b.dim(0) != g.cout))
    throw ShapeError("conv2d: bias must be (Cout)");

  int64_t ckk = g.cin * g.kh * g.kw;
  int64_t ncols = g.ho * g.wo;
  int64_t in_plane = g.cin * g.h * g.w;
  int64_t out_plane = g.cout * ncols;

  std::vector<T> out(static_cast<size_t>(g.n * out_plane));
  std::vector<T> col(static_cast<size_t>(ckk * ncols));
  const T* xd = x.data().data();
  const T* wd = w.data().data();
  for (int64_t n = 0; n < g.n; ++n) {
    im2col(xd + n * in_plane, g, col.data());
    detail::gemm(false, false, g.cout, ncols, ckk, T(1), wd, ckk, col.data(),
                 ncols, T(0), out.data() + n * out_plane, ncols);
  }
  if (b.defined()) {
    const T* bd = b.data().data();
    for (int64_t n = 0; n < g.n; ++n)
      for (int64_t c = 0; c < g.cout; ++c) {
        T* dst = out.data() + n * out_plane + c * ncols;
        for (int64_t i = 0; i < ncols; ++i) dst[i] += bd[c];
      }
  }

  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.defined() ? b.node() : nullptr;
  std::vector<Tensor<T>> parents = b.defined()
                                       ? std::vector<Tensor<T>>{x, w, b}
                                       : std::vector<Tensor<T>>{x, w};
  return detail::make_result<T>(
      Shape{g.n, g.cout, g.ho, g.wo}, std::move(out), std::move(parents),
      [xn, wn, bn, g, ckk, ncols, in_plane, out_plane](detail::Node<T>& self) {
        const T* xd = xn->value.data();
        const T* wd = wn->value.data();
        const T* gy = self.grad.data();
        std::vector<T> col(static_cast<size_t>(ckk * ncols));
        std::vector<T> dcol;
        if (wn->requires_grad) wn->ensure_grad();
        if (xn->requires_grad) {
          xn->ensure_grad();
          dcol.resize(static_cast<size_t>(ckk * ncols));
        }
        for (int64_t n = 0; n < g.n; ++n) {
          const T* gyn = gy + n * out_plane;
          if (wn->requires_grad || xn->requires_grad)
            im2col(xd + n * in_plane, g, col.data());
          if (wn->requires_grad)
            detail::gemm(false, true, g.cout, ckk, ncols, T(1), gyn, ncols,
                         col.data(), ncols, T(1), wn->grad.data(), ckk);
          if (xn->requires_grad) {
            detail::gemm(true, false, ckk, ncols, g.cout, T(1), wd, ckk, gyn,
                         ncols, T(0), dcol.data(), ncols);
            col2im_add(dcol.data(), g, xn->grad.data() + n * in_plane);
          }
        }
        if (bn && bn->requires_grad) {
          bn->ensure_grad();
          for (int64_t n = 0; n < g.n; ++n)
            for (int64_t c = 0; c < g.cout; ++c) {
              const T* src = gy + n * out_plane + c * ncols;
              T acc = T(0);
              for (int64_t i = 0; i < ncols; ++i) acc += src[i];
              bn->grad[c] += acc;
            }
        }
      });
}

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& kernels,
                           int pad, int dilation) {
  if (!x.defined() || !kernels.defined())
    throw ValueError("depthwise_conv2d: undefined input");
  if (x.ndim() != 4 || kernels.ndim() != 4)
    throw ShapeError("depthwise_conv2d: wants x (N,C,H,W), kernels (N,C,kh,kw)");
  if (pad < 0 || dilation < 1)
    throw ValueError("depthwise_conv2d: pad >= 0, dilation >= 1 required");
  int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  int64_t kh = kernels.dim(2), kw = kernels.dim(3);
  if (kernels.dim(0) != n || kernels.dim(1) != c)
    throw ShapeError("depthwise_conv2d: kernel bank " +
                     shape_str(kernels.shape()) + " does not match input " +
                     shape_str(x.shape()));
  int64_t ho = out_extent(h, kh, 1, pad, dilation);
  int64_t wo = out_extent(w, kw, 1, pad, dilation);
  if (ho < 1 || wo < 1)
    throw ShapeError("depthwise_conv2d: kernel does not fit input");

  std::vector<T> out(static_cast<size_t>(n * c * ho * wo), T(0));
  const T* xd = x.data().data();
  const T* kd = kernels.data().data();
  for (int64_t nc = 0; nc < n * c; ++nc) {
    const T* xp = xd + nc * h * w;
    const T* kp = kd + nc * kh * kw;
    T* op = out.data() + nc * ho * wo;
    for (int64_t oy = 0; oy < ho; ++oy)
      for (int64_t ox = 0; ox < wo; ++ox) {
        T acc = T(0);
        for (int64_t ki = 0; ki < kh; ++ki) {
          int64_t iy = oy - pad + ki * dilation;
          if (iy < 0 || iy >= h) continue;
          for (int64_t kj = 0; kj < kw; ++kj) {
            int64_t ix = ox - pad + kj * dilation;
            if (ix < 0 || ix >= w) continue;
            acc += xp[iy * w + ix] * kp[ki * kw + kj];
          }
        }
        op[oy * wo + ox] = acc;
      }
  }

  auto xn = x.node();
  auto kn = kernels.node();
  return detail::make_result<T>(
      Shape{n, c, ho, wo}, std::move(out), {x, kernels},
      [xn, kn, n, c, h, w, kh, kw, ho, wo, pad,
       dilation](detail::Node<T>& self) {
        const T* xd = xn->value.data();
        const T* kd = kn->value.data();
        const T* gy = self.grad.data();
        if (xn->requires_grad) xn->ensure_grad();
        if (kn->requires_grad) kn->ensure_grad();
        for (int64_t nc = 0; nc < n * c; ++nc) {
          const T* xp = xd + nc * h * w;
          const T* kp = kd + nc * kh * kw;
          const T* gp = gy + nc * ho * wo;
          T* dxp = xn->requires_grad ? xn->grad.data() + nc * h * w : nullptr;
          T* dkp = kn->requires_grad ? kn->grad.data() + nc * kh * kw : nullptr;
          for (int64_t oy = 0; oy < ho; ++oy)
            for (int64_t ox = 0; ox < wo; ++ox) {
              T g = gp[oy * wo + ox];
              if (g == T(0)) continue;
              for (int64_t ki = 0; ki < kh; ++ki) {
                int64_t iy = oy - pad + ki * dilation;
                if (iy < 0 || iy >= h) continue;
                for (int64_t kj = 0; kj < kw; ++kj) {
                  int64_t ix = ox - pad + kj * dilation;
                  if (ix < 0 || ix >= w) continue;
                  if (dkp) dkp[ki * kw + kj] += g * xp[iy * w + ix];
                  if (dxp) dxp[iy * w + ix] += g * kp[ki * kw + kj];
                }
              }
            }
        }
      });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (!x.defined() || !w.defined())
    throw ValueError("linear: undefined input");
  if (x.ndim() != 2 || w.ndim() != 2)
    throw ShapeError("linear: wants x (N,Cin), w (Cout,Cin)");
  int64_t n = x.dim(0), cin = x.dim(1), cout = w.dim(0);
  if (w.dim(1) != cin)
    throw ShapeError("linear: weight " + shape_str(w.shape()) +
                     " does not match input " + shape_str(x.shape()));
  if (b.defined() && (b.ndim() != 1 || b.dim(0) != cout))
    throw ShapeError("linear: bias must be (Cout)");

  std::vector<T> out(static_cast<size_t>(n * cout));
  detail::gemm(false, true, n, cout, cin, T(1), x.data().data(), cin,
               w.data().data(), cin, T(0), out.data(), cout);
  if (b.defined()) {
    const T* bd = b.data().data();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < cout; ++j) out[i * cout + j] += bd[j];
  }

  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.defined() ? b.node() : nullptr;
  std::vector<Tensor<T>> parents = b.defined()
                                       ? std::vector<Tensor<T>>{x, w, b}
                                       : std::vector<Tensor<T>>{x, w};
  return detail::make_result<T>(
      Shape{n, cout}, std::move(out), std::move(parents),
      [xn, wn, bn, n, cin, cout](detail::Node<T>& self) {
        const T* gy = self.grad.data();
        if (xn->requires_grad) {
          xn->ensure_grad();
          detail::gemm(false, false, n, cin, cout, T(1), gy, cout,
                       wn->value.data(), cin, T(1), xn->grad.data(), cin);
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          detail::gemm(true, false, cout, cin, n, T(1), gy, cout,
                       xn->value.data(), cin, T(1), wn->grad.data(), cin);
        }
        if (bn && bn->requires_grad) {
          bn->ensure_grad();
          for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < cout; ++j) bn->grad[j] += gy[i * cout + j];
        }
      });
}

#define DIDA_INSTANTIATE_CONV(T)                                             \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&,           \
                               const Tensor<T>&, const ConvOpts&);           \
  template Tensor<T> depthwise_conv2d<T>(const Tensor<T>&, const Tensor<T>&, \
                                         int, int);                          \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&,           \
                               const Tensor<T>&);

DIDA_INSTANTIATE_CONV(float)
DIDA_INSTANTIATE_CONV(double)

}  // namespace dida
