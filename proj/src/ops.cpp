// SPDX-License-Identifier: Apache-2.0
#include "log3d/ops.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "log3d/parallel.hpp"

namespace log3d::ad {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

template <typename T>
std::vector<std::shared_ptr<Node<T>>> parents_of(std::initializer_list<Tensor<T>> ts) {
  std::vector<std::shared_ptr<Node<T>>> out;
  for (const auto& t : ts) out.push_back(t.node());
  return out;
}

template <typename T>
void accumulate(Node<T>& into, std::size_t i, T g) {
  into.grad[i] += g;
}

// Spatial bookkeeping shared by the volumetric ops.
struct Volume5 {
  std::size_t batch, channels, x, y, z;
  bool batched;
  std::size_t spatial() const { return x * y * z; }
};

template <typename T>
Volume5 volume_dims(const Tensor<T>& t, const char* op) {
  const auto& s = t.shape();
  if (s.size() == 4) return {1, s[0], s[1], s[2], s[3], false};
  if (s.size() == 5) return {s[0], s[1], s[2], s[3], s[4], true};
  throw ShapeError(std::string(op) + ": expected [C,X,Y,Z] or [B,C,X,Y,Z], got " + to_string(s));
}

Shape volume_shape(const Volume5& v, std::size_t c, std::size_t x, std::size_t y, std::size_t z) {
  if (v.batched) return {v.batch, c, x, y, z};
  return {c, x, y, z};
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Buffer<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return make_result<T>("add", a.shape(), std::move(out), parents_of({a, b}), [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  Buffer<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return make_result<T>("sub", a.shape(), std::move(out), parents_of({a, b}), [](Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      auto& par = *self.parents[p];
      if (!par.requires_grad) continue;
      auto& g = par.ensure_grad();
      const T sign = p == 0 ? T(1) : T(-1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  Buffer<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return make_result<T>("mul", a.shape(), std::move(out), parents_of({a, b}), [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Buffer<T> out(a.values().begin(), a.values().end());
  for (auto& v : out) v *= factor;
  return make_result<T>("scale", a.shape(), std::move(out), parents_of({a}), [factor](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  Buffer<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.values()[i]);
  return make_result<T>("exp", a.shape(), std::move(out), parents_of({a}), [](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.value[i];
  });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
  using Array = Eigen::Array<T, Eigen::Dynamic, 1>;
  const std::size_t n = a.numel();
  Eigen::Map<const Array> x(a.values().data(), n);
  auto sig = std::make_shared<Buffer<T>>(n);
  Eigen::Map<Array> s(sig->data(), n);
  s = T(1) / (T(1) + (-x).exp());
  Buffer<T> out(n);
  Eigen::Map<Array>(out.data(), n) = x * s;
  return make_result<T>("silu", a.shape(), std::move(out), parents_of({a}), [sig, n](Node<T>& self) {
    auto& p = *self.parents[0];
    Eigen::Map<Array> g(p.ensure_grad().data(), n);
    Eigen::Map<const Array> xv(p.value.data(), n), sv(sig->data(), n), dy(self.grad.data(), n);
    g += dy * sv * (T(1) + xv * (T(1) - sv));
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.numel())
    throw ShapeError("reshape: " + to_string(a.shape()) + " -> " + to_string(shape));
  Buffer<T> out(a.values().begin(), a.values().end());
  return make_result<T>("reshape", std::move(shape), std::move(out), parents_of({a}), [](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  return make_result<T>("sum", {}, {pairwise_sum(a.values())}, parents_of({a}), [](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  const T n = static_cast<T>(a.numel());
  return make_result<T>("mean", {}, {pairwise_sum(a.values()) / n}, parents_of({a}), [n](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0] / n;
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1 || x.dim(1) != w.dim(1) || b.dim(0) != w.dim(0))
    throw ShapeError("linear: x" + to_string(x.shape()) + " w" + to_string(w.shape()) + " b" + to_string(b.shape()));
  const std::size_t rows = x.dim(0), in = x.dim(1), outs = w.dim(0);
  Buffer<T> out(rows * outs);
  {
    ConstMatMap<T> X(x.values().data(), rows, in);
    ConstMatMap<T> W(w.values().data(), outs, in);
    MatMap<T> Y(out.data(), rows, outs);
    Y.noalias() = X * W.transpose();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t o = 0; o < outs; ++o) Y(r, o) += b.values()[o];
  }
  return make_result<T>("linear", {rows, outs}, std::move(out), parents_of({x, w, b}),
                        [rows, in, outs](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    auto& pb = *self.parents[2];
    ConstMatMap<T> dY(self.grad.data(), rows, outs);
    if (px.requires_grad) {
      MatMap<T> dX(px.ensure_grad().data(), rows, in);
      dX.noalias() += dY * ConstMatMap<T>(pw.value.data(), outs, in);
    }
    if (pw.requires_grad) {
      MatMap<T> dW(pw.ensure_grad().data(), outs, in);
      dW.noalias() += dY.transpose() * ConstMatMap<T>(px.value.data(), rows, in);
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < outs; ++o) g[o] += dY(r, o);
    }
  });
}

namespace {

struct ConvGeometry {
  std::size_t cin, cout, k, stride, pad;
  std::size_t x, y, z;     // input spatial
  std::size_t ox, oy, oz;  // output spatial
  std::size_t rows() const { return cin * k * k * k; }
  std::size_t in_spatial() const { return x * y * z; }
  std::size_t out_spatial() const { return ox * oy * oz; }
};

// Valid output range [lo, hi) along one axis for kernel tap `t`.
inline void tap_range(std::size_t t, std::size_t pad, std::size_t stride, std::size_t in, std::size_t out,
                      std::size_t& lo, std::size_t& hi) {
  // Input coordinate o*stride + t - pad must lie in [0, in).
  lo = t >= pad ? 0 : (pad - t + stride - 1) / stride;
  const std::ptrdiff_t last = (static_cast<std::ptrdiff_t>(in) - 1 + static_cast<std::ptrdiff_t>(pad) -
                               static_cast<std::ptrdiff_t>(t));
  hi = last < 0 ? 0 : std::min(out, static_cast<std::size_t>(last) / stride + 1);
  if (hi < lo) hi = lo;
}

// col has g.rows() rows and `ld` columns; block columns start at `col0`.
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col, std::size_t ld, std::size_t col0) {
  const std::size_t k = g.k;
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t kx = 0; kx < k; ++kx)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kz = 0; kz < k; ++kz) {
          const std::size_t row = ((c * k + kx) * k + ky) * k + kz;
          T* dst = col + row * ld + col0;
          std::fill(dst, dst + g.out_spatial(), T(0));
          std::size_t x0, x1, y0, y1, z0, z1;
          tap_range(kx, g.pad, g.stride, g.x, g.ox, x0, x1);
          tap_range(ky, g.pad, g.stride, g.y, g.oy, y0, y1);
          tap_range(kz, g.pad, g.stride, g.z, g.oz, z0, z1);
          const T* src_c = x + c * g.in_spatial();
          for (std::size_t ox = x0; ox < x1; ++ox) {
            const std::size_t ix = ox * g.stride + kx - g.pad;
            for (std::size_t oy = y0; oy < y1; ++oy) {
              const std::size_t iy = oy * g.stride + ky - g.pad;
              const T* src = src_c + (ix * g.y + iy) * g.z;
              T* d = dst + (ox * g.oy + oy) * g.oz;
              for (std::size_t oz = z0; oz < z1; ++oz) d[oz] = src[oz * g.stride + kz - g.pad];
            }
          }
        }
}

template <typename T>
void col2im_add(const T* col, std::size_t ld, std::size_t col0, const ConvGeometry& g, T* dx) {
  const std::size_t k = g.k;
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t kx = 0; kx < k; ++kx)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kz = 0; kz < k; ++kz) {
          const std::size_t row = ((c * k + kx) * k + ky) * k + kz;
          const T* src = col + row * ld + col0;
          std::size_t x0, x1, y0, y1, z0, z1;
          tap_range(kx, g.pad, g.stride, g.x, g.ox, x0, x1);
          tap_range(ky, g.pad, g.stride, g.y, g.oy, y0, y1);
          tap_range(kz, g.pad, g.stride, g.z, g.oz, z0, z1);
          T* dst_c = dx + c * g.in_spatial();
          for (std::size_t ox = x0; ox < x1; ++ox) {
            const std::size_t ix = ox * g.stride + kx - g.pad;
            for (std::size_t oy = y0; oy < y1; ++oy) {
              const std::size_t iy = oy * g.stride + ky - g.pad;
              T* d = dst_c + (ix * g.y + iy) * g.z;
              const T* s = src + (ox * g.oy + oy) * g.oz;
              for (std::size_t oz = z0; oz < z1; ++oz) d[oz * g.stride + kz - g.pad] += s[oz];
            }
          }
        }
}

// Output-side counterparts for stride-1 convolutions with few output channels.
// P holds one input-sized plane per (output channel, tap); the output gathers
// each plane at its tap offset.
template <typename T>
void gather_taps_add(const T* p, std::size_t ld, std::size_t col0, const ConvGeometry& g, T* y) {
  const std::size_t k = g.k;
  for (std::size_t co = 0; co < g.cout; ++co)
    for (std::size_t kx = 0; kx < k; ++kx)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kz = 0; kz < k; ++kz) {
          const std::size_t row = ((co * k + kx) * k + ky) * k + kz;
          const T* src = p + row * ld + col0;
          std::size_t x0, x1, y0, y1, z0, z1;
          tap_range(kx, g.pad, 1, g.x, g.ox, x0, x1);
          tap_range(ky, g.pad, 1, g.y, g.oy, y0, y1);
          tap_range(kz, g.pad, 1, g.z, g.oz, z0, z1);
          T* dst_c = y + co * g.out_spatial();
          for (std::size_t ox = x0; ox < x1; ++ox) {
            const std::size_t ix = ox + kx - g.pad;
            for (std::size_t oy = y0; oy < y1; ++oy) {
              const std::size_t iy = oy + ky - g.pad;
              const T* s = src + (ix * g.y + iy) * g.z + kz - g.pad;
              T* d = dst_c + (ox * g.oy + oy) * g.oz;
              for (std::size_t oz = z0; oz < z1; ++oz) d[oz] += s[oz];
            }
          }
        }
}

template <typename T>
void scatter_taps(const T* dy, const ConvGeometry& g, T* q, std::size_t ld, std::size_t col0) {
  const std::size_t k = g.k;
  for (std::size_t co = 0; co < g.cout; ++co)
    for (std::size_t kx = 0; kx < k; ++kx)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kz = 0; kz < k; ++kz) {
          const std::size_t row = ((co * k + kx) * k + ky) * k + kz;
          T* dst = q + row * ld + col0;
          std::fill(dst, dst + g.in_spatial(), T(0));
          std::size_t x0, x1, y0, y1, z0, z1;
          tap_range(kx, g.pad, 1, g.x, g.ox, x0, x1);
          tap_range(ky, g.pad, 1, g.y, g.oy, y0, y1);
          tap_range(kz, g.pad, 1, g.z, g.oz, z0, z1);
          const T* src_c = dy + co * g.out_spatial();
          for (std::size_t ox = x0; ox < x1; ++ox) {
            const std::size_t ix = ox + kx - g.pad;
            for (std::size_t oy = y0; oy < y1; ++oy) {
              const std::size_t iy = oy + ky - g.pad;
              T* d = dst + (ix * g.y + iy) * g.z + kz - g.pad;
              const T* s = src_c + (ox * g.oy + oy) * g.oz;
              for (std::size_t oz = z0; oz < z1; ++oz) d[oz] = s[oz];
            }
          }
        }
}

// Weight [cout, cin, k^3] regrouped as [(cout, tap), cin].
template <typename T>
RowMatrix<T> weight_by_tap(const T* w, const ConvGeometry& g) {
  const std::size_t taps = g.k * g.k * g.k;
  RowMatrix<T> out(g.cout * taps, g.cin);
  for (std::size_t co = 0; co < g.cout; ++co)
    for (std::size_t ci = 0; ci < g.cin; ++ci)
      for (std::size_t t = 0; t < taps; ++t) out(co * taps + t, ci) = w[(co * g.cin + ci) * taps + t];
  return out;
}

template <typename T>
void copy_chunk_input(const T* x, const ConvGeometry& g, std::size_t b0, std::size_t nb, T* dst) {
  const std::size_t si = g.in_spatial(), ld = nb * si;
  for (std::size_t i = 0; i < nb; ++i)
    for (std::size_t c = 0; c < g.cin; ++c) std::copy_n(x + ((b0 + i) * g.cin + c) * si, si, dst + c * ld + i * si);
}

// Batch items per GEMM. Fixed so partial weight gradients are reduced in the
// same order at any worker count.
constexpr std::size_t kConvChunk = 8;

}  // namespace

template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride, std::size_t pad) {
  const Volume5 v = volume_dims(x, "conv3d");
  if (w.rank() != 5 || w.dim(1) != v.channels || w.dim(2) != w.dim(3) || w.dim(3) != w.dim(4))
    throw ShapeError("conv3d: weight " + to_string(w.shape()) + " incompatible with input " + to_string(x.shape()));
  if (b.rank() != 1 || b.dim(0) != w.dim(0)) throw ShapeError("conv3d: bias " + to_string(b.shape()));
  if (stride < 1) throw ShapeError("conv3d: stride must be >= 1");
  ConvGeometry g{v.channels, w.dim(0), w.dim(2), stride, pad, v.x, v.y, v.z, 0, 0, 0};
  for (std::size_t s : {v.x, v.y, v.z})
    if (s + 2 * pad < g.k) throw ShapeError("conv3d: kernel larger than padded input");
  g.ox = (v.x + 2 * pad - g.k) / stride + 1;
  g.oy = (v.y + 2 * pad - g.k) / stride + 1;
  g.oz = (v.z + 2 * pad - g.k) / stride + 1;
  // Narrowing stride-1 convs work on per-tap planes instead of an im2col
  // matrix that would be k^3 times larger than the input.
  const bool output_side = stride == 1 && g.cout < g.cin;

  const std::size_t so = g.out_spatial(), si = g.in_spatial(), rows = g.rows();
  Buffer<T> out(v.batch * g.cout * so);
  const T* xs = x.values().data();
  const T* ws = w.values().data();
  const T* bs = b.values().data();

  if (output_side) {
    const RowMatrix<T> wt = weight_by_tap(ws, g);
    parallel_for_chunks(v.batch, kConvChunk, [&](std::size_t b0, std::size_t b1) {
      const std::size_t nb = b1 - b0, ld = nb * si;
      Buffer<T> xc(g.cin * ld);
      copy_chunk_input(xs, g, b0, nb, xc.data());
      RowMatrix<T> planes = wt * ConstMatMap<T>(xc.data(), g.cin, ld);
      for (std::size_t i = 0; i < nb; ++i) {
        T* y = out.data() + (b0 + i) * g.cout * so;
        for (std::size_t c = 0; c < g.cout; ++c) std::fill(y + c * so, y + (c + 1) * so, bs[c]);
        gather_taps_add(planes.data(), ld, i * si, g, y);
      }
    });
  } else {
    parallel_for_chunks(v.batch, kConvChunk, [&](std::size_t b0, std::size_t b1) {
      const std::size_t nb = b1 - b0, ld = nb * so;
      Buffer<T> col(rows * ld);
      for (std::size_t i = 0; i < nb; ++i) im2col(xs + (b0 + i) * g.cin * si, g, col.data(), ld, i * so);
      RowMatrix<T> y = ConstMatMap<T>(ws, g.cout, rows) * ConstMatMap<T>(col.data(), rows, ld);
      for (std::size_t i = 0; i < nb; ++i)
        for (std::size_t c = 0; c < g.cout; ++c) {
          T* dst = out.data() + ((b0 + i) * g.cout + c) * so;
          const T* src = y.data() + c * ld + i * so;
          for (std::size_t o = 0; o < so; ++o) dst[o] = src[o] + bs[c];
        }
    });
  }

  return make_result<T>("conv3d", volume_shape(v, g.cout, g.ox, g.oy, g.oz), std::move(out),
                        parents_of({x, w, b}), [g, output_side, batch = v.batch](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    auto& pb = *self.parents[2];
    const std::size_t so = g.out_spatial(), si = g.in_spatial(), rows = g.rows();
    const std::size_t chunks = chunk_count(batch, kConvChunk);
    std::vector<RowMatrix<T>> dw_part(pw.requires_grad ? chunks : 0);
    T* dx = px.requires_grad ? px.ensure_grad().data() : nullptr;

    if (output_side) {
      const RowMatrix<T> wt = weight_by_tap(pw.value.data(), g);
      parallel_for_chunks(batch, kConvChunk, [&](std::size_t b0, std::size_t b1) {
        const std::size_t nb = b1 - b0, ld = nb * si;
        RowMatrix<T> q(g.cout * g.k * g.k * g.k, ld);
        for (std::size_t i = 0; i < nb; ++i) scatter_taps(self.grad.data() + (b0 + i) * g.cout * so, g, q.data(), ld, i * si);
        if (pw.requires_grad) {
          Buffer<T> xc(g.cin * ld);
          copy_chunk_input(px.value.data(), g, b0, nb, xc.data());
          dw_part[b0 / kConvChunk].noalias() = q * ConstMatMap<T>(xc.data(), g.cin, ld).transpose();
        }
        if (dx) {
          RowMatrix<T> dxc = wt.transpose() * q;
          for (std::size_t i = 0; i < nb; ++i)
            for (std::size_t c = 0; c < g.cin; ++c) {
              T* d = dx + ((b0 + i) * g.cin + c) * si;
              const T* s = dxc.data() + c * ld + i * si;
              for (std::size_t o = 0; o < si; ++o) d[o] += s[o];
            }
        }
      });
      if (pw.requires_grad) {
        const std::size_t taps = g.k * g.k * g.k;
        RowMatrix<T> total = RowMatrix<T>::Zero(g.cout * taps, g.cin);
        for (const auto& part : dw_part) total += part;
        auto& gw = pw.ensure_grad();
        for (std::size_t co = 0; co < g.cout; ++co)
          for (std::size_t ci = 0; ci < g.cin; ++ci)
            for (std::size_t t = 0; t < taps; ++t) gw[(co * g.cin + ci) * taps + t] += total(co * taps + t, ci);
      }
    } else {
      parallel_for_chunks(batch, kConvChunk, [&](std::size_t b0, std::size_t b1) {
        const std::size_t nb = b1 - b0, ld = nb * so;
        RowMatrix<T> dy(g.cout, ld);
        for (std::size_t i = 0; i < nb; ++i)
          for (std::size_t c = 0; c < g.cout; ++c)
            std::copy_n(self.grad.data() + ((b0 + i) * g.cout + c) * so, so, dy.data() + c * ld + i * so);
        if (pw.requires_grad) {
          Buffer<T> col(rows * ld);
          for (std::size_t i = 0; i < nb; ++i)
            im2col(px.value.data() + (b0 + i) * g.cin * si, g, col.data(), ld, i * so);
          dw_part[b0 / kConvChunk].noalias() = dy * ConstMatMap<T>(col.data(), rows, ld).transpose();
        }
        if (dx) {
          RowMatrix<T> dcol = ConstMatMap<T>(pw.value.data(), g.cout, rows).transpose() * dy;
          for (std::size_t i = 0; i < nb; ++i) col2im_add(dcol.data(), ld, i * so, g, dx + (b0 + i) * g.cin * si);
        }
      });
      if (pw.requires_grad) {
        MatMap<T> dw(pw.ensure_grad().data(), g.cout, rows);
        for (const auto& part : dw_part) dw += part;
      }
    }
    if (pb.requires_grad) {
      auto& gb = pb.ensure_grad();
      for (std::size_t c = 0; c < g.cout; ++c) {
        T acc = T(0);
        for (std::size_t bi = 0; bi < batch; ++bi)
          acc += pairwise_sum(std::span<const T>(self.grad.data() + (bi * g.cout + c) * so, so));
        gb[c] += acc;
      }
    }
  });
}

template <typename T>
Tensor<T> maxpool3d(const Tensor<T>& x, std::size_t k, std::size_t stride) {
  const Volume5 v = volume_dims(x, "maxpool3d");
  if (k < 1 || stride < 1) throw ShapeError("maxpool3d: window and stride must be >= 1");
  for (std::size_t s : {v.x, v.y, v.z})
    if (s % stride != 0 || s < k) throw ShapeError("maxpool3d: spatial dims must be divisible by the stride");
  const std::size_t ox = (v.x - k) / stride + 1, oy = (v.y - k) / stride + 1, oz = (v.z - k) / stride + 1;
  const std::size_t planes = v.batch * v.channels;
  const std::size_t so = ox * oy * oz, si = v.spatial();
  Buffer<T> out(planes * so);
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(planes * so);
  const T* xs = x.values().data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t a = 0; a < ox; ++a)
      for (std::size_t bq = 0; bq < oy; ++bq)
        for (std::size_t c = 0; c < oz; ++c) {
          std::size_t best = 0;
          T best_v = T(0);
          bool first = true;
          // Window scanned in linear-index order; strict '>' keeps the first maximum.
          for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j)
              for (std::size_t l = 0; l < k; ++l) {
                const std::size_t idx = ((a * stride + i) * v.y + (bq * stride + j)) * v.z + (c * stride + l);
                const T val = xs[p * si + idx];
                if (first || val > best_v) {
                  best_v = val;
                  best = idx;
                  first = false;
                }
              }
          const std::size_t o = p * so + (a * oy + bq) * oz + c;
          out[o] = best_v;
          (*argmax)[o] = static_cast<std::uint32_t>(best);
        }
  return make_result<T>("maxpool3d", volume_shape(v, v.channels, ox, oy, oz), std::move(out), parents_of({x}),
                        [argmax, so, si, planes](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t o = 0; o < so; ++o) g[p * si + (*argmax)[p * so + o]] += self.grad[p * so + o];
  });
}

template <typename T>
Tensor<T> upsample_nearest3d(const Tensor<T>& x, std::size_t f) {
  const Volume5 v = volume_dims(x, "upsample_nearest3d");
  if (f < 1) throw ShapeError("upsample_nearest3d: factor must be >= 1");
  const std::size_t ox = v.x * f, oy = v.y * f, oz = v.z * f;
  const std::size_t planes = v.batch * v.channels, si = v.spatial(), so = ox * oy * oz;
  Buffer<T> out(planes * so);
  const T* xs = x.values().data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t a = 0; a < ox; ++a)
      for (std::size_t b = 0; b < oy; ++b) {
        const T* src = xs + p * si + ((a / f) * v.y + b / f) * v.z;
        T* dst = out.data() + p * so + (a * oy + b) * oz;
        for (std::size_t c = 0; c < v.z; ++c)
          for (std::size_t r = 0; r < f; ++r) dst[c * f + r] = src[c];
      }
  return make_result<T>("upsample_nearest3d", volume_shape(v, v.channels, ox, oy, oz), std::move(out),
                        parents_of({x}), [v, f, planes, si, so, ox, oy, oz](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t a = 0; a < ox; ++a)
        for (std::size_t b = 0; b < oy; ++b) {
          T* dst = g.data() + p * si + ((a / f) * v.y + b / f) * v.z;
          const T* src = self.grad.data() + p * so + (a * oy + b) * oz;
          for (std::size_t c = 0; c < v.z; ++c)
            for (std::size_t r = 0; r < f; ++r) dst[c] += src[c * f + r];
        }
  });
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  if (x.rank() < 1) throw ShapeError("layernorm: rank-0 input");
  const std::size_t d = x.shape().back();
  if (d < 1 || gain.numel() != d || bias.numel() != d)
    throw ShapeError("layernorm: gain/bias must match last axis of " + to_string(x.shape()));
  const std::size_t rows = x.numel() / d;
  Buffer<T> out(x.numel());
  auto xhat = std::make_shared<Buffer<T>>(x.numel());
  auto rstd = std::make_shared<Buffer<T>>(rows);
  const T* xs = x.values().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xs + r * d;
    const T mu = pairwise_sum(std::span<const T>(row, d)) / static_cast<T>(d);
    T var = T(0);
    for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t i = 0; i < d; ++i) {
      const T h = (row[i] - mu) * rs;
      (*xhat)[r * d + i] = h;
      out[r * d + i] = h * gain.values()[i] + bias.values()[i];
    }
  }
  return make_result<T>("layernorm", x.shape(), std::move(out), parents_of({x, gain, bias}),
                        [xhat, rstd, rows, d](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    const T* dy = self.grad.data();
    if (pg.requires_grad || pb.requires_grad) {
      auto& gg = pg.ensure_grad();
      auto& gb = pb.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < d; ++i) {
          gg[i] += dy[r * d + i] * (*xhat)[r * d + i];
          gb[i] += dy[r * d + i];
        }
    }
    if (px.requires_grad) {
      auto& gx = px.ensure_grad();
      Buffer<T> dyg(d);
      for (std::size_t r = 0; r < rows; ++r) {
        T m1 = T(0), m2 = T(0);
        for (std::size_t i = 0; i < d; ++i) {
          dyg[i] = dy[r * d + i] * pg.value[i];
          m1 += dyg[i];
          m2 += dyg[i] * (*xhat)[r * d + i];
        }
        m1 /= static_cast<T>(d);
        m2 /= static_cast<T>(d);
        for (std::size_t i = 0; i < d; ++i)
          gx[r * d + i] += (*rstd)[r] * (dyg[i] - m1 - (*xhat)[r * d + i] * m2);
      }
    }
  });
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, T scale) {
  if (q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape())
    throw ShapeError("attention: q, k, v must share a [T,d] shape");
  const std::size_t n = q.dim(0), d = q.dim(1);
  if (!(scale > T(0))) scale = T(1) / std::sqrt(static_cast<T>(d));
  ConstMatMap<T> Q(q.values().data(), n, d), K(k.values().data(), n, d), V(v.values().data(), n, d);
  auto probs = std::make_shared<RowMatrix<T>>(Q * K.transpose() * scale);
  auto& P = *probs;
  for (std::size_t r = 0; r < n; ++r) {
    const T m = P.row(r).maxCoeff();
    T z = T(0);
    for (std::size_t c = 0; c < n; ++c) {
      P(r, c) = std::exp(P(r, c) - m);
      z += P(r, c);
    }
    P.row(r) /= z;
  }
  Buffer<T> out(n * d);
  MatMap<T>(out.data(), n, d).noalias() = P * V;
  return make_result<T>("attention", {n, d}, std::move(out), parents_of({q, k, v}),
                        [probs, n, d, scale](Node<T>& self) {
    auto& pq = *self.parents[0];
    auto& pk = *self.parents[1];
    auto& pv = *self.parents[2];
    const RowMatrix<T>& P = *probs;
    ConstMatMap<T> dO(self.grad.data(), n, d);
    if (pv.requires_grad) MatMap<T>(pv.ensure_grad().data(), n, d).noalias() += P.transpose() * dO;
    if (!pq.requires_grad && !pk.requires_grad) return;
    RowMatrix<T> dS = dO * ConstMatMap<T>(pv.value.data(), n, d).transpose();
    for (std::size_t r = 0; r < n; ++r) {
      const T dot = (dS.row(r).array() * P.row(r).array()).sum();
      dS.row(r) = (P.row(r).array() * (dS.row(r).array() - dot)).matrix();
    }
    dS *= scale;
    if (pq.requires_grad)
      MatMap<T>(pq.ensure_grad().data(), n, d).noalias() += dS * ConstMatMap<T>(pk.value.data(), n, d);
    if (pk.requires_grad)
      MatMap<T>(pk.ensure_grad().data(), n, d).noalias() += dS.transpose() * ConstMatMap<T>(pq.value.data(), n, d);
  });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::uint32_t>& idx) {
  if (x.rank() != 2) throw ShapeError("gather_rows: expected [R,d]");
  const std::size_t rows = x.dim(0), d = x.dim(1);
  Buffer<T> out(idx.size() * d);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= rows) throw ShapeError("gather_rows: row index out of range");
    std::copy_n(x.values().data() + idx[r] * d, d, out.data() + r * d);
  }
  return make_result<T>("gather_rows", {idx.size(), d}, std::move(out), parents_of({x}), [idx, d](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < d; ++c) g[idx[r] * d + c] += self.grad[r * d + c];
  });
}

template <typename T>
Tensor<T> assemble_rows(const std::vector<Tensor<T>>& parts, const std::vector<std::vector<std::uint32_t>>& index,
                        std::size_t rows) {
  if (parts.size() != index.size() || parts.empty()) throw ShapeError("assemble_rows: parts/index mismatch");
  const std::size_t d = parts.front().dim(1);
  Buffer<T> out(rows * d);
  std::vector<char> filled(rows, 0);
  std::vector<std::shared_ptr<Node<T>>> parents;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    if (parts[p].rank() != 2 || parts[p].dim(1) != d || parts[p].dim(0) != index[p].size())
      throw ShapeError("assemble_rows: part shape does not match its index list");
    for (std::size_t r = 0; r < index[p].size(); ++r) {
      const auto dst = index[p][r];
      if (dst >= rows || filled[dst]) throw ShapeError("assemble_rows: index lists must partition the rows");
      filled[dst] = 1;
      std::copy_n(parts[p].values().data() + r * d, d, out.data() + dst * d);
    }
    parents.push_back(parts[p].node());
  }
  if (std::find(filled.begin(), filled.end(), 0) != filled.end())
    throw ShapeError("assemble_rows: index lists must cover every row");
  return make_result<T>("assemble_rows", {rows, d}, std::move(out), std::move(parents), [index, d](Node<T>& self) {
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      auto& par = *self.parents[p];
      if (!par.requires_grad) continue;
      auto& g = par.ensure_grad();
      for (std::size_t r = 0; r < index[p].size(); ++r)
        for (std::size_t c = 0; c < d; ++c) g[r * d + c] += self.grad[index[p][r] * d + c];
    }
  });
}

template <typename T>
Tensor<T> huber_mean(const Tensor<T>& pred, const Tensor<T>& target, T delta) {
  require_same_shape(pred, target, "huber_mean");
  if (!(delta > T(0))) throw ShapeError("huber_mean: delta must be positive");
  const std::size_t n = pred.numel();
  Buffer<T> terms(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T e = pred.values()[i] - target.values()[i];
    const T a = std::abs(e);
    terms[i] = a <= delta ? T(0.5) * e * e : delta * (a - T(0.5) * delta);
  }
  const T value = pairwise_sum(std::span<const T>(terms)) / static_cast<T>(n);
  return make_result<T>("huber_mean", {}, {value}, parents_of({pred}),
                        [target_node = target.node(), delta, n](Node<T>& self) {
    auto& p = *self.parents[0];
    auto& g = p.ensure_grad();
    const T s = self.grad[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T e = p.value[i] - target_node->value[i];
      g[i] += s * std::clamp(e, -delta, delta);
    }
  });
}

template <typename T>
Tensor<T> kl_mean(const Tensor<T>& mu, const Tensor<T>& logvar) {
  require_same_shape(mu, logvar, "kl_mean");
  const std::size_t n = mu.numel();
  Buffer<T> terms(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T m = mu.values()[i], lv = logvar.values()[i];
    terms[i] = T(-0.5) * (T(1) + lv - m * m - std::exp(lv));
  }
  const T value = pairwise_sum(std::span<const T>(terms)) / static_cast<T>(n);
  return make_result<T>("kl_mean", {}, {value}, parents_of({mu, logvar}), [n](Node<T>& self) {
    auto& pm = *self.parents[0];
    auto& pl = *self.parents[1];
    const T s = self.grad[0] / static_cast<T>(n);
    if (pm.requires_grad) {
      auto& g = pm.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += s * pm.value[i];
    }
    if (pl.requires_grad) {
      auto& g = pl.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += s * T(-0.5) * (T(1) - std::exp(pl.value[i]));
    }
  });
}

template <typename T>
Tensor<T> reparameterize(const Tensor<T>& mu, const Tensor<T>& logvar, const std::vector<T>& eps) {
  require_same_shape(mu, logvar, "reparameterize");
  if (eps.size() != mu.numel()) throw ShapeError("reparameterize: noise size mismatch");
  const std::size_t n = mu.numel();
  Buffer<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = mu.values()[i] + std::exp(logvar.values()[i] / T(2)) * eps[i];
  return make_result<T>("reparameterize", mu.shape(), std::move(out), parents_of({mu, logvar}),
                        [eps, n](Node<T>& self) {
    auto& pm = *self.parents[0];
    auto& pl = *self.parents[1];
    if (pm.requires_grad) {
      auto& g = pm.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
    }
    if (pl.requires_grad) {
      auto& g = pl.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * T(0.5) * std::exp(pl.value[i] / T(2)) * eps[i];
    }
  });
}

#define LOG3D_INSTANTIATE(T)                                                                                  \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                 \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                                 \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                 \
  template Tensor<T> scale(const Tensor<T>&, T);                                                              \
  template Tensor<T> exp(const Tensor<T>&);                                                                   \
  template Tensor<T> silu(const Tensor<T>&);                                                                  \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                        \
  template Tensor<T> sum(const Tensor<T>&);                                                                   \
  template Tensor<T> mean(const Tensor<T>&);                                                                  \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> conv3d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);  \
  template Tensor<T> maxpool3d(const Tensor<T>&, std::size_t, std::size_t);                                   \
  template Tensor<T> upsample_nearest3d(const Tensor<T>&, std::size_t);                                       \
  template Tensor<T> layernorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                      \
  template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                      \
  template Tensor<T> gather_rows(const Tensor<T>&, const std::vector<std::uint32_t>&);                        \
  template Tensor<T> assemble_rows(const std::vector<Tensor<T>>&, const std::vector<std::vector<std::uint32_t>>&, \
                                   std::size_t);                                                              \
  template Tensor<T> huber_mean(const Tensor<T>&, const Tensor<T>&, T);                                       \
  template Tensor<T> kl_mean(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> reparameterize(const Tensor<T>&, const Tensor<T>&, const std::vector<T>&);

LOG3D_INSTANTIATE(float)
LOG3D_INSTANTIATE(double)
#undef LOG3D_INSTANTIATE

}  // namespace log3d::ad
