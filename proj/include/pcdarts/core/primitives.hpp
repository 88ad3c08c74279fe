// Copyright 2026 The pcdarts Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "pcdarts/core/tensor.hpp"

// Differentiable primitives. Every function here computes its forward value
// eagerly and, when an input requires grad, appends a tape record whose
// closure accumulates into the input gradients. Reductions always run in a
// fixed loop order so results are reproducible bit for bit.

namespace pcdarts {

namespace detail {

inline std::string dims(const Shape& s) { return shape_str(s); }

inline void require(bool ok, const std::string& primitive,
                    const std::string& what) {
  if (!ok) throw ShapeError(primitive + ": " + what);
}

template <class T>
void require_rank(const Tensor<T>& x, std::size_t rank, const char* prim) {
  require(x.defined() && x.rank() == rank, prim,
          "expected rank " + std::to_string(rank) + " input, got " +
              (x.defined() ? dims(x.shape()) : std::string("undefined")));
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                        const char* prim) {
  require(a.shape() == b.shape(), prim,
          "shape mismatch " + dims(a.shape()) + " vs " + dims(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return detail::emit<T>("add", a.shape(), std::move(out),
                         detail::any_requires_grad<T>({&a, &b}),
                         [an, bn](std::span<const T> g) {
                           for (auto* n : {an.get(), bn.get()}) {
                             if (!n->requires_grad) continue;
                             auto dst = grad_sink(*n);
                             for (std::size_t i = 0; i < g.size(); ++i)
                               dst[i] += g[i];
                           }
                         });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return detail::emit<T>("mul", a.shape(), std::move(out),
                         detail::any_requires_grad<T>({&a, &b}),
                         [an, bn](std::span<const T> g) {
                           if (an->requires_grad) {
                             auto dst = grad_sink(*an);
                             for (std::size_t i = 0; i < g.size(); ++i)
                               dst[i] += g[i] * bn->data[i];
                           }
                           if (bn->requires_grad) {
                             auto dst = grad_sink(*bn);
                             for (std::size_t i = 0; i < g.size(); ++i)
                               dst[i] += g[i] * an->data[i];
                           }
                         });
}

/// Multiplies by a compile-time-free constant.
template <class T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  std::vector<T> out(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * xv[i];
  auto xn = x.node_ptr();
  return detail::emit<T>("scale", x.shape(), std::move(out), x.requires_grad(),
                         [xn, c](std::span<const T> g) {
                           auto dst = grad_sink(*xn);
                           for (std::size_t i = 0; i < g.size(); ++i)
                             dst[i] += c * g[i];
                         });
}

/// y = s[index] * x, differentiable in both the tensor and the chosen
/// coefficient. Used to weight candidate operations and incoming edges.
template <class T>
Tensor<T> scale_by(const Tensor<T>& x, const Tensor<T>& s, std::size_t index) {
  detail::require(index < s.numel(), "scale_by",
                  "coefficient index " + std::to_string(index) +
                      " out of range for " + detail::dims(s.shape()));
  const T c = s[index];
  std::vector<T> out(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * xv[i];
  auto xn = x.node_ptr();
  auto sn = s.node_ptr();
  return detail::emit<T>(
      "scale_by", x.shape(), std::move(out),
      detail::any_requires_grad<T>({&x, &s}),
      [xn, sn, index, c](std::span<const T> g) {
        if (xn->requires_grad) {
          auto dst = grad_sink(*xn);
          for (std::size_t i = 0; i < g.size(); ++i) dst[i] += c * g[i];
        }
        if (sn->requires_grad) {
          T acc = T(0);
          for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xn->data[i];
          grad_sink(*sn)[index] += acc;
        }
      });
}

/// Sums same-shaped tensors left to right.
template <class T>
Tensor<T> add_n(const std::vector<Tensor<T>>& xs) {
  detail::require(!xs.empty(), "add_n", "no inputs");
  for (const auto& x : xs) detail::require_same_shape(xs.front(), x, "add_n");
  std::vector<T> out(xs.front().data().begin(), xs.front().data().end());
  bool needs = xs.front().requires_grad();
  for (std::size_t k = 1; k < xs.size(); ++k) {
    const auto v = xs[k].data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
    needs = needs || xs[k].requires_grad();
  }
  std::vector<std::shared_ptr<TensorNode<T>>> nodes;
  for (const auto& x : xs) nodes.push_back(x.node_ptr());
  return detail::emit<T>("add_n", xs.front().shape(), std::move(out), needs,
                         [nodes](std::span<const T> g) {
                           for (const auto& n : nodes) {
                             if (!n->requires_grad) continue;
                             auto dst = grad_sink(*n);
                             for (std::size_t i = 0; i < g.size(); ++i)
                               dst[i] += g[i];
                           }
                         });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = xv[i] > T(0) ? xv[i] : T(0);
  auto xn = x.node_ptr();
  return detail::emit<T>("relu", x.shape(), std::move(out), x.requires_grad(),
                         [xn](std::span<const T> g) {
                           auto dst = grad_sink(*xn);
                           for (std::size_t i = 0; i < g.size(); ++i)
                             if (xn->data[i] > T(0)) dst[i] += g[i];
                         });
}

template <class T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T acc = T(0);
  for (const T v : x.data()) acc += v;
  auto xn = x.node_ptr();
  return detail::emit<T>("sum_all", Shape{1}, std::vector<T>{acc},
                         x.requires_grad(), [xn](std::span<const T> g) {
                           auto dst = grad_sink(*xn);
                           for (auto& d : dst) d += g[0];
                         });
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return scale(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// (M,K) x (K,N) -> (M,N)
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  detail::require(b.dim(0) == k, "matmul",
                  "inner extents differ: " + detail::dims(a.shape()) + " x " +
                      detail::dims(b.shape()));
  std::vector<T> out(m * n, T(0));
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return detail::emit<T>(
      "matmul", Shape{m, n}, std::move(out),
      detail::any_requires_grad<T>({&a, &b}),
      [an, bn, m, k, n](std::span<const T> g) {
        if (an->requires_grad) {
          auto dst = grad_sink(*an);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              T acc = T(0);
              for (std::size_t j = 0; j < n; ++j)
                acc += g[i * n + j] * bn->data[p * n + j];
              dst[i * k + p] += acc;
            }
        }
        if (bn->requires_grad) {
          auto dst = grad_sink(*bn);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const T aip = an->data[i * k + p];
              for (std::size_t j = 0; j < n; ++j)
                dst[p * n + j] += aip * g[i * n + j];
            }
        }
      });
}

/// y = x W^T + b with x (B,in), W (out,in), b (out) or undefined.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require_rank(x, 2, "linear");
  detail::require_rank(w, 2, "linear");
  const auto batch = x.dim(0), in = x.dim(1), outf = w.dim(0);
  detail::require(w.dim(1) == in, "linear",
                  "input " + detail::dims(x.shape()) + " vs weight " +
                      detail::dims(w.shape()));
  const bool has_bias = b.defined();
  if (has_bias)
    detail::require(b.numel() == outf, "linear",
                    "bias " + detail::dims(b.shape()) + " vs " +
                        std::to_string(outf) + " outputs");
  std::vector<T> out(batch * outf);
  const auto xv = x.data();
  const auto wv = w.data();
  for (std::size_t r = 0; r < batch; ++r)
    for (std::size_t o = 0; o < outf; ++o) {
      T acc = T(0);
      for (std::size_t i = 0; i < in; ++i) acc += xv[r * in + i] * wv[o * in + i];
      out[r * outf + o] = has_bias ? acc + b[o] : acc;
    }
  auto xn = x.node_ptr();
  auto wn = w.node_ptr();
  auto bn = b.node_ptr();
  return detail::emit<T>(
      "linear", Shape{batch, outf}, std::move(out),
      detail::any_requires_grad<T>({&x, &w, &b}),
      [xn, wn, bn, batch, in, outf](std::span<const T> g) {
        if (xn->requires_grad) {
          auto dst = grad_sink(*xn);
          for (std::size_t r = 0; r < batch; ++r)
            for (std::size_t o = 0; o < outf; ++o) {
              const T go = g[r * outf + o];
              for (std::size_t i = 0; i < in; ++i)
                dst[r * in + i] += go * wn->data[o * in + i];
            }
        }
        if (wn->requires_grad) {
          auto dst = grad_sink(*wn);
          for (std::size_t r = 0; r < batch; ++r)
            for (std::size_t o = 0; o < outf; ++o) {
              const T go = g[r * outf + o];
              for (std::size_t i = 0; i < in; ++i)
                dst[o * in + i] += go * xn->data[r * in + i];
            }
        }
        if (bn && bn->requires_grad) {
          auto dst = grad_sink(*bn);
          for (std::size_t r = 0; r < batch; ++r)
            for (std::size_t o = 0; o < outf; ++o) dst[o] += g[r * outf + o];
        }
      });
}

// ---------------------------------------------------------------------------
// Convolution and pooling
// ---------------------------------------------------------------------------

struct Conv2dAttrs {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t dilation = 1;
  std::size_t groups = 1;
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel,
                                   std::size_t stride, std::size_t padding,
                                   std::size_t dilation) {
  const std::size_t span = dilation * (kernel - 1) + 1;
  if (in + 2 * padding < span) return 0;
  return (in + 2 * padding - span) / stride + 1;
}

/// 2-D cross-correlation. x (B,Cin,H,W), w (Cout, Cin/groups, KH, KW).
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w,
                 const Conv2dAttrs& attrs = {}) {
  constexpr const char* prim = "conv2d";
  detail::require_rank(x, 4, prim);
  detail::require_rank(w, 4, prim);
  detail::require(attrs.stride >= 1 && attrs.dilation >= 1 && attrs.groups >= 1,
                  prim, "stride, dilation and groups must be >= 1");
  const auto B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto Cout = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  const auto G = attrs.groups;
  detail::require(Cin % G == 0 && Cout % G == 0, prim,
                  "groups " + std::to_string(G) + " must divide channels " +
                      std::to_string(Cin) + " -> " + std::to_string(Cout));
  const auto cin_pg = Cin / G, cout_pg = Cout / G;
  detail::require(w.dim(1) == cin_pg, prim,
                  "weight " + detail::dims(w.shape()) + " incompatible with input " +
                      detail::dims(x.shape()) + " and groups " +
                      std::to_string(G));
  const auto s = attrs.stride, p = attrs.padding, d = attrs.dilation;
  const auto OH = conv_out_extent(H, KH, s, p, d);
  const auto OW = conv_out_extent(W, KW, s, p, d);
  detail::require(OH > 0 && OW > 0, prim,
                  "kernel larger than padded input " + detail::dims(x.shape()));

  // Valid output ranges for each kernel offset, shared by forward/backward.
  auto range = [](std::size_t k, std::size_t dil, std::size_t pad,
                  std::size_t st, std::size_t in, std::size_t outn) {
    // in_idx = o*st + k*dil - pad must lie in [0, in).
    const long off = static_cast<long>(k * dil) - static_cast<long>(pad);
    long lo = 0;
    if (off < 0) lo = (-off + static_cast<long>(st) - 1) / static_cast<long>(st);
    long hi = static_cast<long>(outn);  // exclusive
    const long max_o =
        (static_cast<long>(in) - 1 - off) >= 0
            ? (static_cast<long>(in) - 1 - off) / static_cast<long>(st) + 1
            : 0;
    hi = std::min(hi, max_o);
    return std::pair<long, long>{lo, std::max(lo, hi)};
  };

  std::vector<T> out(B * Cout * OH * OW, T(0));
  const auto xv = x.data();
  const auto wv = w.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t oc = 0; oc < Cout; ++oc) {
      const std::size_t g = oc / cout_pg;
      T* op = out.data() + (b * Cout + oc) * OH * OW;
      for (std::size_t icg = 0; icg < cin_pg; ++icg) {
        const std::size_t ic = g * cin_pg + icg;
        const T* ip = xv.data() + (b * Cin + ic) * H * W;
        for (std::size_t kh = 0; kh < KH; ++kh) {
          const auto [oh0, oh1] = range(kh, d, p, s, H, OH);
          for (std::size_t kw = 0; kw < KW; ++kw) {
            const T wk = wv[((oc * cin_pg + icg) * KH + kh) * KW + kw];
            const auto [ow0, ow1] = range(kw, d, p, s, W, OW);
            for (long oh = oh0; oh < oh1; ++oh) {
              const std::size_t ih = oh * s + kh * d - p;
              T* orow = op + oh * OW;
              const T* irow = ip + ih * W;
              for (long ow = ow0; ow < ow1; ++ow)
                orow[ow] += wk * irow[ow * s + kw * d - p];
            }
          }
        }
      }
    }

  auto xn = x.node_ptr();
  auto wn = w.node_ptr();
  return detail::emit<T>(
      prim, Shape{B, Cout, OH, OW}, std::move(out),
      detail::any_requires_grad<T>({&x, &w}),
      [=](std::span<const T> gout) {
        const bool gx = xn->requires_grad, gw = wn->requires_grad;
        std::span<T> dx, dw;
        if (gx) dx = grad_sink(*xn);
        if (gw) dw = grad_sink(*wn);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t oc = 0; oc < Cout; ++oc) {
            const std::size_t g = oc / cout_pg;
            const T* gp = gout.data() + (b * Cout + oc) * OH * OW;
            for (std::size_t icg = 0; icg < cin_pg; ++icg) {
              const std::size_t ic = g * cin_pg + icg;
              const T* ip = xn->data.data() + (b * Cin + ic) * H * W;
              T* dip = gx ? dx.data() + (b * Cin + ic) * H * W : nullptr;
              for (std::size_t kh = 0; kh < KH; ++kh) {
                const auto [oh0, oh1] = range(kh, d, p, s, H, OH);
                for (std::size_t kw = 0; kw < KW; ++kw) {
                  const std::size_t widx =
                      ((oc * cin_pg + icg) * KH + kh) * KW + kw;
                  const T wk = wn->data[widx];
                  const auto [ow0, ow1] = range(kw, d, p, s, W, OW);
                  T wacc = T(0);
                  for (long oh = oh0; oh < oh1; ++oh) {
                    const std::size_t ih = oh * s + kh * d - p;
                    const T* grow = gp + oh * OW;
                    const T* irow = ip + ih * W;
                    for (long ow = ow0; ow < ow1; ++ow) {
                      const std::size_t iw = ow * s + kw * d - p;
                      if (gw) wacc += grow[ow] * irow[iw];
                      if (gx) dip[ih * W + iw] += wk * grow[ow];
                    }
                  }
                  if (gw) dw[widx] += wacc;
                }
              }
            }
          }
      });
}

struct Pool2dAttrs {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
};

template <class T>
Tensor<T> max_pool2d(const Tensor<T>& x, const Pool2dAttrs& attrs) {
  constexpr const char* prim = "max_pool2d";
  detail::require_rank(x, 4, prim);
  detail::require(attrs.stride >= 1 && attrs.kernel >= 1, prim,
                  "kernel and stride must be >= 1");
  detail::require(attrs.padding * 2 <= attrs.kernel, prim,
                  "padding exceeds half the window");
  const auto B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto k = attrs.kernel, s = attrs.stride, p = attrs.padding;
  const auto OH = conv_out_extent(H, k, s, p, 1);
  const auto OW = conv_out_extent(W, k, s, p, 1);
  detail::require(OH > 0 && OW > 0, prim,
                  "window larger than padded input " + detail::dims(x.shape()));
  std::vector<T> out(B * C * OH * OW);
  std::vector<std::size_t> argmax(out.size());
  const auto xv = x.data();
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const T* ip = xv.data() + bc * H * W;
    for (std::size_t oh = 0; oh < OH; ++oh)
      for (std::size_t ow = 0; ow < OW; ++ow) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_idx = 0;
        for (std::size_t kh = 0; kh < k; ++kh) {
          const long ih = static_cast<long>(oh * s + kh) - static_cast<long>(p);
          if (ih < 0 || ih >= static_cast<long>(H)) continue;
          for (std::size_t kw = 0; kw < k; ++kw) {
            const long iw = static_cast<long>(ow * s + kw) - static_cast<long>(p);
            if (iw < 0 || iw >= static_cast<long>(W)) continue;
            const std::size_t idx = ih * W + iw;
            if (ip[idx] > best) {
              best = ip[idx];
              best_idx = idx;
            }
          }
        }
        const std::size_t o = (bc * OH + oh) * OW + ow;
        out[o] = best;
        argmax[o] = bc * H * W + best_idx;
      }
  }
  auto xn = x.node_ptr();
  return detail::emit<T>(prim, Shape{B, C, OH, OW}, std::move(out),
                         x.requires_grad(),
                         [xn, argmax = std::move(argmax)](std::span<const T> g) {
                           auto dst = grad_sink(*xn);
                           for (std::size_t o = 0; o < g.size(); ++o)
                             dst[argmax[o]] += g[o];
                         });
}

/// Average pooling; padded positions are excluded from the divisor.
template <class T>
Tensor<T> avg_pool2d(const Tensor<T>& x, const Pool2dAttrs& attrs) {
  constexpr const char* prim = "avg_pool2d";
  detail::require_rank(x, 4, prim);
  detail::require(attrs.stride >= 1 && attrs.kernel >= 1, prim,
                  "kernel and stride must be >= 1");
  detail::require(attrs.padding * 2 <= attrs.kernel, prim,
                  "padding exceeds half the window");
  const auto B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto k = attrs.kernel, s = attrs.stride, p = attrs.padding;
  const auto OH = conv_out_extent(H, k, s, p, 1);
  const auto OW = conv_out_extent(W, k, s, p, 1);
  detail::require(OH > 0 && OW > 0, prim,
                  "window larger than padded input " + detail::dims(x.shape()));
  auto window = [=](std::size_t o, std::size_t extent) {
    const long lo = std::max(0L, static_cast<long>(o * s) - static_cast<long>(p));
    const long hi = std::min(static_cast<long>(extent),
                             static_cast<long>(o * s + k) - static_cast<long>(p));
    return std::pair<long, long>{lo, hi};
  };
  std::vector<T> out(B * C * OH * OW);
  const auto xv = x.data();
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const T* ip = xv.data() + bc * H * W;
    for (std::size_t oh = 0; oh < OH; ++oh) {
      const auto [h0, h1] = window(oh, H);
      for (std::size_t ow = 0; ow < OW; ++ow) {
        const auto [w0, w1] = window(ow, W);
        T acc = T(0);
        for (long ih = h0; ih < h1; ++ih)
          for (long iw = w0; iw < w1; ++iw) acc += ip[ih * W + iw];
        out[(bc * OH + oh) * OW + ow] =
            acc / static_cast<T>((h1 - h0) * (w1 - w0));
      }
    }
  }
  auto xn = x.node_ptr();
  return detail::emit<T>(
      prim, Shape{B, C, OH, OW}, std::move(out), x.requires_grad(),
      [=](std::span<const T> g) {
        auto dst = grad_sink(*xn);
        for (std::size_t bc = 0; bc < B * C; ++bc)
          for (std::size_t oh = 0; oh < OH; ++oh) {
            const auto [h0, h1] = window(oh, H);
            for (std::size_t ow = 0; ow < OW; ++ow) {
              const auto [w0, w1] = window(ow, W);
              const T share = g[(bc * OH + oh) * OW + ow] /
                              static_cast<T>((h1 - h0) * (w1 - w0));
              for (long ih = h0; ih < h1; ++ih)
                for (long iw = w0; iw < w1; ++iw)
                  dst[bc * H * W + ih * W + iw] += share;
            }
          }
      });
}

template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  detail::require_rank(x, 4, "global_avg_pool");
  const auto B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  std::vector<T> out(B * C);
  const auto xv = x.data();
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    T acc = T(0);
    for (std::size_t i = 0; i < HW; ++i) acc += xv[bc * HW + i];
    out[bc] = acc / static_cast<T>(HW);
  }
  auto xn = x.node_ptr();
  return detail::emit<T>("global_avg_pool", Shape{B, C}, std::move(out),
                         x.requires_grad(), [xn, HW](std::span<const T> g) {
                           auto dst = grad_sink(*xn);
                           for (std::size_t bc = 0; bc < g.size(); ++bc) {
                             const T share = g[bc] / static_cast<T>(HW);
                             for (std::size_t i = 0; i < HW; ++i)
                               dst[bc * HW + i] += share;
                           }
                         });
}

// ---------------------------------------------------------------------------
// Normalisation
// ---------------------------------------------------------------------------

struct BatchNormAttrs {
  bool training = true;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel batch normalisation over (B,H,W). `gamma`/`beta` may be
/// undefined for the non-affine form. In training mode the running
/// statistics are updated in place (unbiased variance); in eval mode the
/// output is a fixed affine map of the input.
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, Tensor<T>& running_mean,
                     Tensor<T>& running_var, const BatchNormAttrs& attrs) {
  constexpr const char* prim = "batch_norm";
  detail::require_rank(x, 4, prim);
  const auto B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  detail::require(running_mean.numel() == C && running_var.numel() == C, prim,
                  "running statistics sized " +
                      std::to_string(running_mean.numel()) + " for " +
                      std::to_string(C) + " channels");
  const bool affine = gamma.defined();
  if (affine)
    detail::require(gamma.numel() == C && beta.defined() && beta.numel() == C,
                    prim, "affine terms must have " + std::to_string(C) +
                              " entries");
  const std::size_t count = B * HW;
  detail::require(!attrs.training || count > 1, prim,
                  "training mode needs more than one value per channel, got " +
                      detail::dims(x.shape()));
  const T eps = static_cast<T>(attrs.eps);
  std::vector<T> mean(C), invstd(C);
  const auto xv = x.data();
  if (attrs.training) {
    auto rm = running_mean.mutable_data();
    auto rv = running_var.mutable_data();
    const T mom = static_cast<T>(attrs.momentum);
    for (std::size_t c = 0; c < C; ++c) {
      T acc = T(0);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < HW; ++i) acc += xv[(b * C + c) * HW + i];
      const T mu = acc / static_cast<T>(count);
      T sq = T(0);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < HW; ++i) {
          const T dlt = xv[(b * C + c) * HW + i] - mu;
          sq += dlt * dlt;
        }
      const T var = sq / static_cast<T>(count);
      mean[c] = mu;
      invstd[c] = T(1) / std::sqrt(var + eps);
      rm[c] = (T(1) - mom) * rm[c] + mom * mu;
      rv[c] = (T(1) - mom) * rv[c] +
              mom * sq / static_cast<T>(count - 1);
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = running_mean[c];
      invstd[c] = T(1) / std::sqrt(running_var[c] + eps);
    }
  }
  std::vector<T> xhat(x.numel());
  std::vector<T> out(x.numel());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const T g = affine ? gamma[c] : T(1);
      const T sh = affine ? beta[c] : T(0);
      for (std::size_t i = 0; i < HW; ++i) {
        const std::size_t idx = (b * C + c) * HW + i;
        xhat[idx] = (xv[idx] - mean[c]) * invstd[c];
        out[idx] = xhat[idx] * g + sh;
      }
    }
  auto xn = x.node_ptr();
  auto gn = gamma.node_ptr();
  auto bn = beta.node_ptr();
  const bool training = attrs.training;
  return detail::emit<T>(
      prim, x.shape(), std::move(out),
      detail::any_requires_grad<T>({&x, &gamma, &beta}),
      [=, xhat = std::move(xhat), invstd = std::move(invstd)](
          std::span<const T> g) {
        std::vector<T> sum_g(C, T(0)), sum_gx(C, T(0));
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < HW; ++i) {
              const std::size_t idx = (b * C + c) * HW + i;
              sum_g[c] += g[idx];
              sum_gx[c] += g[idx] * xhat[idx];
            }
        if (affine && gn->requires_grad) {
          auto dst = grad_sink(*gn);
          for (std::size_t c = 0; c < C; ++c) dst[c] += sum_gx[c];
        }
        if (affine && bn->requires_grad) {
          auto dst = grad_sink(*bn);
          for (std::size_t c = 0; c < C; ++c) dst[c] += sum_g[c];
        }
        if (!xn->requires_grad) return;
        auto dst = grad_sink(*xn);
        const T n = static_cast<T>(count);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t c = 0; c < C; ++c) {
            const T gscale = affine ? gn->data[c] : T(1);
            for (std::size_t i = 0; i < HW; ++i) {
              const std::size_t idx = (b * C + c) * HW + i;
              if (training) {
                dst[idx] += gscale * invstd[c] *
                            (g[idx] - sum_g[c] / n -
                             xhat[idx] * sum_gx[c] / n);
              } else {
                dst[idx] += gscale * invstd[c] * g[idx];
              }
            }
          }
      });
}

// ---------------------------------------------------------------------------
// Softmax and loss
// ---------------------------------------------------------------------------

/// Numerically stable softmax along `axis`.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  detail::require(axis < x.rank(), "softmax",
                  "axis " + std::to_string(axis) + " out of range for " +
                      detail::dims(x.shape()));
  const auto& sh = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= sh[i];
  for (std::size_t i = axis + 1; i < sh.size(); ++i) inner *= sh[i];
  const std::size_t n = sh[axis];
  std::vector<T> out(x.numel());
  const auto xv = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = xv[base];
      for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, xv[base + k * inner]);
      T denom = T(0);
      for (std::size_t k = 0; k < n; ++k) {
        const T e = std::exp(xv[base + k * inner] - mx);
        out[base + k * inner] = e;
        denom += e;
      }
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= denom;
    }
  auto xn = x.node_ptr();
  auto yv = out;  // saved probabilities
  return detail::emit<T>(
      "softmax", sh, std::move(out), x.requires_grad(),
      [xn, y = std::move(yv), outer, inner, n](std::span<const T> g) {
        auto dst = grad_sink(*xn);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            T dot = T(0);
            for (std::size_t k = 0; k < n; ++k)
              dot += g[base + k * inner] * y[base + k * inner];
            for (std::size_t k = 0; k < n; ++k) {
              const std::size_t i = base + k * inner;
              dst[i] += y[i] * (g[i] - dot);
            }
          }
      });
}

/// Mean cross-entropy of logits (B, classes) against integer labels.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits,
                        const std::vector<int>& labels) {
  constexpr const char* prim = "cross_entropy";
  detail::require_rank(logits, 2, prim);
  const auto B = logits.dim(0), K = logits.dim(1);
  detail::require(labels.size() == B, prim,
                  std::to_string(labels.size()) + " labels for logits " +
                      detail::dims(logits.shape()));
  std::vector<T> probs(B * K);
  const auto lv = logits.data();
  T loss = T(0);
  for (std::size_t b = 0; b < B; ++b) {
    const int y = labels[b];
    detail::require(y >= 0 && static_cast<std::size_t>(y) < K, prim,
                    "label " + std::to_string(y) + " outside " +
                        std::to_string(K) + " classes");
    T mx = lv[b * K];
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, lv[b * K + k]);
    T denom = T(0);
    for (std::size_t k = 0; k < K; ++k) {
      probs[b * K + k] = std::exp(lv[b * K + k] - mx);
      denom += probs[b * K + k];
    }
    for (std::size_t k = 0; k < K; ++k) probs[b * K + k] /= denom;
    loss += -(lv[b * K + y] - mx - std::log(denom));
  }
  loss /= static_cast<T>(B);
  auto ln = logits.node_ptr();
  return detail::emit<T>(
      prim, Shape{1}, std::vector<T>{loss}, logits.requires_grad(),
      [ln, probs = std::move(probs), labels, B, K](std::span<const T> g) {
        auto dst = grad_sink(*ln);
        const T s = g[0] / static_cast<T>(B);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t k = 0; k < K; ++k) {
            const T onehot = static_cast<int>(k) == labels[b] ? T(1) : T(0);
            dst[b * K + k] += s * (probs[b * K + k] - onehot);
          }
      });
}

// ---------------------------------------------------------------------------
// Channel and spatial rearrangement
// ---------------------------------------------------------------------------

/// Concatenates (B,Ci,H,W) tensors along the channel axis.
template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
  constexpr const char* prim = "concat_channels";
  detail::require(!xs.empty(), prim, "no inputs");
  for (const auto& x : xs) detail::require_rank(x, 4, prim);
  const auto B = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
  std::size_t C = 0;
  bool needs = false;
  for (const auto& x : xs) {
    detail::require(x.dim(0) == B && x.dim(2) == H && x.dim(3) == W, prim,
                    "extents " + detail::dims(x.shape()) + " vs " +
                        detail::dims(xs[0].shape()));
    C += x.dim(1);
    needs = needs || x.requires_grad();
  }
  const std::size_t HW = H * W;
  std::vector<T> out(B * C * HW);
  std::vector<std::shared_ptr<TensorNode<T>>> nodes;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& x : xs) {
    const auto c = x.dim(1);
    const auto xv = x.data();
    for (std::size_t b = 0; b < B; ++b)
      std::copy_n(xv.begin() + b * c * HW, c * HW,
                  out.begin() + (b * C + off) * HW);
    nodes.push_back(x.node_ptr());
    offsets.push_back(off);
    off += c;
  }
  return detail::emit<T>(
      prim, Shape{B, C, H, W}, std::move(out), needs,
      [nodes, offsets, B, C, HW](std::span<const T> g) {
        for (std::size_t k = 0; k < nodes.size(); ++k) {
          auto& n = *nodes[k];
          if (!n.requires_grad) continue;
          const auto c = n.shape[1];
          auto dst = grad_sink(n);
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < c * HW; ++i)
              dst[b * c * HW + i] += g[(b * C + offsets[k]) * HW + i];
        }
      });
}

/// Channels [begin, end) of a (B,C,H,W) tensor.
template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin,
                         std::size_t end) {
  constexpr const char* prim = "slice_channels";
  detail::require_rank(x, 4, prim);
  const auto B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  detail::require(begin < end && end <= C, prim,
                  "range [" + std::to_string(begin) + "," + std::to_string(end) +
                      ") invalid for " + detail::dims(x.shape()));
  const std::size_t HW = H * W, c = end - begin;
  std::vector<T> out(B * c * HW);
  const auto xv = x.data();
  for (std::size_t b = 0; b < B; ++b)
    std::copy_n(xv.begin() + (b * C + begin) * HW, c * HW,
                out.begin() + b * c * HW);
  auto xn = x.node_ptr();
  return detail::emit<T>(prim, Shape{B, c, H, W}, std::move(out),
                         x.requires_grad(),
                         [xn, B, C, c, HW, begin](std::span<const T> g) {
                           auto dst = grad_sink(*xn);
                           for (std::size_t b = 0; b < B; ++b)
                             for (std::size_t i = 0; i < c * HW; ++i)
                               dst[(b * C + begin) * HW + i] +=
                                   g[b * c * HW + i];
                         });
}

/// out channel k = in channel perm[k].
template <class T>
Tensor<T> permute_channels(const Tensor<T>& x,
                           const std::vector<std::size_t>& perm) {
  constexpr const char* prim = "permute_channels";
  detail::require_rank(x, 4, prim);
  const auto B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  detail::require(perm.size() == C, prim,
                  "permutation of " + std::to_string(perm.size()) +
                      " entries for " + detail::dims(x.shape()));
  std::vector<bool> seen(C, false);
  for (auto p : perm) {
    detail::require(p < C && !seen[p], prim, "not a permutation");
    seen[p] = true;
  }
  std::vector<T> out(x.numel());
  const auto xv = x.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 0; k < C; ++k)
      std::copy_n(xv.begin() + (b * C + perm[k]) * HW, HW,
                  out.begin() + (b * C + k) * HW);
  auto xn = x.node_ptr();
  return detail::emit<T>(prim, x.shape(), std::move(out), x.requires_grad(),
                         [xn, perm, B, C, HW](std::span<const T> g) {
                           auto dst = grad_sink(*xn);
                           for (std::size_t b = 0; b < B; ++b)
                             for (std::size_t k = 0; k < C; ++k)
                               for (std::size_t i = 0; i < HW; ++i)
                                 dst[(b * C + perm[k]) * HW + i] +=
                                     g[(b * C + k) * HW + i];
                         });
}

/// Spatial window [top, top+h) x [left, left+w).
template <class T>
Tensor<T> crop(const Tensor<T>& x, std::size_t top, std::size_t left,
               std::size_t h, std::size_t w) {
  constexpr const char* prim = "crop";
  detail::require_rank(x, 4, prim);
  const auto B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  detail::require(h > 0 && w > 0 && top + h <= H && left + w <= W, prim,
                  "window exceeds " + detail::dims(x.shape()));
  std::vector<T> out(B * C * h * w);
  const auto xv = x.data();
  for (std::size_t bc = 0; bc < B * C; ++bc)
    for (std::size_t i = 0; i < h; ++i)
      std::copy_n(xv.begin() + bc * H * W + (top + i) * W + left, w,
                  out.begin() + (bc * h + i) * w);
  auto xn = x.node_ptr();
  return detail::emit<T>(
      prim, Shape{B, C, h, w}, std::move(out), x.requires_grad(),
      [xn, B, C, H, W, top, left, h, w](std::span<const T> g) {
        auto dst = grad_sink(*xn);
        for (std::size_t bc = 0; bc < B * C; ++bc)
          for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j)
              dst[bc * H * W + (top + i) * W + left + j] +=
                  g[(bc * h + i) * w + j];
      });
}

/// Contiguous range of a flattened tensor, returned as rank-1.
template <class T>
Tensor<T> slice_flat(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  detail::require(count > 0 && begin + count <= x.numel(), "slice_flat",
                  "range [" + std::to_string(begin) + "," +
                      std::to_string(begin + count) + ") invalid for " +
                      detail::dims(x.shape()));
  const auto xv = x.data();
  std::vector<T> out(xv.begin() + begin, xv.begin() + begin + count);
  auto xn = x.node_ptr();
  return detail::emit<T>("slice_flat", Shape{count}, std::move(out),
                         x.requires_grad(),
                         [xn, begin](std::span<const T> g) {
                           auto dst = grad_sink(*xn);
                           for (std::size_t i = 0; i < g.size(); ++i)
                             dst[begin + i] += g[i];
                         });
}

}  // namespace pcdarts
