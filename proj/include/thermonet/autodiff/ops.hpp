/*
 * Copyright 2026 The Thermonet Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// Differentiable operations over Graph nodes. Each op computes its forward
// value eagerly and records the adjoint it needs for the reverse sweep.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "thermonet/autodiff/graph.hpp"
#include "thermonet/autodiff/kernels.hpp"

namespace thermonet::ad {

namespace detail {

template <class T>
void require_same_graph(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.graph != b.graph) throw Error(std::string(op) + ": operands from different graphs");
}

template <class T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw Error(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                to_string(b.shape()));
  }
}

}  // namespace detail

/// y[i,j] = sum_k x[i,k] W[k,j] + b[j]
template <class T>
Var<T> dense(Var<T> x, Var<T> w, const Var<T>* b = nullptr) {
  detail::require_same_graph(x, w, "dense");
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[0]) {
    throw Error("dense: x " + to_string(xs) + " incompatible with W " + to_string(ws));
  }
  const std::size_t n = xs[0], in = xs[1], out = ws[1];
  if (b && (b->shape() != Shape{out})) {
    throw Error("dense: bias " + to_string(b->shape()) + " does not match output width " +
                std::to_string(out));
  }
  Tensor<T> y(Shape{n, out});
  if (b) {
    const auto& bv = b->value();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < out; ++j) y[i * out + j] = bv[j];
  }
  kernels::gemm_nn(n, out, in, x.value().data().data(), w.value().data().data(), y.data().data());

  Graph<T>& g = *x.graph;
  const std::size_t xi = x.id, wi = w.id;
  const std::size_t bi = b ? b->id : 0;
  const bool has_b = b != nullptr;
  auto fn = [xi, wi, bi, has_b, n, in, out](Graph<T>& gr, std::size_t self) {
    const T* dy = gr.grad(self).data().data();
    if (gr.requires_grad(xi)) {
      kernels::gemm_nt(n, in, out, dy, gr.value(wi).data().data(), gr.grad(xi).data().data());
    }
    if (gr.requires_grad(wi)) {
      kernels::gemm_tn(in, out, n, gr.value(xi).data().data(), dy, gr.grad(wi).data().data());
    }
    if (has_b && gr.requires_grad(bi)) {
      T* db = gr.grad(bi).data().data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < out; ++j) db[j] += dy[i * out + j];
    }
  };
  if (b) return g.record("dense", std::move(y), {x, w, *b}, fn);
  return g.record("dense", std::move(y), {x, w}, fn);
}

template <class T>
Var<T> dense(Var<T> x, Var<T> w, Var<T> b) {
  return dense(x, w, &b);
}

using Triple = std::array<std::size_t, 3>;

/// Output extent of a strided, zero-padded window along one axis.
inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride,
                                   std::size_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

/// 3D cross-correlation. x is [C_in,D,H,W] or [N,C_in,D,H,W]; kernels are
/// [C_out,C_in,kd,kh,kw]; optional bias is [C_out].
template <class T>
Var<T> conv3d(Var<T> x, Var<T> k, const Var<T>* bias, Triple stride, Triple pad) {
  detail::require_same_graph(x, k, "conv3d");
  const Shape& xs = x.shape();
  const Shape& ks = k.shape();
  if (xs.size() != 4 && xs.size() != 5) {
    throw Error("conv3d: input must be [C,D,H,W] or [N,C,D,H,W], got " + to_string(xs));
  }
  if (ks.size() != 5) throw Error("conv3d: kernels must be rank 5, got " + to_string(ks));
  const bool batched = xs.size() == 5;
  const std::size_t off = batched ? 1 : 0;
  const std::size_t batch = batched ? xs[0] : 1;
  kernels::ConvGeometry geo;
  geo.in_channels = xs[off];
  geo.out_channels = ks[0];
  if (ks[1] != geo.in_channels) {
    throw Error("conv3d: kernel expects " + std::to_string(ks[1]) + " input channels, input has " +
                std::to_string(geo.in_channels));
  }
  for (std::size_t a = 0; a < 3; ++a) {
    if (stride[a] == 0) throw Error("conv3d: stride must be >= 1");
    geo.in[a] = xs[off + 1 + a];
    geo.kernel[a] = ks[2 + a];
    geo.stride[a] = stride[a];
    geo.pad[a] = pad[a];
    if (geo.kernel[a] > geo.in[a] + 2 * pad[a]) {
      throw Error("conv3d: kernel " + to_string(ks) + " larger than padded input " +
                  to_string(xs) + " on spatial axis " + std::to_string(a));
    }
    geo.out[a] = conv_out_extent(geo.in[a], geo.kernel[a], stride[a], pad[a]);
  }
  if (bias && bias->shape() != Shape{geo.out_channels}) {
    throw Error("conv3d: bias " + to_string(bias->shape()) + " does not match " +
                std::to_string(geo.out_channels) + " output channels");
  }

  Shape ys = batched ? Shape{batch, geo.out_channels, geo.out[0], geo.out[1], geo.out[2]}
                     : Shape{geo.out_channels, geo.out[0], geo.out[1], geo.out[2]};
  Tensor<T> y(ys);
  const std::size_t npos = geo.out_positions();
  const std::size_t in_stride = geo.in_channels * geo.in_positions();
  const std::size_t out_stride = geo.out_channels * npos;
  std::vector<T> cols(geo.patch() * npos);
  const T* xv = x.value().data().data();
  const T* kv = k.value().data().data();
  for (std::size_t n = 0; n < batch; ++n) {
    kernels::im2col(geo, xv + n * in_stride, cols.data());
    T* yn = y.data().data() + n * out_stride;
    if (bias) {
      const auto& bv = bias->value();
      for (std::size_t c = 0; c < geo.out_channels; ++c)
        for (std::size_t q = 0; q < npos; ++q) yn[c * npos + q] = bv[c];
    }
    kernels::gemm_nn(geo.out_channels, npos, geo.patch(), kv, cols.data(), yn);
  }

  Graph<T>& g = *x.graph;
  const std::size_t xi = x.id, ki = k.id, bi = bias ? bias->id : 0;
  const bool has_b = bias != nullptr;
  auto fn = [geo, batch, xi, ki, bi, has_b, in_stride, out_stride, npos](Graph<T>& gr,
                                                                          std::size_t self) {
    const T* dy = gr.grad(self).data().data();
    const bool need_x = gr.requires_grad(xi);
    const bool need_k = gr.requires_grad(ki);
    const T* xv = gr.value(xi).data().data();
    const T* kv = gr.value(ki).data().data();
    std::vector<T> buf(geo.patch() * npos);  // fully overwritten before each use
    for (std::size_t n = 0; n < batch; ++n) {
      const T* dyn = dy + n * out_stride;
      if (need_k) {
        kernels::im2col(geo, xv + n * in_stride, buf.data());
        kernels::gemm_nt(geo.out_channels, geo.patch(), npos, dyn, buf.data(),
                         gr.grad(ki).data().data());
      }
      if (need_x) {
        kernels::gemm_tn(geo.patch(), npos, geo.out_channels, kv, dyn, buf.data(), true);
        kernels::col2im(geo, buf.data(), gr.grad(xi).data().data() + n * in_stride);
      }
      if (has_b && gr.requires_grad(bi)) {
        T* db = gr.grad(bi).data().data();
        for (std::size_t c = 0; c < geo.out_channels; ++c) {
          T acc{0};
          for (std::size_t q = 0; q < npos; ++q) acc += dyn[c * npos + q];
          db[c] += acc;
        }
      }
    }
  };
  if (bias) return g.record("conv3d", std::move(y), {x, k, *bias}, fn);
  return g.record("conv3d", std::move(y), {x, k}, fn);
}

template <class T>
Var<T> conv3d(Var<T> x, Var<T> k, Triple stride, Triple pad) {
  return conv3d(x, k, static_cast<const Var<T>*>(nullptr), stride, pad);
}

template <class T>
Var<T> conv3d(Var<T> x, Var<T> k, Var<T> bias, Triple stride, Triple pad) {
  return conv3d(x, k, &bias, stride, pad);
}

template <class T>
Var<T> relu(Var<T> x) {
  Tensor<T> y = x.value();
  // NaN passes through so a poisoned input surfaces as a non-finite loss.
  for (auto& v : y.storage()) v = v < T{0} ? T{0} : v;
  const std::size_t xi = x.id;
  return x.graph->record("relu", std::move(y), {x}, [xi](Graph<T>& gr, std::size_t self) {
    const auto& dy = gr.grad(self).storage();
    const auto& xv = gr.value(xi).storage();
    auto& dx = gr.grad(xi).storage();
    for (std::size_t i = 0; i < dy.size(); ++i) {
      if (xv[i] > T{0}) dx[i] += dy[i];
    }
  });
}

template <class T>
Var<T> tanh(Var<T> x) {
  Tensor<T> y = x.value();
  for (auto& v : y.storage()) v = std::tanh(v);
  return x.graph->record("tanh", std::move(y), {x}, [xi = x.id](Graph<T>& gr, std::size_t self) {
    const auto& dy = gr.grad(self).storage();
    const auto& yv = gr.value(self).storage();
    auto& dx = gr.grad(xi).storage();
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * (T{1} - yv[i] * yv[i]);
  });
}

template <class T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> y = x.value().reshaped(std::move(shape));
  const std::size_t xi = x.id;
  return x.graph->record("reshape", std::move(y), {x}, [xi](Graph<T>& gr, std::size_t self) {
    const auto& dy = gr.grad(self).storage();
    auto& dx = gr.grad(xi).storage();
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
  });
}

/// Collapses axes [start_dim, rank) into one, keeping row-major order.
template <class T>
Var<T> flatten(Var<T> x, std::size_t start_dim = 0) {
  const Shape& s = x.shape();
  if (start_dim > s.size()) throw Error("flatten: start_dim beyond rank");
  Shape out(s.begin(), s.begin() + static_cast<long>(start_dim));
  std::size_t tail = 1;
  for (std::size_t a = start_dim; a < s.size(); ++a) tail *= s[a];
  out.push_back(tail);
  return reshape(x, std::move(out));
}

/// Concatenates along the last axis; `a` comes first.
template <class T>
Var<T> concat(Var<T> a, Var<T> b) {
  detail::require_same_graph(a, b, "concat");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.empty() || as.size() != bs.size() ||
      !std::equal(as.begin(), as.end() - 1, bs.begin())) {
    throw Error("concat: leading dimensions differ " + to_string(as) + " vs " + to_string(bs));
  }
  const std::size_t p = as.back(), q = bs.back();
  const std::size_t rows = a.value().size() / p;
  Shape ys = as;
  ys.back() = p + q;
  Tensor<T> y(ys);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < p; ++j) y[r * (p + q) + j] = a.value()[r * p + j];
    for (std::size_t j = 0; j < q; ++j) y[r * (p + q) + p + j] = b.value()[r * q + j];
  }
  const std::size_t ai = a.id, bi = b.id;
  return a.graph->record("concat", std::move(y), {a, b},
                         [ai, bi, p, q, rows](Graph<T>& gr, std::size_t self) {
                           const auto& dy = gr.grad(self).storage();
                           if (gr.requires_grad(ai)) {
                             auto& da = gr.grad(ai).storage();
                             for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t j = 0; j < p; ++j) da[r * p + j] += dy[r * (p + q) + j];
                           }
                           if (gr.requires_grad(bi)) {
                             auto& db = gr.grad(bi).storage();
                             for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t j = 0; j < q; ++j)
                                 db[r * q + j] += dy[r * (p + q) + p + j];
                           }
                         });
}

/// Nearest-neighbour resize of the three trailing spatial axes of a
/// [C,D,H,W] or [N,C,D,H,W] tensor; source index is floor(i * in / out).
template <class T>
Var<T> upsample_nearest(Var<T> x, Triple size) {
  const Shape& xs = x.shape();
  if (xs.size() < 4) throw Error("upsample_nearest: need at least 4 axes, got " + to_string(xs));
  const std::size_t r = xs.size();
  const Triple in{xs[r - 3], xs[r - 2], xs[r - 1]};
  std::size_t planes = 1;
  for (std::size_t a = 0; a + 3 < r; ++a) planes *= xs[a];
  Shape ys = xs;
  for (std::size_t a = 0; a < 3; ++a) {
    if (size[a] == 0) throw Error("upsample_nearest: zero target size");
    ys[r - 3 + a] = size[a];
  }
  std::vector<std::size_t> src;
  src.reserve(size[0] * size[1] * size[2]);
  for (std::size_t d = 0; d < size[0]; ++d) {
    const std::size_t sd = d * in[0] / size[0];
    for (std::size_t h = 0; h < size[1]; ++h) {
      const std::size_t sh = h * in[1] / size[1];
      for (std::size_t w = 0; w < size[2]; ++w) {
        src.push_back((sd * in[1] + sh) * in[2] + w * in[2] / size[2]);
      }
    }
  }
  const std::size_t in_plane = in[0] * in[1] * in[2];
  const std::size_t out_plane = src.size();
  Tensor<T> y(ys);
  const auto& xv = x.value().storage();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < out_plane; ++i) y[p * out_plane + i] = xv[p * in_plane + src[i]];
  const std::size_t xi = x.id;
  return x.graph->record("upsample_nearest", std::move(y), {x},
                         [xi, src = std::move(src), planes, in_plane, out_plane](
                             Graph<T>& gr, std::size_t self) {
                           const auto& dy = gr.grad(self).storage();
                           auto& dx = gr.grad(xi).storage();
                           for (std::size_t p = 0; p < planes; ++p)
                             for (std::size_t i = 0; i < out_plane; ++i)
                               dx[p * in_plane + src[i]] += dy[p * out_plane + i];
                         });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same_graph(a, b, "add");
  detail::require_same_shape(a, b, "add");
  Tensor<T> y = a.value();
  const auto& bv = b.value().storage();
  for (std::size_t i = 0; i < bv.size(); ++i) y[i] += bv[i];
  const std::size_t ai = a.id, bi = b.id;
  return a.graph->record("add", std::move(y), {a, b}, [ai, bi](Graph<T>& gr, std::size_t self) {
    const auto& dy = gr.grad(self).storage();
    for (std::size_t id : {ai, bi}) {
      if (!gr.requires_grad(id)) continue;
      auto& d = gr.grad(id).storage();
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i];
    }
  });
}

/// y[n, ...] = x[n, ...] + b[...]: b is broadcast over the leading axis.
template <class T>
Var<T> add_bias(Var<T> x, Var<T> b) {
  detail::require_same_graph(x, b, "add_bias");
  const Shape& xs = x.shape();
  if (xs.size() < 2 || Shape(xs.begin() + 1, xs.end()) != b.shape()) {
    throw Error("add_bias: bias " + to_string(b.shape()) + " does not match trailing axes of " +
                to_string(xs));
  }
  const std::size_t n = xs[0], m = b.value().size();
  Tensor<T> y = x.value();
  const auto& bv = b.value().storage();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) y[i * m + j] += bv[j];
  const std::size_t xi = x.id, bi = b.id;
  return x.graph->record("add_bias", std::move(y), {x, b},
                         [xi, bi, n, m](Graph<T>& gr, std::size_t self) {
                           const auto& dy = gr.grad(self).storage();
                           if (gr.requires_grad(xi)) {
                             auto& d = gr.grad(xi).storage();
                             for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i];
                           }
                           if (gr.requires_grad(bi)) {
                             auto& d = gr.grad(bi).storage();
                             for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t j = 0; j < m; ++j) d[j] += dy[i * m + j];
                           }
                         });
}

template <class T>
Var<T> scale(Var<T> a, T c) {
  Tensor<T> y = a.value();
  for (auto& v : y.storage()) v *= c;
  const std::size_t ai = a.id;
  return a.graph->record("scale", std::move(y), {a}, [ai, c](Graph<T>& gr, std::size_t self) {
    const auto& dy = gr.grad(self).storage();
    auto& d = gr.grad(ai).storage();
    for (std::size_t i = 0; i < dy.size(); ++i) d[i] += c * dy[i];
  });
}

template <class T>
Var<T> sum(Var<T> a) {
  T acc{0};
  for (T v : a.value().storage()) acc += v;
  const std::size_t ai = a.id;
  return a.graph->record("sum", Tensor<T>::scalar(acc), {a},
                         [ai](Graph<T>& gr, std::size_t self) {
                           const T dy = gr.grad(self)[0];
                           for (auto& d : gr.grad(ai).storage()) d += dy;
                         });
}

template <class T>
Var<T> mean(Var<T> a) {
  return scale(sum(a), T{1} / static_cast<T>(a.value().size()));
}

/// Mean over all elements of (pred - target)^2.
template <class T>
Var<T> mse(Var<T> pred, Var<T> target) {
  detail::require_same_graph(pred, target, "mse");
  detail::require_same_shape(pred, target, "mse");
  const auto& p = pred.value().storage();
  const auto& t = target.value().storage();
  T acc{0};
  for (std::size_t i = 0; i < p.size(); ++i) {
    const T d = p[i] - t[i];
    acc += d * d;
  }
  const T inv_n = T{1} / static_cast<T>(p.size());
  const std::size_t pi = pred.id, ti = target.id;
  return pred.graph->record(
      "mse", Tensor<T>::scalar(acc * inv_n), {pred, target},
      [pi, ti, inv_n](Graph<T>& gr, std::size_t self) {
        const T dy = gr.grad(self)[0];
        const auto& p = gr.value(pi).storage();
        const auto& t = gr.value(ti).storage();
        const T c = T{2} * inv_n * dy;
        if (gr.requires_grad(pi)) {
          auto& d = gr.grad(pi).storage();
          for (std::size_t i = 0; i < p.size(); ++i) d[i] += c * (p[i] - t[i]);
        }
        if (gr.requires_grad(ti)) {
          auto& d = gr.grad(ti).storage();
          for (std::size_t i = 0; i < p.size(); ++i) d[i] -= c * (p[i] - t[i]);
        }
      });
}

/// KL(N(mu, exp(logvar)) || N(0, I)) summed over every element:
/// 0.5 * sum(mu^2 + exp(logvar) - logvar - 1).
template <class T>
Var<T> kld(Var<T> mu, Var<T> logvar) {
  detail::require_same_graph(mu, logvar, "kld");
  detail::require_same_shape(mu, logvar, "kld");
  const auto& m = mu.value().storage();
  const auto& lv = logvar.value().storage();
  T acc{0};
  for (std::size_t i = 0; i < m.size(); ++i) acc += m[i] * m[i] + std::exp(lv[i]) - lv[i] - T{1};
  const std::size_t mi = mu.id, li = logvar.id;
  return mu.graph->record("kld", Tensor<T>::scalar(T{0.5} * acc), {mu, logvar},
                          [mi, li](Graph<T>& gr, std::size_t self) {
                            const T dy = gr.grad(self)[0];
                            if (gr.requires_grad(mi)) {
                              const auto& m = gr.value(mi).storage();
                              auto& d = gr.grad(mi).storage();
                              for (std::size_t i = 0; i < m.size(); ++i) d[i] += dy * m[i];
                            }
                            if (gr.requires_grad(li)) {
                              const auto& lv = gr.value(li).storage();
                              auto& d = gr.grad(li).storage();
                              for (std::size_t i = 0; i < lv.size(); ++i)
                                d[i] += dy * T{0.5} * (std::exp(lv[i]) - T{1});
                            }
                          });
}

/// z = mu + exp(0.5 * logvar) * eps. `eps` is data, never differentiated.
template <class T>
Var<T> reparameterize(Var<T> mu, Var<T> logvar, const Tensor<T>& eps) {
  detail::require_same_graph(mu, logvar, "reparameterize");
  detail::require_same_shape(mu, logvar, "reparameterize");
  if (eps.shape() != mu.shape()) {
    throw Error("reparameterize: eps " + to_string(eps.shape()) + " vs mu " +
                to_string(mu.shape()));
  }
  Tensor<T> z = mu.value();
  const auto& lv = logvar.value().storage();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] += std::exp(T{0.5} * lv[i]) * eps[i];
  const std::size_t mi = mu.id, li = logvar.id;
  return mu.graph->record("reparameterize", std::move(z), {mu, logvar},
                          [mi, li, eps](Graph<T>& gr, std::size_t self) {
                            const auto& dz = gr.grad(self).storage();
                            if (gr.requires_grad(mi)) {
                              auto& d = gr.grad(mi).storage();
                              for (std::size_t i = 0; i < dz.size(); ++i) d[i] += dz[i];
                            }
                            if (gr.requires_grad(li)) {
                              const auto& lv = gr.value(li).storage();
                              auto& d = gr.grad(li).storage();
                              for (std::size_t i = 0; i < dz.size(); ++i)
                                d[i] += dz[i] * T{0.5} * std::exp(T{0.5} * lv[i]) * eps[i];
                            }
                          });
}

/// Copy of a node's value as a constant leaf.
template <class T>
Var<T> detach(Var<T> x) {
  return x.graph->leaf(x.value(), false);
}

}  // namespace thermonet::ad
