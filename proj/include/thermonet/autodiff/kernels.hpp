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

// Dense kernels behind the graph operations. Every loop has a fixed
// iteration order so results are bit-reproducible for identical inputs.
// Inner loops run over contiguous memory and vectorize without reassociation.

#include <algorithm>
#include <array>
#include <cstddef>
#include <vector>

namespace thermonet::ad::kernels {

/// C[M,N] += A[M,K] * B[K,N]
template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T{0}) continue;
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

/// C[M,N] += A[K,M]^T * B[K,N], or C = A^T * B when `overwrite` is set.
template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool overwrite = false) {
  std::size_t p = 0;
  if (overwrite) {
    for (std::size_t i = 0; i < m; ++i) {
      const T av = a[i];
      T* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] = av * b[j];
    }
    p = 1;
  }
  for (; p < k; ++p) {
    const T* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = a[p * m + i];
      if (av == T{0}) continue;
      T* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

/// C[M,N] += A[M,K] * B[N,K]^T. Dot products use eight interleaved partial
/// sums combined in a fixed order.
template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  constexpr std::size_t lanes = 8;
  const std::size_t kv = k - k % lanes;
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* bj = b + j * k;
      T part[lanes] = {};
      for (std::size_t p = 0; p < kv; p += lanes)
        for (std::size_t l = 0; l < lanes; ++l) part[l] += ai[p + l] * bj[p + l];
      T acc = ((part[0] + part[1]) + (part[2] + part[3])) + ((part[4] + part[5]) + (part[6] + part[7]));
      for (std::size_t p = kv; p < k; ++p) acc += ai[p] * bj[p];
      c[i * n + j] += acc;
    }
  }
}

/// Geometry of one 3D cross-correlation.
struct ConvGeometry {
  std::size_t in_channels = 0, out_channels = 0;
  std::array<std::size_t, 3> in{};      // D, H, W
  std::array<std::size_t, 3> kernel{};  // kd, kh, kw
  std::array<std::size_t, 3> stride{1, 1, 1};
  std::array<std::size_t, 3> pad{0, 0, 0};
  std::array<std::size_t, 3> out{};

  std::size_t patch() const { return in_channels * kernel[0] * kernel[1] * kernel[2]; }
  std::size_t out_positions() const { return out[0] * out[1] * out[2]; }
  std::size_t in_positions() const { return in[0] * in[1] * in[2]; }
};

/// Output indices [lo, hi) whose window tap `offset` lands inside [0, in).
inline void valid_range(std::size_t in, std::size_t out, std::size_t stride, std::size_t pad,
                        std::size_t offset, std::size_t& lo, std::size_t& hi) {
  // o * stride + offset - pad in [0, in)
  const long s = static_cast<long>(stride);
  const long shift = static_cast<long>(offset) - static_cast<long>(pad);
  long l = shift >= 0 ? 0 : (-shift + s - 1) / s;
  long h = (static_cast<long>(in) - shift + s - 1) / s;
  if (h < 0) h = 0;
  l = std::min<long>(l, static_cast<long>(out));
  h = std::min<long>(h, static_cast<long>(out));
  lo = static_cast<std::size_t>(l);
  hi = static_cast<std::size_t>(std::max(l, h));
}

/// Visits the unrolled convolution as runs along the innermost output axis,
/// skipping taps that fall into padding. `fn(col_offset, x_offset, count)`
/// handles one run; the input side advances by stride[2] per element.
template <class Fn>
void for_each_run(const ConvGeometry& g, Fn&& fn) {
  const std::size_t npos = g.out_positions();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const std::size_t xc = c * g.in_positions();
    for (std::size_t a = 0; a < g.kernel[0]; ++a) {
      std::size_t d0, d1;
      valid_range(g.in[0], g.out[0], g.stride[0], g.pad[0], a, d0, d1);
      for (std::size_t b = 0; b < g.kernel[1]; ++b) {
        std::size_t h0, h1;
        valid_range(g.in[1], g.out[1], g.stride[1], g.pad[1], b, h0, h1);
        for (std::size_t e = 0; e < g.kernel[2]; ++e, ++row) {
          std::size_t w0, w1;
          valid_range(g.in[2], g.out[2], g.stride[2], g.pad[2], e, w0, w1);
          if (w1 <= w0) continue;
          for (std::size_t od = d0; od < d1; ++od) {
            const std::size_t id = od * g.stride[0] + a - g.pad[0];
            for (std::size_t oh = h0; oh < h1; ++oh) {
              const std::size_t ih = oh * g.stride[1] + b - g.pad[1];
              const std::size_t q = (od * g.out[1] + oh) * g.out[2] + w0;
              const std::size_t iw = w0 * g.stride[2] + e - g.pad[2];
              fn(row * npos + q, xc + (id * g.in[1] + ih) * g.in[2] + iw, w1 - w0);
            }
          }
        }
      }
    }
  }
}

/// cols[(c,a,b,e), (od,oh,ow)] with zeros where the window leaves the input.
/// Every element of `cols` is written.
template <class T>
void im2col(const ConvGeometry& g, const T* x, T* cols) {
  const std::size_t npos = g.out_positions();
  const std::size_t line = g.out[2];
  const std::size_t plane = g.out[1] * g.out[2];
  const std::size_t sw = g.stride[2];
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const T* xc = x + c * g.in_positions();
    for (std::size_t a = 0; a < g.kernel[0]; ++a) {
      std::size_t d0, d1;
      valid_range(g.in[0], g.out[0], g.stride[0], g.pad[0], a, d0, d1);
      for (std::size_t b = 0; b < g.kernel[1]; ++b) {
        std::size_t h0, h1;
        valid_range(g.in[1], g.out[1], g.stride[1], g.pad[1], b, h0, h1);
        for (std::size_t e = 0; e < g.kernel[2]; ++e, ++row) {
          std::size_t w0, w1;
          valid_range(g.in[2], g.out[2], g.stride[2], g.pad[2], e, w0, w1);
          T* dst = cols + row * npos;
          for (std::size_t od = 0; od < g.out[0]; ++od) {
            T* pl = dst + od * plane;
            if (od < d0 || od >= d1 || w1 <= w0) {
              std::fill(pl, pl + plane, T{0});
              continue;
            }
            const std::size_t id = od * g.stride[0] + a - g.pad[0];
            for (std::size_t oh = 0; oh < g.out[1]; ++oh) {
              T* ln = pl + oh * line;
              if (oh < h0 || oh >= h1) {
                std::fill(ln, ln + line, T{0});
                continue;
              }
              const std::size_t ih = oh * g.stride[1] + b - g.pad[1];
              const T* src = xc + (id * g.in[1] + ih) * g.in[2] + (w0 * sw + e - g.pad[2]);
              for (std::size_t ow = 0; ow < w0; ++ow) ln[ow] = T{0};
              if (sw == 1) {
                for (std::size_t i = 0; i < w1 - w0; ++i) ln[w0 + i] = src[i];
              } else {
                for (std::size_t i = 0; i < w1 - w0; ++i) ln[w0 + i] = src[i * sw];
              }
              for (std::size_t ow = w1; ow < line; ++ow) ln[ow] = T{0};
            }
          }
        }
      }
    }
  }
}

/// Scatter-adds columns back onto the input grid (adjoint of im2col).
template <class T>
void col2im(const ConvGeometry& g, const T* cols, T* dx) {
  const std::size_t sw = g.stride[2];
  for_each_run(g, [&](std::size_t src, std::size_t dst, std::size_t count) {
    const T* in = cols + src;
    T* out = dx + dst;
    if (sw == 1) {
      for (std::size_t i = 0; i < count; ++i) out[i] += in[i];
    } else {
      for (std::size_t i = 0; i < count; ++i) out[i * sw] += in[i];
    }
  });
}

}  // namespace thermonet::ad::kernels
