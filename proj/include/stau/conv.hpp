// Copyright 2026 The stau Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Convolution, transposed convolution and layer normalization with reverse-
// mode gradients. Convolutions run through im2col plus three small matmul
// kernels. Accumulation is 64-bit with a fixed element order everywhere;
// parallelism only splits independent output elements across workers.

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "stau/tensor.hpp"

namespace stau {
namespace detail {

// Reusable per-thread scratch. Buffers passed into worker lambdas are sized
// by the calling thread; workers only write through the raw pointer.
inline std::vector<float>& f_scratch(int slot, long long n) {
  thread_local std::vector<float> bufs[6];
  auto& v = bufs[slot];
  if (static_cast<long long>(v.size()) < n) v.resize(static_cast<size_t>(n));
  return v;
}

inline std::vector<double>& d_scratch(int slot, long long n) {
  thread_local std::vector<double> bufs[4];
  auto& v = bufs[slot];
  if (static_cast<long long>(v.size()) < n) v.resize(static_cast<size_t>(n));
  return v;
}

inline std::vector<double>& acc_scratch() {
  thread_local std::vector<double> buf;
  return buf;
}

struct ConvGeom {
  int cin, h, w;      // input plane
  int k, stride, pad; // kernel geometry
  int oh, ow;         // output plane
  long long rows() const { return static_cast<long long>(cin) * k * k; }
  long long cols() const { return static_cast<long long>(oh) * ow; }
};

// col[r][p] with r=(ci,kh,kw), p=(oh,ow); zero padding outside the plane.
inline void im2col(const float* img, const ConvGeom& g, float* col) {
  const long long P = g.cols();
  long long r = 0;
  for (int ci = 0; ci < g.cin; ++ci) {
    const float* plane = img + static_cast<long long>(ci) * g.h * g.w;
    for (int kh = 0; kh < g.k; ++kh) {
      for (int kw = 0; kw < g.k; ++kw, ++r) {
        float* dst = col + r * P;
        for (int oh = 0; oh < g.oh; ++oh) {
          int ih = oh * g.stride - g.pad + kh;
          if (ih < 0 || ih >= g.h) {
            for (int ow = 0; ow < g.ow; ++ow) dst[oh * g.ow + ow] = 0.0f;
            continue;
          }
          const float* src_row = plane + static_cast<long long>(ih) * g.w;
          for (int ow = 0; ow < g.ow; ++ow) {
            int iw = ow * g.stride - g.pad + kw;
            dst[oh * g.ow + ow] = (iw < 0 || iw >= g.w) ? 0.0f : src_row[iw];
          }
        }
      }
    }
  }
}

// img_acc[ci][ih][iw] += col[r][p] for the im2col mapping, fixed (r,p) order.
inline void col2im_add(const float* col, const ConvGeom& g, double* img_acc) {
  const long long P = g.cols();
  long long r = 0;
  for (int ci = 0; ci < g.cin; ++ci) {
    double* plane = img_acc + static_cast<long long>(ci) * g.h * g.w;
    for (int kh = 0; kh < g.k; ++kh) {
      for (int kw = 0; kw < g.k; ++kw, ++r) {
        const float* src = col + r * P;
        for (int oh = 0; oh < g.oh; ++oh) {
          int ih = oh * g.stride - g.pad + kh;
          if (ih < 0 || ih >= g.h) continue;
          double* dst_row = plane + static_cast<long long>(ih) * g.w;
          for (int ow = 0; ow < g.ow; ++ow) {
            int iw = ow * g.stride - g.pad + kw;
            if (iw >= 0 && iw < g.w) dst_row[iw] += src[oh * g.ow + ow];
          }
        }
      }
    }
  }
}

// out[q][p] = bias[q] + sum_r W[q][r]*col[r][p]; per-column double
// accumulators, r ascending. Output rows run four at a time so each col row
// is streamed once per block; the per-element add order is unchanged.
inline void matmul_w_col(const float* Wmat, const float* col, const float* bias, float* out,
                         long long Q, long long R, long long P) {
  auto& acc = acc_scratch();
  if (static_cast<long long>(acc.size()) < 4 * P) acc.resize(4 * P);
  double* __restrict__ a0 = acc.data();
  double* __restrict__ a1 = a0 + P;
  double* __restrict__ a2 = a1 + P;
  double* __restrict__ a3 = a2 + P;
  long long q = 0;
  for (; q + 4 <= Q; q += 4) {
    for (int j = 0; j < 4; ++j) {
      const double b = bias ? static_cast<double>(bias[q + j]) : 0.0;
      for (long long p = 0; p < P; ++p) acc[j * P + p] = b;
    }
    const float* w0 = Wmat + q * R;
    const float* w1 = w0 + R;
    const float* w2 = w1 + R;
    const float* w3 = w2 + R;
    for (long long r = 0; r < R; ++r) {
      const double v0 = w0[r], v1 = w1[r], v2 = w2[r], v3 = w3[r];
      const float* __restrict__ c = col + r * P;
      for (long long p = 0; p < P; ++p) {
        const double cp = c[p];
        a0[p] += v0 * cp;
        a1[p] += v1 * cp;
        a2[p] += v2 * cp;
        a3[p] += v3 * cp;
      }
    }
    for (int j = 0; j < 4; ++j) {
      for (long long p = 0; p < P; ++p) out[(q + j) * P + p] = static_cast<float>(acc[j * P + p]);
    }
  }
  for (; q < Q; ++q) {
    const double b = bias ? static_cast<double>(bias[q]) : 0.0;
    for (long long p = 0; p < P; ++p) a0[p] = b;
    const float* wq = Wmat + q * R;
    for (long long r = 0; r < R; ++r) {
      const double wv = wq[r];
      const float* c = col + r * P;
      for (long long p = 0; p < P; ++p) a0[p] += wv * c[p];
    }
    for (long long p = 0; p < P; ++p) out[q * P + p] = static_cast<float>(a0[p]);
  }
}

// gcol[r][p] = sum_q W[q][r]*gout[q][p]; q ascending, r blocked by four so
// each gout row is streamed once per block.
inline void matmul_wt_rows(const float* Wmat, const float* gout, float* gcol, long long Q,
                           long long R, long long P) {
  auto& acc = acc_scratch();
  if (static_cast<long long>(acc.size()) < 4 * P) acc.resize(4 * P);
  double* __restrict__ a0 = acc.data();
  double* __restrict__ a1 = a0 + P;
  double* __restrict__ a2 = a1 + P;
  double* __restrict__ a3 = a2 + P;
  long long r = 0;
  for (; r + 4 <= R; r += 4) {
    for (long long p = 0; p < 4 * P; ++p) acc[p] = 0.0;
    for (long long q = 0; q < Q; ++q) {
      const float* wq = Wmat + q * R + r;
      const double v0 = wq[0], v1 = wq[1], v2 = wq[2], v3 = wq[3];
      const float* __restrict__ g = gout + q * P;
      for (long long p = 0; p < P; ++p) {
        const double gp = g[p];
        a0[p] += v0 * gp;
        a1[p] += v1 * gp;
        a2[p] += v2 * gp;
        a3[p] += v3 * gp;
      }
    }
    for (int j = 0; j < 4; ++j) {
      for (long long p = 0; p < P; ++p) gcol[(r + j) * P + p] = static_cast<float>(acc[j * P + p]);
    }
  }
  for (; r < R; ++r) {
    for (long long p = 0; p < P; ++p) a0[p] = 0.0;
    for (long long q = 0; q < Q; ++q) {
      const double wv = Wmat[q * R + r];
      const float* g = gout + q * P;
      for (long long p = 0; p < P; ++p) a0[p] += wv * g[p];
    }
    for (long long p = 0; p < P; ++p) gcol[r * P + p] = static_cast<float>(a0[p]);
  }
}

// colT[p][r] = col[r][p]
inline void transpose_col(const float* col, long long R, long long P, float* colT) {
  for (long long r = 0; r < R; ++r) {
    for (long long p = 0; p < P; ++p) colT[p * R + r] = col[r * P + p];
  }
}

// gw[q..q+n) += sum over (b, p) ascending of gout[b][q+j][p] * colT_b[p][:],
// up to four output rows per colT pass. One double accumulator per weight
// coordinate keeps the order fixed and the inner loop vectorizable.
inline void accumulate_gw_q4(const float* gout, const float* colsT, long long B, long long Q,
                             long long R, long long P, long long q, int n, float* gw) {
  auto& acc = d_scratch(2, 4 * R);
  for (long long i = 0; i < n * R; ++i) acc[i] = 0.0;
  double* __restrict__ a0 = acc.data();
  double* __restrict__ a1 = a0 + R;
  double* __restrict__ a2 = a1 + R;
  double* __restrict__ a3 = a2 + R;
  for (long long b = 0; b < B; ++b) {
    const float* g0 = gout + (b * Q + q) * P;
    const float* g1 = n > 1 ? g0 + P : g0;
    const float* g2 = n > 2 ? g1 + P : g0;
    const float* g3 = n > 3 ? g2 + P : g0;
    const float* ct = colsT + b * R * P;
    for (long long p = 0; p < P; ++p) {
      const float* __restrict__ row = ct + p * R;
      if (n == 4) {
        const double x0 = g0[p], x1 = g1[p], x2 = g2[p], x3 = g3[p];
        for (long long r = 0; r < R; ++r) {
          const double rv = row[r];
          a0[r] += x0 * rv;
          a1[r] += x1 * rv;
          a2[r] += x2 * rv;
          a3[r] += x3 * rv;
        }
      } else {
        for (int j = 0; j < n; ++j) {
          const double x = gout[(b * Q + q + j) * P + p];
          double* aj = acc.data() + j * R;
          for (long long r = 0; r < R; ++r) aj[r] += x * row[r];
        }
      }
    }
  }
  for (int j = 0; j < n; ++j) {
    for (long long r = 0; r < R; ++r) {
      gw[(q + j) * R + r] += static_cast<float>(acc[j * R + r]);
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

// 2-D convolution, zero padding. w has shape (Cout, Cin, K, K); bias, when
// defined, has shape (1, Cout, 1, 1). An undefined bias tensor means none.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
                     int padding) {
  const Shape4 xs = x.shape(), ws = w.shape();
  if (ws.h != ws.w) throw ShapeError("conv2d: kernel must be square, got " + ws.str());
  if (xs.c != ws.c) {
    throw ShapeError("conv2d: channel mismatch, input " + xs.str() + " vs weight " + ws.str());
  }
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: invalid stride/padding");
  const int K = ws.h;
  const int oh = (xs.h + 2 * padding - K) / stride + 1;
  const int ow = (xs.w + 2 * padding - K) / stride + 1;
  if (xs.h + 2 * padding < K || xs.w + 2 * padding < K || oh < 1 || ow < 1) {
    throw ShapeError("conv2d: output dimension < 1");
  }
  if (bias.defined()) {
    if (!(bias.shape() == Shape4{1, ws.b, 1, 1})) {
      throw ShapeError("conv2d: bias shape must be 1x" + std::to_string(ws.b) + "x1x1");
    }
  }

  const detail::ConvGeom g{xs.c, xs.h, xs.w, K, stride, padding, oh, ow};
  const long long Q = ws.b, R = g.rows(), P = g.cols();
  const Shape4 out_shape{xs.b, ws.b, oh, ow};
  std::vector<float> out(static_cast<size_t>(out_shape.numel()));
  {
    const float* xd = x.values().data();
    const float* wd = w.values().data();
    const float* bd = bias.defined() ? bias.values().data() : nullptr;
    float* od = out.data();
    parallel_for(xs.b, [&](long long b0, long long b1) {
      float* col = detail::f_scratch(0, R * P).data();
      for (long long b = b0; b < b1; ++b) {
        detail::im2col(xd + b * g.cin * g.h * g.w, g, col);
        detail::matmul_w_col(wd, col, bd, od + b * Q * P, Q, R, P);
      }
    });
  }

  std::vector<Tensor> parents{x, w};
  if (bias.defined()) parents.push_back(bias);
  auto xn = x.node();
  auto wn = w.node();
  auto bn = bias.defined() ? bias.node() : nullptr;
  return detail::make_op(
      "conv2d", out_shape, std::move(out), std::move(parents),
      [xn, wn, bn, g, Q, R, P, B = xs.b](detail::Node& self) {
        // One im2col pass per sample, shared by both weight and input grads.
        float* cols = detail::f_scratch(1, B * R * P).data();
        const float* xd = xn->value.data();
        parallel_for(B, [&, cols](long long b0, long long b1) {
          for (long long b = b0; b < b1; ++b)
            detail::im2col(xd + b * g.cin * g.h * g.w, g, cols + b * R * P);
        });
        if (xn->requires_grad) {
          xn->ensure_grad();
          const float* wd = wn->value.data();
          parallel_for(B, [&](long long b0, long long b1) {
            float* gcol = detail::f_scratch(3, R * P).data();
            auto& img = detail::d_scratch(1, static_cast<long long>(g.cin) * g.h * g.w);
            for (long long b = b0; b < b1; ++b) {
              detail::matmul_wt_rows(wd, self.grad.data() + b * Q * P, gcol, Q, R, P);
              std::fill(img.begin(), img.begin() + g.cin * g.h * g.w, 0.0);
              detail::col2im_add(gcol, g, img.data());
              float* gx = xn->grad.data() + b * g.cin * g.h * g.w;
              for (long long i = 0; i < static_cast<long long>(g.cin) * g.h * g.w; ++i) {
                gx[i] += static_cast<float>(img[i]);
              }
            }
          });
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          float* colsT = detail::f_scratch(2, B * R * P).data();
          parallel_for(B, [&, cols, colsT](long long b0, long long b1) {
            for (long long b = b0; b < b1; ++b)
              detail::transpose_col(cols + b * R * P, R, P, colsT + b * R * P);
          });
          parallel_for((Q + 3) / 4, [&, colsT](long long blk0, long long blk1) {
            for (long long blk = blk0; blk < blk1; ++blk) {
              const long long q = blk * 4;
              const int n = static_cast<int>(std::min<long long>(4, Q - q));
              detail::accumulate_gw_q4(self.grad.data(), colsT, B, Q, R, P, q, n,
                                       wn->grad.data());
            }
          });
        }
        if (bn && bn->requires_grad) {
          bn->ensure_grad();
          for (long long q = 0; q < Q; ++q) {
            double acc = 0.0;
            for (long long b = 0; b < B; ++b) {
              const float* gq = self.grad.data() + (b * Q + q) * P;
              for (long long p = 0; p < P; ++p) acc += gq[p];
            }
            bn->grad[q] += static_cast<float>(acc);
          }
        }
      });
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int padding) {
  return conv2d(x, w, Tensor(), stride, padding);
}

// ---------------------------------------------------------------------------
// deconv2d (transposed convolution)
// ---------------------------------------------------------------------------

// w has shape (Cin, Cout, K, K). Output spatial size is
// (H-1)*stride - 2*padding + K + output_padding.
inline Tensor deconv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
                       int padding, int output_padding) {
  const Shape4 xs = x.shape(), ws = w.shape();
  if (ws.h != ws.w) throw ShapeError("deconv2d: kernel must be square, got " + ws.str());
  if (xs.c != ws.b) {
    throw ShapeError("deconv2d: channel mismatch, input " + xs.str() + " vs weight " + ws.str());
  }
  if (stride < 1 || padding < 0) throw ShapeError("deconv2d: invalid stride/padding");
  if (output_padding < 0 || output_padding >= stride) {
    throw ShapeError("deconv2d: output_padding must be in [0, stride)");
  }
  const int K = ws.h;
  const int cout = ws.c;
  const int oh = (xs.h - 1) * stride - 2 * padding + K + output_padding;
  const int ow = (xs.w - 1) * stride - 2 * padding + K + output_padding;
  if (oh < 1 || ow < 1) throw ShapeError("deconv2d: output dimension < 1");
  if (bias.defined() && !(bias.shape() == Shape4{1, cout, 1, 1})) {
    throw ShapeError("deconv2d: bias shape must be 1x" + std::to_string(cout) + "x1x1");
  }

  // The scatter geometry is the conv geometry read backwards: the output is
  // the "image", the input positions are the "columns".
  const detail::ConvGeom g{cout, oh, ow, K, stride, padding, xs.h, xs.w};
  const long long Q = xs.c;           // = Cin
  const long long R = g.rows();       // Cout*K*K
  const long long P = g.cols();       // H*W of x
  const Shape4 out_shape{xs.b, cout, oh, ow};
  const long long plane = static_cast<long long>(cout) * oh * ow;
  std::vector<float> out(static_cast<size_t>(out_shape.numel()));
  {
    const float* xd = x.values().data();
    const float* wd = w.values().data();
    const float* bd = bias.defined() ? bias.values().data() : nullptr;
    parallel_for(xs.b, [&](long long b0, long long b1) {
      float* gcol = detail::f_scratch(3, R * P).data();
      auto& img = detail::d_scratch(1, plane);
      for (long long b = b0; b < b1; ++b) {
        detail::matmul_wt_rows(wd, xd + b * Q * P, gcol, Q, R, P);
        std::fill(img.begin(), img.begin() + plane, 0.0);
        detail::col2im_add(gcol, g, img.data());
        float* od = out.data() + b * plane;
        for (int c = 0; c < cout; ++c) {
          const double bv = bd ? static_cast<double>(bd[c]) : 0.0;
          for (long long i = 0; i < static_cast<long long>(oh) * ow; ++i) {
            od[c * static_cast<long long>(oh) * ow + i] =
                static_cast<float>(img[c * static_cast<long long>(oh) * ow + i] + bv);
          }
        }
      }
    });
  }

  std::vector<Tensor> parents{x, w};
  if (bias.defined()) parents.push_back(bias);
  auto xn = x.node();
  auto wn = w.node();
  auto bn = bias.defined() ? bias.node() : nullptr;
  return detail::make_op(
      "deconv2d", out_shape, std::move(out), std::move(parents),
      [xn, wn, bn, g, Q, R, P, B = xs.b, plane](detail::Node& self) {
        // im2col over the output gradient gives both input and weight grads.
        float* cols = detail::f_scratch(1, B * R * P).data();
        parallel_for(B, [&, cols](long long b0, long long b1) {
          for (long long b = b0; b < b1; ++b)
            detail::im2col(self.grad.data() + b * plane, g, cols + b * R * P);
        });
        if (xn->requires_grad) {
          xn->ensure_grad();
          const float* wd = wn->value.data();
          parallel_for(B, [&, cols](long long b0, long long b1) {
            float* gx = detail::f_scratch(4, Q * P).data();
            for (long long b = b0; b < b1; ++b) {
              detail::matmul_w_col(wd, cols + b * R * P, nullptr, gx, Q, R, P);
              float* dst = xn->grad.data() + b * Q * P;
              for (long long i = 0; i < Q * P; ++i) dst[i] += gx[i];
            }
          });
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          const float* xd = xn->value.data();
          float* colsT = detail::f_scratch(2, B * R * P).data();
          parallel_for(B, [&, cols, colsT](long long b0, long long b1) {
            for (long long b = b0; b < b1; ++b)
              detail::transpose_col(cols + b * R * P, R, P, colsT + b * R * P);
          });
          parallel_for((Q + 3) / 4, [&, colsT](long long blk0, long long blk1) {
            for (long long blk = blk0; blk < blk1; ++blk) {
              const long long q = blk * 4;
              const int n = static_cast<int>(std::min<long long>(4, Q - q));
              detail::accumulate_gw_q4(xd, colsT, B, Q, R, P, q, n, wn->grad.data());
            }
          });
        }
        if (bn && bn->requires_grad) {
          bn->ensure_grad();
          const long long ohw = plane / g.cin;  // oh*ow, g.cin == cout here
          for (int c = 0; c < g.cin; ++c) {
            double acc = 0.0;
            for (long long b = 0; b < B; ++b) {
              const float* gq = self.grad.data() + b * plane + c * ohw;
              for (long long p = 0; p < ohw; ++p) acc += gq[p];
            }
            bn->grad[c] += static_cast<float>(acc);
          }
        }
      });
}

inline Tensor deconv2d(const Tensor& x, const Tensor& w, int stride, int padding,
                       int output_padding) {
  return deconv2d(x, w, Tensor(), stride, padding, output_padding);
}

// ---------------------------------------------------------------------------
// layer_norm
// ---------------------------------------------------------------------------

// Per-sample normalization over (C,H,W) to zero mean and unit variance
// (epsilon 1e-6), then per-channel affine. gain/bias have shape (1,C,1,1).
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-6) {
  const Shape4 xs = x.shape();
  if (!(gain.shape() == Shape4{1, xs.c, 1, 1}) || !(bias.shape() == Shape4{1, xs.c, 1, 1})) {
    throw ShapeError("layer_norm: gain/bias must be 1x" + std::to_string(xs.c) + "x1x1");
  }
  const long long n = static_cast<long long>(xs.c) * xs.h * xs.w;
  const long long hw = static_cast<long long>(xs.h) * xs.w;
  const auto xv = x.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  std::vector<float> out(xv.size());
  auto mu = std::make_shared<std::vector<double>>(xs.b);
  auto inv = std::make_shared<std::vector<double>>(xs.b);
  parallel_for(xs.b, [&](long long b0, long long b1) {
    for (long long b = b0; b < b1; ++b) {
      const float* xb = xv.data() + b * n;
      double sum = 0.0;
      for (long long i = 0; i < n; ++i) sum += xb[i];
      const double m = sum / static_cast<double>(n);
      double var = 0.0;
      for (long long i = 0; i < n; ++i) {
        double d = xb[i] - m;
        var += d * d;
      }
      var /= static_cast<double>(n);
      const double is = 1.0 / std::sqrt(var + eps);
      (*mu)[b] = m;
      (*inv)[b] = is;
      float* ob = out.data() + b * n;
      for (int c = 0; c < xs.c; ++c) {
        const double gc = gv[c], bc = bv[c];
        for (long long i = 0; i < hw; ++i) {
          ob[c * hw + i] = static_cast<float>(gc * ((xb[c * hw + i] - m) * is) + bc);
        }
      }
    }
  });
  return detail::make_op(
      "layer_norm", xs, std::move(out), {x, gain, bias},
      [xn = x.node(), gn = gain.node(), bn = bias.node(), mu, inv, n, hw,
       xs](detail::Node& self) {
        // dx = inv * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
        if (xn->requires_grad) xn->ensure_grad();
        if (gn->requires_grad) gn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        std::vector<double> ggain(xs.c, 0.0), gbias(xs.c, 0.0);
        for (int b = 0; b < xs.b; ++b) {
          const float* xb = xn->value.data() + static_cast<long long>(b) * n;
          const float* gb = self.grad.data() + static_cast<long long>(b) * n;
          const double m = (*mu)[b], is = (*inv)[b];
          if (xn->requires_grad) {
            double s1 = 0.0, s2 = 0.0;
            for (int c = 0; c < xs.c; ++c) {
              const double gc = gn->value[c];
              for (long long i = 0; i < hw; ++i) {
                const double dxhat = static_cast<double>(gb[c * hw + i]) * gc;
                const double xhat = (xb[c * hw + i] - m) * is;
                s1 += dxhat;
                s2 += dxhat * xhat;
              }
            }
            s1 /= static_cast<double>(n);
            s2 /= static_cast<double>(n);
            float* gx = xn->grad.data() + static_cast<long long>(b) * n;
            for (int c = 0; c < xs.c; ++c) {
              const double gc = gn->value[c];
              for (long long i = 0; i < hw; ++i) {
                const double dxhat = static_cast<double>(gb[c * hw + i]) * gc;
                const double xhat = (xb[c * hw + i] - m) * is;
                gx[c * hw + i] += static_cast<float>(is * (dxhat - s1 - xhat * s2));
              }
            }
          }
          for (int c = 0; c < xs.c; ++c) {
            double ag = 0.0, ab = 0.0;
            for (long long i = 0; i < hw; ++i) {
              const double go = gb[c * hw + i];
              ag += go * ((xb[c * hw + i] - m) * is);
              ab += go;
            }
            ggain[c] += ag;
            gbias[c] += ab;
          }
        }
        if (gn->requires_grad) {
          for (int c = 0; c < xs.c; ++c) gn->grad[c] += static_cast<float>(ggain[c]);
        }
        if (bn->requires_grad) {
          for (int c = 0; c < xs.c; ++c) bn->grad[c] += static_cast<float>(gbias[c]);
        }
      });
}

}  // namespace stau
