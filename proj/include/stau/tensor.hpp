// Copyright 2026 The stau Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Minimal deterministic tensor engine with reverse-mode autodiff.
//
// Tensors are dense rank-4 (batch, channel, height, width) float32 arrays.
// Every op builds a node in a dynamic graph; backward() walks the graph once
// in reverse topological order on a single thread. All reductions accumulate
// in 64-bit with a fixed element order, so identically seeded runs produce
// bitwise-identical results for any worker count.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "stau/error.hpp"
#include "stau/thread_pool.hpp"

namespace stau {

struct Shape4 {
  int b = 0, c = 0, h = 0, w = 0;

  long long numel() const {
    return static_cast<long long>(b) * c * h * w;
  }
  bool operator==(const Shape4&) const = default;

  std::string str() const {
    return std::to_string(b) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
           std::to_string(w);
  }
};

namespace detail {

struct Node {
  Shape4 shape;
  std::vector<float> value;
  std::vector<float> grad;  // sized on demand during backward
  bool requires_grad = false;
  bool consumed = false;  // set once this node took part in a backward pass
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0f);
  }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

// Disables graph recording in the current scope (forward values unchanged).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape4 shape, bool requires_grad = false) {
    return filled(shape, 0.0f, requires_grad);
  }

  static Tensor filled(Shape4 shape, float v, bool requires_grad = false) {
    check_shape(shape);
    auto node = std::make_shared<detail::Node>();
    node->shape = shape;
    node->value.assign(static_cast<size_t>(shape.numel()), v);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor from_vector(Shape4 shape, std::vector<float> data, bool requires_grad = false) {
    check_shape(shape);
    if (static_cast<long long>(data.size()) != shape.numel()) {
      throw ShapeError("from_vector: data length " + std::to_string(data.size()) +
                       " does not match shape " + shape.str());
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = shape;
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape4& shape() const { return node_->shape; }
  long long numel() const { return node_->shape.numel(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const float> values() const { return node_->value; }
  // Direct mutation is reserved for leaves (parameter loading, optimizer).
  std::span<float> raw_values() { return node_->value; }
  std::span<const float> grad() const { return node_->grad; }
  void clear_grad() { node_->grad.clear(); }

  float item() const {
    if (numel() != 1) throw ShapeError("item: tensor has " + std::to_string(numel()) + " elements");
    return node_->value[0];
  }

  float at(int b, int c, int h, int w) const {
    const Shape4& s = node_->shape;
    return node_->value[((static_cast<size_t>(b) * s.c + c) * s.h + h) * s.w + w];
  }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  static void check_shape(const Shape4& s) {
    if (s.b < 1 || s.c < 1 || s.h < 1 || s.w < 1) {
      throw ShapeError("invalid shape " + s.str());
    }
  }

  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline void check_finite(const char* op, const std::vector<float>& v) {
  for (size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw NumericError(std::string(op) + ": non-finite value at flat index " +
                         std::to_string(i));
    }
  }
}

// Builds the graph node for an op result. The backward closure is dropped
// when recording is off or no parent can receive a gradient.
inline Tensor make_op(const char* op, Shape4 shape, std::vector<float> value,
                      std::vector<Tensor> parents, std::function<void(Node&)> backward_fn) {
  check_finite(op, value);
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->value = std::move(value);
  bool any_grad = false;
  if (grad_mode()) {
    for (const auto& p : parents) any_grad = any_grad || p.requires_grad();
  }
  if (any_grad) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

// Reverse-mode sweep from a scalar loss. Each graph may be consumed once.
inline void backward(const Tensor& loss) {
  if (!loss.defined()) throw GraphError("backward: undefined tensor");
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + loss.shape().str());
  }
  detail::Node* root = loss.node().get();
  if (!root->requires_grad) {
    throw GraphError("backward: loss does not depend on any differentiable input");
  }

  // Iterative post-order DFS; ordering depends only on graph construction.
  // Interior nodes may take part in exactly one backward pass; leaves
  // (parameters, data) are reusable across graphs.
  std::vector<detail::Node*> topo;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    detail::Node* node = stack.back().first;
    size_t idx = stack.back().second;
    if (idx == 0 && node->consumed && !node->parents.empty()) {
      throw GraphError("backward: graph already consumed by a previous backward pass");
    }
    bool pushed = false;
    while (idx < node->parents.size()) {
      detail::Node* p = node->parents[idx++].get();
      if (p->requires_grad && visited.insert(p).second) {
        stack.back().second = idx;
        stack.emplace_back(p, 0);
        pushed = true;
        break;
      }
    }
    if (!pushed) {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] = 1.0f;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    detail::Node* node = *it;
    if (!node->parents.empty()) node->consumed = true;
    if (node->backward_fn && !node->grad.empty()) {
      node->backward_fn(*node);
    }
    node->backward_fn = nullptr;  // release captured buffers as we go
  }
}

// ---------------------------------------------------------------------------
// element-wise ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("add", a, b);
  const auto av = a.values(), bv = b.values();
  std::vector<float> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return detail::make_op("add", a.shape(), std::move(out), {a, b},
                         [an = a.node(), bn = b.node()](detail::Node& self) {
                           if (an->requires_grad) {
                             an->ensure_grad();
                             for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
                           }
                           if (bn->requires_grad) {
                             bn->ensure_grad();
                             for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
                           }
                         });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("sub", a, b);
  const auto av = a.values(), bv = b.values();
  std::vector<float> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return detail::make_op("sub", a.shape(), std::move(out), {a, b},
                         [an = a.node(), bn = b.node()](detail::Node& self) {
                           if (an->requires_grad) {
                             an->ensure_grad();
                             for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
                           }
                           if (bn->requires_grad) {
                             bn->ensure_grad();
                             for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
                           }
                         });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("mul", a, b);
  const auto av = a.values(), bv = b.values();
  std::vector<float> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return detail::make_op("mul", a.shape(), std::move(out), {a, b},
                         [an = a.node(), bn = b.node()](detail::Node& self) {
                           if (an->requires_grad) {
                             an->ensure_grad();
                             for (size_t i = 0; i < self.grad.size(); ++i)
                               an->grad[i] += self.grad[i] * bn->value[i];
                           }
                           if (bn->requires_grad) {
                             bn->ensure_grad();
                             for (size_t i = 0; i < self.grad.size(); ++i)
                               bn->grad[i] += self.grad[i] * an->value[i];
                           }
                         });
}

inline Tensor scale(const Tensor& a, double factor) {
  const auto av = a.values();
  std::vector<float> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(factor * av[i]);
  return detail::make_op("scale", a.shape(), std::move(out), {a},
                         [an = a.node(), factor](detail::Node& self) {
                           if (!an->requires_grad) return;
                           an->ensure_grad();
                           for (size_t i = 0; i < self.grad.size(); ++i)
                             an->grad[i] += static_cast<float>(factor * self.grad[i]);
                         });
}

// a + factor * b. Used for the residual spatial shortcut.
inline Tensor add_scaled(const Tensor& a, double factor, const Tensor& b) {
  detail::require_same_shape("add_scaled", a, b);
  const auto av = a.values(), bv = b.values();
  std::vector<float> out(av.size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<float>(av[i] + factor * bv[i]);
  return detail::make_op("add_scaled", a.shape(), std::move(out), {a, b},
                         [an = a.node(), bn = b.node(), factor](detail::Node& self) {
                           if (an->requires_grad) {
                             an->ensure_grad();
                             for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
                           }
                           if (bn->requires_grad) {
                             bn->ensure_grad();
                             for (size_t i = 0; i < self.grad.size(); ++i)
                               bn->grad[i] += static_cast<float>(factor * self.grad[i]);
                           }
                         });
}

inline Tensor sigmoid(const Tensor& x) {
  const auto xv = x.values();
  std::vector<float> out(xv.size());
  // Outputs are pinned to the open interval (0,1): float rounding would
  // otherwise saturate to exactly 0 or 1 for |x| beyond ~18.
  const float lo = std::numeric_limits<float>::min();
  const float hi = 1.0f - std::numeric_limits<float>::epsilon() / 2.0f;
  for (size_t i = 0; i < out.size(); ++i) {
    double s = 1.0 / (1.0 + std::exp(-static_cast<double>(xv[i])));
    float f = static_cast<float>(s);
    if (f < lo) f = lo;
    if (f > hi) f = hi;
    out[i] = f;
  }
  return detail::make_op("sigmoid", x.shape(), std::move(out), {x},
                         [xn = x.node()](detail::Node& self) {
                           if (!xn->requires_grad) return;
                           xn->ensure_grad();
                           for (size_t i = 0; i < self.grad.size(); ++i) {
                             float y = self.value[i];
                             xn->grad[i] += self.grad[i] * y * (1.0f - y);
                           }
                         });
}

inline Tensor leaky_relu(const Tensor& x, float slope) {
  const auto xv = x.values();
  std::vector<float> out(xv.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = xv[i] >= 0.0f ? xv[i] : slope * xv[i];
  return detail::make_op("leaky_relu", x.shape(), std::move(out), {x},
                         [xn = x.node(), slope](detail::Node& self) {
                           if (!xn->requires_grad) return;
                           xn->ensure_grad();
                           for (size_t i = 0; i < self.grad.size(); ++i)
                             xn->grad[i] += self.grad[i] * (xn->value[i] >= 0.0f ? 1.0f : slope);
                         });
}

// g*a + (1-g)*b, elementwise, evaluated in double per element. The double
// path makes the convex-combination identities exact in float: g==1 -> a,
// g==0 -> b, a==b -> a, and min(a,b) <= out <= max(a,b) elementwise.
inline Tensor affine_combine(const Tensor& g, const Tensor& a, const Tensor& b) {
  detail::require_same_shape("affine_combine", g, a);
  detail::require_same_shape("affine_combine", a, b);
  const auto gv = g.values(), av = a.values(), bv = b.values();
  std::vector<float> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) {
    double gd = gv[i];
    out[i] = static_cast<float>(gd * av[i] + (1.0 - gd) * bv[i]);
  }
  return detail::make_op(
      "affine_combine", a.shape(), std::move(out), {g, a, b},
      [gn = g.node(), an = a.node(), bn = b.node()](detail::Node& self) {
        if (gn->requires_grad) {
          gn->ensure_grad();
          for (size_t i = 0; i < self.grad.size(); ++i)
            gn->grad[i] += self.grad[i] * (an->value[i] - bn->value[i]);
        }
        if (an->requires_grad) {
          an->ensure_grad();
          for (size_t i = 0; i < self.grad.size(); ++i)
            an->grad[i] += self.grad[i] * gn->value[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (size_t i = 0; i < self.grad.size(); ++i)
            bn->grad[i] += self.grad[i] * (1.0f - gn->value[i]);
        }
      });
}

// ---------------------------------------------------------------------------
// attention primitives
// ---------------------------------------------------------------------------

// Correlation score between two state tensors. Scalar mode reduces over
// (C,H,W) to one score per sample; per-location mode reduces over C only.
inline Tensor dot_score(const Tensor& a, const Tensor& b, bool per_location = false) {
  detail::require_same_shape("dot_score", a, b);
  const Shape4 s = a.shape();
  const auto av = a.values(), bv = b.values();
  const long long chw = static_cast<long long>(s.c) * s.h * s.w;
  const long long hw = static_cast<long long>(s.h) * s.w;
  Shape4 out_shape = per_location ? Shape4{s.b, 1, s.h, s.w} : Shape4{s.b, 1, 1, 1};
  std::vector<float> out(static_cast<size_t>(out_shape.numel()));
  if (per_location) {
    for (int bi = 0; bi < s.b; ++bi) {
      for (long long p = 0; p < hw; ++p) {
        double acc = 0.0;
        for (int c = 0; c < s.c; ++c) {
          long long idx = bi * chw + c * hw + p;
          acc += static_cast<double>(av[idx]) * bv[idx];
        }
        out[bi * hw + p] = static_cast<float>(acc);
      }
    }
  } else {
    for (int bi = 0; bi < s.b; ++bi) {
      double acc = 0.0;
      for (long long i = 0; i < chw; ++i) {
        long long idx = bi * chw + i;
        acc += static_cast<double>(av[idx]) * bv[idx];
      }
      out[bi] = static_cast<float>(acc);
    }
  }
  return detail::make_op(
      "dot_score", out_shape, std::move(out), {a, b},
      [an = a.node(), bn = b.node(), s, chw, hw, per_location](detail::Node& self) {
        auto scatter = [&](detail::Node* dst, detail::Node* other) {
          dst->ensure_grad();
          for (int bi = 0; bi < s.b; ++bi) {
            for (int c = 0; c < s.c; ++c) {
              for (long long p = 0; p < hw; ++p) {
                long long idx = bi * chw + c * hw + p;
                float go = per_location ? self.grad[bi * hw + p] : self.grad[bi];
                dst->grad[idx] += go * other->value[idx];
              }
            }
          }
        };
        if (an->requires_grad) scatter(an.get(), bn.get());
        if (bn->requires_grad) scatter(bn.get(), an.get());
      });
}

// Concatenates L score tensors of shape (B,1,h,w) along the channel axis.
inline Tensor stack_scores(const std::vector<Tensor>& scores) {
  if (scores.empty()) throw ShapeError("stack_scores: empty list");
  const Shape4 s0 = scores.front().shape();
  if (s0.c != 1) throw ShapeError("stack_scores: entries must have one channel");
  for (const auto& t : scores) detail::require_same_shape("stack_scores", scores.front(), t);
  const int L = static_cast<int>(scores.size());
  const long long hw = static_cast<long long>(s0.h) * s0.w;
  Shape4 out_shape{s0.b, L, s0.h, s0.w};
  std::vector<float> out(static_cast<size_t>(out_shape.numel()));
  for (int bi = 0; bi < s0.b; ++bi) {
    for (int j = 0; j < L; ++j) {
      const auto sv = scores[j].values();
      for (long long p = 0; p < hw; ++p) out[(bi * L + j) * hw + p] = sv[bi * hw + p];
    }
  }
  std::vector<std::shared_ptr<detail::Node>> parent_nodes;
  for (const auto& t : scores) parent_nodes.push_back(t.node());
  return detail::make_op("stack_scores", out_shape, std::move(out), scores,
                         [parent_nodes, L, hw, b = s0.b](detail::Node& self) {
                           for (int j = 0; j < L; ++j) {
                             auto& p = parent_nodes[j];
                             if (!p->requires_grad) continue;
                             p->ensure_grad();
                             for (int bi = 0; bi < b; ++bi)
                               for (long long q = 0; q < hw; ++q)
                                 p->grad[bi * hw + q] += self.grad[(bi * L + j) * hw + q];
                           }
                         });
}

// Softmax over the channel axis, per sample and spatial position, with
// max-subtraction. exp/sum in double; the max entry maps to exactly exp(0)=1,
// so equal inputs give exactly uniform weights.
inline Tensor softmax_channels(const Tensor& scores) {
  const Shape4 s = scores.shape();
  const int L = s.c;
  const long long hw = static_cast<long long>(s.h) * s.w;
  const auto sv = scores.values();
  std::vector<float> out(sv.size());
  for (int bi = 0; bi < s.b; ++bi) {
    for (long long p = 0; p < hw; ++p) {
      double m = sv[(bi * L) * hw + p];
      for (int j = 1; j < L; ++j) m = std::max(m, static_cast<double>(sv[(bi * L + j) * hw + p]));
      double denom = 0.0;
      for (int j = 0; j < L; ++j) denom += std::exp(static_cast<double>(sv[(bi * L + j) * hw + p]) - m);
      for (int j = 0; j < L; ++j) {
        double e = std::exp(static_cast<double>(sv[(bi * L + j) * hw + p]) - m);
        out[(bi * L + j) * hw + p] = static_cast<float>(e / denom);
      }
    }
  }
  return detail::make_op(
      "softmax", s, std::move(out), {scores}, [sn = scores.node(), L, hw, b = s.b](detail::Node& self) {
        if (!sn->requires_grad) return;
        sn->ensure_grad();
        for (int bi = 0; bi < b; ++bi) {
          for (long long p = 0; p < hw; ++p) {
            double dot = 0.0;
            for (int j = 0; j < L; ++j) {
              long long idx = (bi * L + j) * hw + p;
              dot += static_cast<double>(self.grad[idx]) * self.value[idx];
            }
            for (int j = 0; j < L; ++j) {
              long long idx = (bi * L + j) * hw + p;
              sn->grad[idx] += static_cast<float>(self.value[idx] *
                                                  (static_cast<double>(self.grad[idx]) - dot));
            }
          }
        }
      });
}

inline Tensor channel_slice(const Tensor& x, int j) {
  const Shape4 s = x.shape();
  if (j < 0 || j >= s.c) throw ShapeError("channel_slice: index out of range");
  const long long hw = static_cast<long long>(s.h) * s.w;
  const auto xv = x.values();
  Shape4 out_shape{s.b, 1, s.h, s.w};
  std::vector<float> out(static_cast<size_t>(out_shape.numel()));
  for (int bi = 0; bi < s.b; ++bi)
    for (long long p = 0; p < hw; ++p) out[bi * hw + p] = xv[(bi * s.c + j) * hw + p];
  return detail::make_op("channel_slice", out_shape, std::move(out), {x},
                         [xn = x.node(), j, hw, b = s.b, c = s.c](detail::Node& self) {
                           if (!xn->requires_grad) return;
                           xn->ensure_grad();
                           for (int bi = 0; bi < b; ++bi)
                             for (long long p = 0; p < hw; ++p)
                               xn->grad[(bi * c + j) * hw + p] += self.grad[bi * hw + p];
                         });
}

// Softmax-normalized weights for a list of per-sample score scalars.
// Returns one weight tensor per input score.
inline std::vector<Tensor> score_softmax(const std::vector<Tensor>& scores) {
  if (scores.empty()) throw ShapeError("score_softmax: empty score list");
  Tensor stacked = softmax_channels(stack_scores(scores));
  std::vector<Tensor> out;
  out.reserve(scores.size());
  for (int j = 0; j < static_cast<int>(scores.size()); ++j) out.push_back(channel_slice(stacked, j));
  return out;
}

// out[b,c,h,w] = sum_j weights[b,j,(h,w)] * values[j][b,c,h,w], accumulated
// in double in ascending j. Weights have spatial extent 1x1 (scalar scores)
// or HxW (per-location scores).
inline Tensor weighted_sum(const Tensor& weights, const std::vector<Tensor>& values) {
  if (values.empty()) throw ShapeError("weighted_sum: empty value list");
  const Shape4 vs = values.front().shape();
  for (const auto& v : values) detail::require_same_shape("weighted_sum", values.front(), v);
  const Shape4 ws = weights.shape();
  const int L = static_cast<int>(values.size());
  if (ws.b != vs.b || ws.c != L) {
    throw ShapeError("weighted_sum: weight shape " + ws.str() + " incompatible with " +
                     std::to_string(L) + " values of " + vs.str());
  }
  const bool per_location = !(ws.h == 1 && ws.w == 1);
  if (per_location && (ws.h != vs.h || ws.w != vs.w)) {
    throw ShapeError("weighted_sum: per-location weights must match value spatial dims");
  }
  const long long hw = static_cast<long long>(vs.h) * vs.w;
  const long long chw = static_cast<long long>(vs.c) * hw;
  const auto wv = weights.values();
  std::vector<double> acc(static_cast<size_t>(vs.numel()), 0.0);
  for (int j = 0; j < L; ++j) {
    const auto xv = values[j].values();
    for (int bi = 0; bi < vs.b; ++bi) {
      for (int c = 0; c < vs.c; ++c) {
        for (long long p = 0; p < hw; ++p) {
          double w = per_location ? wv[(bi * L + j) * hw + p] : wv[bi * L + j];
          acc[bi * chw + c * hw + p] += w * xv[bi * chw + c * hw + p];
        }
      }
    }
  }
  std::vector<float> out(acc.size());
  for (size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i]);

  std::vector<Tensor> parents = values;
  parents.push_back(weights);
  std::vector<std::shared_ptr<detail::Node>> value_nodes;
  for (const auto& v : values) value_nodes.push_back(v.node());
  return detail::make_op(
      "weighted_sum", vs, std::move(out), std::move(parents),
      [wn = weights.node(), value_nodes, L, hw, chw, vs, per_location](detail::Node& self) {
        for (int j = 0; j < L; ++j) {
          auto& xn = value_nodes[j];
          if (!xn->requires_grad) continue;
          xn->ensure_grad();
          for (int bi = 0; bi < vs.b; ++bi)
            for (int c = 0; c < vs.c; ++c)
              for (long long p = 0; p < hw; ++p) {
                float w = per_location ? wn->value[(bi * L + j) * hw + p] : wn->value[bi * L + j];
                xn->grad[bi * chw + c * hw + p] += w * self.grad[bi * chw + c * hw + p];
              }
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          for (int j = 0; j < L; ++j) {
            auto& xn = value_nodes[j];
            for (int bi = 0; bi < vs.b; ++bi) {
              if (per_location) {
                for (long long p = 0; p < hw; ++p) {
                  double acc2 = 0.0;
                  for (int c = 0; c < vs.c; ++c) {
                    long long idx = bi * chw + c * hw + p;
                    acc2 += static_cast<double>(self.grad[idx]) * xn->value[idx];
                  }
                  wn->grad[(bi * L + j) * hw + p] += static_cast<float>(acc2);
                }
              } else {
                double acc2 = 0.0;
                for (long long i = 0; i < chw; ++i) {
                  long long idx = bi * chw + i;
                  acc2 += static_cast<double>(self.grad[idx]) * xn->value[idx];
                }
                wn->grad[bi * L + j] += static_cast<float>(acc2);
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

// Mean of squared differences over all elements, accumulated in double.
inline Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  detail::require_same_shape("mse_loss", pred, target);
  const auto pv = pred.values(), tv = target.values();
  double acc = 0.0;
  for (size_t i = 0; i < pv.size(); ++i) {
    double d = static_cast<double>(pv[i]) - tv[i];
    acc += d * d;
  }
  const double inv_n = 1.0 / static_cast<double>(pv.size());
  std::vector<float> out{static_cast<float>(acc * inv_n)};
  return detail::make_op("mse_loss", Shape4{1, 1, 1, 1}, std::move(out), {pred, target},
                         [pn = pred.node(), tn = target.node(), inv_n](detail::Node& self) {
                           const float coef = static_cast<float>(2.0 * inv_n * self.grad[0]);
                           if (pn->requires_grad) {
                             pn->ensure_grad();
                             for (size_t i = 0; i < pn->value.size(); ++i)
                               pn->grad[i] += coef * (pn->value[i] - tn->value[i]);
                           }
                           if (tn->requires_grad) {
                             tn->ensure_grad();
                             for (size_t i = 0; i < tn->value.size(); ++i)
                               tn->grad[i] -= coef * (pn->value[i] - tn->value[i]);
                           }
                         });
}

}  // namespace stau
