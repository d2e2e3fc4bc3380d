// Copyright 2026 The stau Authors.
// SPDX-License-Identifier: Apache-2.0
//
// The spatiotemporal-aware recurrent unit (STAU).
//
// One step runs three stages:
//  * temporal attention: correlation scores between the modulated current
//    spatial state and the recent spatial states weight the recent temporal
//    states into a motion-trend aggregate T_att, which a sigmoid fusion gate
//    F_T blends with the transient motion T_{t-1} into T_AMI.
//  * spatial attention: scores between the modulated previous temporal state
//    and the previous-layer temporal states weight the lower-layer spatial
//    states into a global-appearance aggregate S_att, blended with the local
//    state by gate F_S into S_AAI.
//  * fusion: update gates U_T/U_S mix convolutions of T_AMI and S_AAI into
//    the next temporal and spatial states; an optional residual gamma*S
//    stabilizes the spatial path.
//
// Supervision is switchable per domain: "cross" scores against the other
// domain's states (the full unit), "self" scores within the same domain,
// which removes the cross-domain awareness while keeping the parameter
// count identical. use_tam/use_sam bypass a whole attention module; with
// use_sam off the unit reduces to its motion-aware predecessor.

#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include "stau/conv.hpp"
#include "stau/optim.hpp"
#include "stau/tensor.hpp"

namespace stau {

enum class Supervision { kCross, kSelf };

inline const char* to_string(Supervision s) {
  return s == Supervision::kCross ? "cross" : "self";
}

inline Supervision supervision_from_string(const std::string& s) {
  if (s == "cross") return Supervision::kCross;
  if (s == "self") return Supervision::kSelf;
  throw ConfigError("unknown supervision mode: " + s);
}

struct CellVariant {
  bool use_tam = true;
  bool use_sam = true;
  Supervision temporal_supervision = Supervision::kCross;
  Supervision spatial_supervision = Supervision::kCross;
  bool per_location_scores = false;

  bool operator==(const CellVariant&) const = default;
};

// Per-step introspection record: attention weights, gate statistics and
// (optionally) the full state/gate maps.
struct CellTrace {
  std::vector<std::vector<float>> alphas;  // [sample][history index], newest first
  std::vector<std::vector<float>> betas;   // [sample][layer offset], top first
  std::vector<float> ft_mean, fs_mean, ut_mean, us_mean;  // per sample
  bool keep_maps = false;
  Tensor t_att, s_att, t_ami, s_aai, f_t, f_s, u_t, u_s;
  Tensor t_prev, s_cur;  // blend endpoints, kept alongside the maps
};

namespace detail {

inline std::vector<std::vector<float>> weights_per_sample(const Tensor& stacked) {
  const Shape4 s = stacked.shape();
  const long long hw = static_cast<long long>(s.h) * s.w;
  const auto v = stacked.values();
  std::vector<std::vector<float>> out(s.b, std::vector<float>(s.c));
  for (int b = 0; b < s.b; ++b) {
    for (int j = 0; j < s.c; ++j) {
      double acc = 0.0;
      for (long long p = 0; p < hw; ++p) acc += v[(static_cast<long long>(b) * s.c + j) * hw + p];
      out[b][j] = static_cast<float>(acc / static_cast<double>(hw));
    }
  }
  return out;
}

inline std::vector<float> mean_per_sample(const Tensor& t) {
  const Shape4 s = t.shape();
  const long long n = static_cast<long long>(s.c) * s.h * s.w;
  const auto v = t.values();
  std::vector<float> out(s.b);
  for (int b = 0; b < s.b; ++b) {
    double acc = 0.0;
    for (long long i = 0; i < n; ++i) acc += v[b * n + i];
    out[b] = static_cast<float>(acc / static_cast<double>(n));
  }
  return out;
}

}  // namespace detail

// One convolution of the unit: kernel 5, stride 1, same padding, followed by
// layer normalization. The two modulation convolutions carry no bias and
// start with a small norm gain: dot-product scores over C*H*W elements of a
// unit-variance state would otherwise saturate the attention softmax at
// initialization.
struct CellConv {
  Parameter weight;   // (C, C, 5, 5)
  Parameter bias;     // (1, C, 1, 1); undefined tensor when absent
  Parameter ln_gain;  // (1, C, 1, 1)
  Parameter ln_bias;  // (1, C, 1, 1)
  bool has_bias = true;

  static constexpr int kKernel = 5;
  static constexpr int kPad = 2;  // preserves spatial dims

  CellConv() = default;
  CellConv(const std::string& prefix, int channels, bool with_bias, Xoshiro256pp& rng,
           float gain_init = 1.0f)
      : has_bias(with_bias) {
    const Shape4 ws{channels, channels, kKernel, kKernel};
    weight = kaiming_parameter(prefix + ".weight", ws,
                               static_cast<long long>(channels) * kKernel * kKernel, 1.0, rng);
    if (with_bias) bias = zeros_parameter(prefix + ".bias", Shape4{1, channels, 1, 1});
    ln_gain = const_parameter(prefix + ".ln_gain", Shape4{1, channels, 1, 1}, gain_init);
    ln_bias = zeros_parameter(prefix + ".ln_bias", Shape4{1, channels, 1, 1});
  }

  Tensor apply(const Tensor& x) const {
    Tensor y = conv2d(x, weight.value, has_bias ? bias.value : Tensor(), 1, kPad);
    return layer_norm(y, ln_gain.value, ln_bias.value);
  }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    if (has_bias) out.push_back(&bias);
    out.push_back(&ln_gain);
    out.push_back(&ln_bias);
  }
};

class StauCell {
 public:
  StauCell(const std::string& prefix, int channels, int tau, int theta, CellVariant variant,
           Xoshiro256pp& rng)
      : channels_(channels),
        tau_(tau),
        theta_(theta),
        variant_(variant),
        ws(prefix + ".ws", channels, /*with_bias=*/false, rng, kModulationGain),
        wt(prefix + ".wt", channels, /*with_bias=*/false, rng, kModulationGain),
        wtu(prefix + ".wtu", channels, true, rng),
        wsu(prefix + ".wsu", channels, true, rng),
        wtt(prefix + ".wtt", channels, true, rng),
        wst(prefix + ".wst", channels, true, rng),
        wss(prefix + ".wss", channels, true, rng),
        wts(prefix + ".wts", channels, true, rng) {
    if (channels < 1) throw ConfigError("cell: channels must be >= 1");
    if (tau < 1 || theta < 1) throw ConfigError("cell: tau and theta must be >= 1");
  }

  int channels() const { return channels_; }
  int tau() const { return tau_; }
  int theta() const { return theta_; }
  const CellVariant& variant() const { return variant_; }
  void set_variant(const CellVariant& v) { variant_ = v; }

  struct AttentionOut {
    Tensor out;      // weighted aggregate
    Tensor weights;  // stacked softmax weights (B, L, 1or H, 1or W)
  };

  // scores[i] = dot(keys[i], query); out = sum_j softmax(scores)_j values[j].
  AttentionOut attend(std::span<const Tensor> keys, const Tensor& query,
                      std::span<const Tensor> values) const {
    if (keys.empty() || values.empty()) throw ShapeError("attention: empty history");
    if (keys.size() != values.size()) {
      throw ShapeError("attention: key/value history length mismatch");
    }
    for (const auto& k : keys) detail::require_same_shape("attention", keys.front(), k);
    for (const auto& v : values) detail::require_same_shape("attention", values.front(), v);
    std::vector<Tensor> scores;
    scores.reserve(keys.size());
    for (const auto& k : keys) scores.push_back(dot_score(k, query, variant_.per_location_scores));
    Tensor weights = softmax_channels(stack_scores(scores));
    std::vector<Tensor> vals(values.begin(), values.end());
    return {weighted_sum(weights, vals), weights};
  }

  struct TemporalAttentionOut {
    Tensor t_att;    // attention-aggregated temporal state
    Tensor s_mod;    // modulated current spatial state, reused by the gates
    Tensor weights;  // alpha, stacked
  };

  // spatial_hist and temp_hist are equal-length, newest first. The i-th
  // score pairs the spatial state at step t-i+1 with the temporal state at
  // step t-i (the index windows of the rollout produce exactly these pairs).
  TemporalAttentionOut temporal_attention(std::span<const Tensor> spatial_hist,
                                          const Tensor& s_cur,
                                          std::span<const Tensor> temp_hist) const {
    Tensor s_mod = ws.apply(s_cur);
    auto att = attend(spatial_hist, s_mod, temp_hist);
    return {att.out, s_mod, att.weights};
  }

  struct TemporalFusionOut {
    Tensor t_ami;  // augmented motion information
    Tensor t_mod;  // modulated previous temporal state, reused by SAM queries
    Tensor f_t;    // temporal fusion gate
  };

  TemporalFusionOut temporal_fusion(const Tensor& t_att, const Tensor& t_prev) const {
    detail::require_same_shape("temporal_fusion", t_att, t_prev);
    Tensor t_mod = wt.apply(t_prev);
    Tensor f_t = sigmoid(t_mod);
    return {affine_combine(f_t, t_prev, t_att), t_mod, f_t};
  }

  struct SpatialAttentionOut {
    Tensor s_att;
    Tensor weights;  // beta, stacked
  };

  // temp_layer_hist and spatial_stack are equal-length, top layer first:
  // score i pairs T_{t-1}^{k-i+1} with S_t^{k-i}.
  SpatialAttentionOut spatial_attention(std::span<const Tensor> temp_layer_hist,
                                        const Tensor& t_mod,
                                        std::span<const Tensor> spatial_stack) const {
    auto att = attend(temp_layer_hist, t_mod, spatial_stack);
    return {att.out, att.weights};
  }

  struct SpatialFusionOut {
    Tensor s_aai;  // augmented appearance information
    Tensor f_s;    // spatial fusion gate
  };

  SpatialFusionOut spatial_fusion(const Tensor& s_att, const Tensor& s_cur,
                                  const Tensor& s_mod) const {
    detail::require_same_shape("spatial_fusion", s_att, s_cur);
    Tensor f_s = sigmoid(s_mod);
    return {affine_combine(f_s, s_cur, s_att), f_s};
  }

  struct FusionOut {
    Tensor t_next, s_next;
    Tensor u_t, u_s;  // update gates, for traces
  };

  FusionOut fusion_update(const Tensor& t_ami, const Tensor& s_aai, const Tensor& s_cur,
                          double gamma) const {
    detail::require_same_shape("fusion_update", t_ami, s_aai);
    detail::require_same_shape("fusion_update", s_aai, s_cur);
    if (gamma < 0.0) throw ConfigError("fusion_update: gamma must be >= 0");
    Tensor u_t = sigmoid(wtu.apply(t_ami));
    Tensor u_s = sigmoid(wsu.apply(s_aai));
    Tensor t_next = affine_combine(u_t, wtt.apply(t_ami), wst.apply(s_aai));
    Tensor s_next = affine_combine(u_s, wss.apply(s_aai), wts.apply(t_ami));
    if (gamma != 0.0) s_next = add_scaled(s_next, gamma, s_cur);
    return {t_next, s_next, u_t, u_s};
  }

  struct StepInputs {
    std::vector<Tensor> spatial_hist;   // S^{k-1} over the time window, newest first
    std::vector<Tensor> temp_hist;      // T^k over the time window, newest first
    std::vector<Tensor> temp_layer;     // T_{t-1} over the layer window, top first
    std::vector<Tensor> spatial_stack;  // S_t over the layer window, top first
    Tensor s_cur;                       // S_t^{k-1}
  };

  struct StepResult {
    Tensor t_next, s_next;
  };

  StepResult step(const StepInputs& in, double gamma, CellTrace* trace = nullptr) const {
    if (in.temp_hist.empty() || in.spatial_stack.empty()) {
      throw ShapeError("cell step: empty state window");
    }
    if (static_cast<int>(in.temp_hist.size()) > tau_ ||
        static_cast<int>(in.spatial_stack.size()) > theta_) {
      throw ShapeError("cell step: state window exceeds receptive field");
    }
    const Tensor& t_prev = in.temp_hist.front();
    if (trace && trace->keep_maps) {
      trace->t_prev = t_prev;
      trace->s_cur = in.s_cur;
    }

    const bool need_s_mod =
        variant_.use_sam ||
        (variant_.use_tam && variant_.temporal_supervision == Supervision::kCross);
    const bool need_t_mod =
        variant_.use_tam ||
        (variant_.use_sam && variant_.spatial_supervision == Supervision::kCross);
    Tensor s_mod, t_mod;
    if (need_s_mod) s_mod = ws.apply(in.s_cur);
    if (need_t_mod) t_mod = wt.apply(t_prev);

    Tensor t_ami;
    if (variant_.use_tam) {
      const bool cross = variant_.temporal_supervision == Supervision::kCross;
      auto att = cross ? attend(in.spatial_hist, s_mod, in.temp_hist)
                       : attend(in.temp_hist, t_mod, in.temp_hist);
      Tensor f_t = sigmoid(t_mod);
      t_ami = affine_combine(f_t, t_prev, att.out);
      if (trace) {
        trace->alphas = detail::weights_per_sample(att.weights);
        trace->ft_mean = detail::mean_per_sample(f_t);
        if (trace->keep_maps) {
          trace->t_att = att.out;
          trace->f_t = f_t;
          trace->t_ami = t_ami;
        }
      }
    } else {
      t_ami = t_prev;
    }

    Tensor s_aai;
    if (variant_.use_sam) {
      const bool cross = variant_.spatial_supervision == Supervision::kCross;
      auto att = cross ? attend(in.temp_layer, t_mod, in.spatial_stack)
                       : attend(in.spatial_stack, s_mod, in.spatial_stack);
      Tensor f_s = sigmoid(s_mod);
      s_aai = affine_combine(f_s, in.s_cur, att.out);
      if (trace) {
        trace->betas = detail::weights_per_sample(att.weights);
        trace->fs_mean = detail::mean_per_sample(f_s);
        if (trace->keep_maps) {
          trace->s_att = att.out;
          trace->f_s = f_s;
          trace->s_aai = s_aai;
        }
      }
    } else {
      s_aai = in.s_cur;
    }

    auto fused = fusion_update(t_ami, s_aai, in.s_cur, gamma);
    if (trace) {
      trace->ut_mean = detail::mean_per_sample(fused.u_t);
      trace->us_mean = detail::mean_per_sample(fused.u_s);
      if (trace->keep_maps) {
        trace->u_t = fused.u_t;
        trace->u_s = fused.u_s;
        if (!variant_.use_tam) trace->t_ami = t_ami;
        if (!variant_.use_sam) trace->s_aai = s_aai;
      }
    }
    return {fused.t_next, fused.s_next};
  }

  void collect_parameters(std::vector<Parameter*>& out) {
    ws.collect(out);
    wt.collect(out);
    wtu.collect(out);
    wsu.collect(out);
    wtt.collect(out);
    wst.collect(out);
    wss.collect(out);
    wts.collect(out);
  }

  // Multiply-accumulate count for one step of this cell on one sample, for
  // a (C,H,W) state and effective window lengths tau_eff/theta_eff. Counts
  // convolution kernels plus attention dot products and weighted sums.
  long long step_macs(int h, int w, int tau_eff, int theta_eff) const {
    const long long plane = static_cast<long long>(h) * w;
    const long long conv = static_cast<long long>(channels_) * channels_ * CellConv::kKernel *
                           CellConv::kKernel * plane;
    const long long state = static_cast<long long>(channels_) * plane;
    long long total = 6 * conv;  // fusion convolutions always run
    const bool need_s = variant_.use_sam ||
                        (variant_.use_tam && variant_.temporal_supervision == Supervision::kCross);
    const bool need_t = variant_.use_tam ||
                        (variant_.use_sam && variant_.spatial_supervision == Supervision::kCross);
    if (need_s) total += conv;
    if (need_t) total += conv;
    if (variant_.use_tam) total += 2LL * tau_eff * state;    // dots + weighted sum
    if (variant_.use_sam) total += 2LL * theta_eff * state;  // dots + weighted sum
    return total;
  }

  static constexpr float kModulationGain = 0.1f;

  // Modulation convolutions (no bias) and fusion convolutions (with bias).
  CellConv ws, wt;
  CellConv wtu, wsu, wtt, wst, wss, wts;

 private:
  int channels_, tau_, theta_;
  CellVariant variant_;
};

}  // namespace stau
