// Copyright 2026 The stau Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Predictive model: strided-conv encoder, a stack of STAU cells, and a
// transposed-conv decoder, plus the rollout with clamped spatiotemporal
// state windows.
//
// With 1-indexed time t and layer k, the windows handed to cell k at step t
// are (newest/top first, all bounds clamped to states that exist):
//   temporal history   T^k      at steps  t-1 .. max(t-tau, 0)
//   spatial history    S^{k-1}  at steps  t   .. max(t-tau+1, 1)
//   temporal by layer  T_{t-1}  at layers k   .. max(k-theta+1, 1)
//   spatial stack      S_t      at layers k-1 .. max(k-theta, 0)
// Time-0 temporal states are zero-initialized; layer-0 spatial states are
// the encoder outputs. Warm-up windows simply shorten (no zero padding).

#pragma once

#include <deque>
#include <fstream>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "stau/cell.hpp"
#include "stau/conv.hpp"
#include "stau/io.hpp"
#include "stau/optim.hpp"
#include "stau/tensor.hpp"

namespace stau {

// ---------------------------------------------------------------------------
// state buffers
// ---------------------------------------------------------------------------

// Ring buffers for the rollout windows. Parameterized over the state payload
// so tests can drive the exact same window mechanics with symbolic IDs.
template <typename StateT>
class StateBuffersT {
 public:
  StateBuffersT(int num_layers, int tau, int theta)
      : n_(num_layers), tau_(tau), theta_(theta) {
    if (n_ < 1 || tau_ < 1 || theta_ < 1) {
      throw ConfigError("state buffers: layers, tau, theta must be >= 1");
    }
    spatial_hist_.resize(n_ + 1);
    temporal_hist_.resize(n_);
    prev_temporal_.resize(n_);
    pending_temporal_.resize(n_);
    current_spatial_.resize(n_ + 1);
  }

  // t0[k-1] seeds T_0^k for every layer.
  void start(std::vector<StateT> t0) {
    if (static_cast<int>(t0.size()) != n_) throw ShapeError("state buffers: need one T_0 per layer");
    t_ = 0;
    for (int k = 0; k < n_; ++k) {
      temporal_hist_[k].clear();
      temporal_hist_[k].push_back(t0[k]);
      prev_temporal_[k] = t0[k];
    }
    for (auto& d : spatial_hist_) d.clear();
  }

  void begin_step() { ++t_; }

  void push_spatial(int layer, StateT s) {
    current_spatial_[layer] = s;
    auto& d = spatial_hist_[layer];
    d.push_back(std::move(s));
    while (static_cast<int>(d.size()) > tau_) d.pop_front();
  }

  void push_temporal(int k, StateT t) { pending_temporal_[k - 1] = std::move(t); }

  struct Windows {
    std::vector<StateT> spatial_hist, temp_hist, temp_layer, spatial_stack;
    StateT s_cur;
  };

  Windows gather(int k) const {
    Windows w;
    w.s_cur = current_spatial_[k - 1];
    const int nt = std::min(t_, tau_);
    const auto& sh = spatial_hist_[k - 1];
    const auto& th = temporal_hist_[k - 1];
    for (int i = 0; i < nt; ++i) {
      w.spatial_hist.push_back(sh[sh.size() - 1 - i]);
      w.temp_hist.push_back(th[th.size() - 1 - i]);
    }
    const int nl = std::min(k, theta_);
    for (int i = 0; i < nl; ++i) {
      w.temp_layer.push_back(prev_temporal_[k - 1 - i]);
      w.spatial_stack.push_back(current_spatial_[k - 1 - i]);
    }
    return w;
  }

  void end_step() {
    for (int k = 0; k < n_; ++k) {
      temporal_hist_[k].push_back(pending_temporal_[k]);
      while (static_cast<int>(temporal_hist_[k].size()) > tau_) temporal_hist_[k].pop_front();
      prev_temporal_[k] = pending_temporal_[k];
    }
  }

  int time() const { return t_; }

 private:
  int n_, tau_, theta_;
  int t_ = 0;
  std::vector<std::deque<StateT>> spatial_hist_;  // per layer 0..N
  std::vector<std::deque<StateT>> temporal_hist_; // layer k at index k-1
  std::vector<StateT> prev_temporal_;             // T_{t-1}^k at index k-1
  std::vector<StateT> pending_temporal_;
  std::vector<StateT> current_spatial_;           // S_t^j at index j
};

using StateBuffers = StateBuffersT<Tensor>;

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

struct ModelConfig {
  int in_channels = 1;
  int hidden = 64;
  int layers = 4;
  int encoder_depth = 2;
  int tau = 5;
  int theta = 5;
  double gamma = 0.0;
  CellVariant variant;
};

enum class RolloutMode { kTeacherForced, kClosedLoop };

struct RolloutOptions {
  RolloutMode mode = RolloutMode::kTeacherForced;
  int closed_loop_after = 0;  // ground-truth inputs for t <= after
  bool compute_loss = true;
  std::function<void(int t, int layer, CellTrace&)> trace_hook;
  bool trace_maps = false;
};

struct RolloutResult {
  std::vector<Tensor> predictions;  // \hat v_2 .. \hat v_T
  Tensor loss;                      // per-step MSE averaged over steps
  std::vector<std::vector<double>> per_sample_mse;  // [step][sample]
};

class PredictiveModel {
 public:
  PredictiveModel(const ModelConfig& cfg, Xoshiro256pp& rng) : cfg_(cfg) {
    if (cfg.encoder_depth < 1) throw ConfigError("model: encoder depth must be >= 1");
    if (cfg.layers < 1) throw ConfigError("model: layer count must be >= 1");
    if (cfg.gamma < 0.0) throw ConfigError("model: gamma must be >= 0");
    for (int e = 0; e < cfg.encoder_depth; ++e) {
      const int cin = e == 0 ? cfg.in_channels : cfg.hidden;
      EncLayer layer;
      layer.weight = kaiming_parameter("enc" + std::to_string(e) + ".weight",
                                       Shape4{cfg.hidden, cin, 3, 3},
                                       static_cast<long long>(cin) * 9, 0.2, rng);
      layer.bias = zeros_parameter("enc" + std::to_string(e) + ".bias", Shape4{1, cfg.hidden, 1, 1});
      encoder_.push_back(std::move(layer));
    }
    for (int k = 0; k < cfg.layers; ++k) {
      cells_.emplace_back("cell" + std::to_string(k), cfg.hidden, cfg.tau, cfg.theta, cfg.variant,
                          rng);
    }
    for (int e = 0; e < cfg.encoder_depth; ++e) {
      const bool last = e == cfg.encoder_depth - 1;
      const int cout = last ? cfg.in_channels : cfg.hidden;
      DecLayer layer;
      layer.weight = kaiming_parameter("dec" + std::to_string(e) + ".weight",
                                       Shape4{cfg.hidden, cout, 3, 3},
                                       static_cast<long long>(cfg.hidden) * 9, 0.2, rng);
      layer.bias = zeros_parameter("dec" + std::to_string(e) + ".bias", Shape4{1, cout, 1, 1});
      layer.final = last;
      decoder_.push_back(std::move(layer));
    }
    collect();
  }

  const ModelConfig& config() const { return cfg_; }
  std::vector<StauCell>& cells() { return cells_; }
  const std::vector<StauCell>& cells() const { return cells_; }

  std::span<Parameter* const> parameters() { return params_; }

  long long parameter_count() const {
    long long total = 0;
    for (const Parameter* p : params_) total += p->numel();
    return total;
  }

  // Per-sample multiply-accumulates of one full time step through the cell
  // stack at steady state (windows saturated at tau / min(k, theta)).
  long long cell_stack_macs(int state_h, int state_w) const {
    long long total = 0;
    for (int k = 1; k <= cfg_.layers; ++k) {
      total += cells_[k - 1].step_macs(state_h, state_w, cfg_.tau, std::min(k, cfg_.theta));
    }
    return total;
  }

  // frame -> (B, hidden, H/2^E, W/2^E)
  Tensor encode(const Tensor& frame) const {
    const Shape4 s = frame.shape();
    if (s.c != cfg_.in_channels) {
      throw ShapeError("encode: expected " + std::to_string(cfg_.in_channels) + " channels, got " +
                       std::to_string(s.c));
    }
    const int div = 1 << cfg_.encoder_depth;
    if (s.h % div != 0 || s.w % div != 0) {
      throw ShapeError("encode: spatial dims " + s.str() + " not divisible by 2^" +
                       std::to_string(cfg_.encoder_depth));
    }
    Tensor x = frame;
    for (const auto& layer : encoder_) {
      x = leaky_relu(conv2d(x, layer.weight.value, layer.bias.value, 2, 1), 0.2f);
    }
    return x;
  }

  // state -> frame-shaped output in [0,1] (sigmoid on the last layer)
  Tensor decode(const Tensor& state) const {
    Tensor x = state;
    for (const auto& layer : decoder_) {
      // output_padding 1 restores the even input size the encoder halved
      Tensor y = deconv2d(x, layer.weight.value, layer.bias.value, 2, 1, 1);
      x = layer.final ? sigmoid(y) : leaky_relu(y, 0.2f);
    }
    return x;
  }

  RolloutResult rollout(std::span<const Tensor> frames, const RolloutOptions& opts) const {
    const int total = static_cast<int>(frames.size());
    if (total < 2) throw ShapeError("rollout: need at least 2 frames");
    if (opts.mode == RolloutMode::kClosedLoop &&
        (opts.closed_loop_after < 1 || opts.closed_loop_after >= total)) {
      throw ShapeError("rollout: closed_loop_after out of range");
    }
    const Shape4 fs = frames.front().shape();
    const int sh = fs.h >> cfg_.encoder_depth;
    const int sw = fs.w >> cfg_.encoder_depth;

    StateBuffers buffers(cfg_.layers, cfg_.tau, cfg_.theta);
    std::vector<Tensor> t0;
    for (int k = 0; k < cfg_.layers; ++k) {
      t0.push_back(Tensor::zeros(Shape4{fs.b, cfg_.hidden, sh, sw}));
    }
    buffers.start(std::move(t0));

    RolloutResult result;
    std::vector<Tensor> step_losses;
    for (int t = 1; t < total; ++t) {
      buffers.begin_step();
      const bool feed_back =
          opts.mode == RolloutMode::kClosedLoop && t > opts.closed_loop_after;
      const Tensor& input = feed_back ? result.predictions.back() : frames[t - 1];
      buffers.push_spatial(0, encode(input));
      Tensor top_state;
      for (int k = 1; k <= cfg_.layers; ++k) {
        auto wnd = buffers.gather(k);
        CellTrace trace;
        trace.keep_maps = opts.trace_maps;
        auto out = cells_[k - 1].step(
            {std::move(wnd.spatial_hist), std::move(wnd.temp_hist), std::move(wnd.temp_layer),
             std::move(wnd.spatial_stack), wnd.s_cur},
            cfg_.gamma, opts.trace_hook ? &trace : nullptr);
        if (opts.trace_hook) opts.trace_hook(t, k, trace);
        buffers.push_temporal(k, out.t_next);
        buffers.push_spatial(k, out.s_next);
        top_state = out.s_next;
      }
      Tensor pred = decode(top_state);
      const Tensor& target = frames[t];
      {
        // per-sample squared error, outside the graph
        const auto pv = pred.values();
        const auto tv = target.values();
        const long long per = pred.numel() / fs.b;
        std::vector<double> row(fs.b);
        for (int b = 0; b < fs.b; ++b) {
          double acc = 0.0;
          for (long long i = 0; i < per; ++i) {
            const double d = static_cast<double>(pv[b * per + i]) - tv[b * per + i];
            acc += d * d;
          }
          row[b] = acc / static_cast<double>(per);
        }
        result.per_sample_mse.push_back(std::move(row));
      }
      if (opts.compute_loss) step_losses.push_back(mse_loss(pred, target));
      result.predictions.push_back(std::move(pred));
      buffers.end_step();
    }
    if (opts.compute_loss) {
      Tensor sum = step_losses.front();
      for (size_t i = 1; i < step_losses.size(); ++i) sum = add(sum, step_losses[i]);
      result.loss = scale(sum, 1.0 / static_cast<double>(step_losses.size()));
    }
    return result;
  }

 private:
  struct EncLayer {
    Parameter weight, bias;
  };
  struct DecLayer {
    Parameter weight, bias;
    bool final = false;
  };

  void collect() {
    params_.clear();
    for (auto& l : encoder_) {
      params_.push_back(&l.weight);
      params_.push_back(&l.bias);
    }
    for (auto& c : cells_) c.collect_parameters(params_);
    for (auto& l : decoder_) {
      params_.push_back(&l.weight);
      params_.push_back(&l.bias);
    }
  }

  ModelConfig cfg_;
  std::vector<EncLayer> encoder_;
  std::vector<StauCell> cells_;
  std::vector<DecLayer> decoder_;
  std::vector<Parameter*> params_;
};

// ---------------------------------------------------------------------------
// checkpoint file
// ---------------------------------------------------------------------------
// Layout: magic "STAUCKPT", u32 version, u32 config length + UTF-8 config
// echo, u32 tensor count, then per tensor (u32 name length, name, 4xu32
// dims, f32 data, little-endian). A trailing optimizer/RNG section restores
// training state: u8 flag, per tensor (u64 steps, f64 m[], f64 v[]) when
// set, then 4xu64 RNG state and u64 global step.

inline constexpr char kCheckpointMagic[8] = {'S', 'T', 'A', 'U', 'C', 'K', 'P', 'T'};
inline constexpr uint32_t kCheckpointVersion = 1;

struct TrainerState {
  bool has_optimizer = false;
  uint64_t rng[4] = {0, 0, 0, 0};
  uint64_t global_step = 0;
};

inline void save_checkpoint(const std::string& path, const std::string& config_echo,
                            std::span<Parameter* const> params, const TrainerState& state) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kCheckpointMagic, 8);
  bin::put_u32(os, kCheckpointVersion);
  bin::put_u32(os, static_cast<uint32_t>(config_echo.size()));
  os.write(config_echo.data(), static_cast<std::streamsize>(config_echo.size()));
  bin::put_u32(os, static_cast<uint32_t>(params.size()));
  for (const Parameter* p : params) {
    bin::put_u32(os, static_cast<uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    const Shape4 s = p->value.shape();
    bin::put_u32(os, static_cast<uint32_t>(s.b));
    bin::put_u32(os, static_cast<uint32_t>(s.c));
    bin::put_u32(os, static_cast<uint32_t>(s.h));
    bin::put_u32(os, static_cast<uint32_t>(s.w));
    bin::put_f32_array(os, p->value.values().data(), p->value.values().size());
  }
  os.put(state.has_optimizer ? 1 : 0);
  if (state.has_optimizer) {
    for (const Parameter* p : params) {
      bin::put_u64(os, static_cast<uint64_t>(p->steps));
      const size_t n = p->value.values().size();
      for (size_t i = 0; i < n; ++i) bin::put_f64(os, i < p->m.size() ? p->m[i] : 0.0);
      for (size_t i = 0; i < n; ++i) bin::put_f64(os, i < p->v.size() ? p->v[i] : 0.0);
    }
  }
  for (uint64_t word : state.rng) bin::put_u64(os, word);
  bin::put_u64(os, state.global_step);
  if (!os) throw IoError("checkpoint write failed: " + path);
}

struct LoadedCheckpoint {
  std::string config_echo;
  struct Entry {
    std::string name;
    Shape4 shape;
    std::vector<float> data;
    long long steps = 0;
    std::vector<double> m, v;
  };
  std::vector<Entry> entries;
  TrainerState state;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  bin::read_exact(is, magic, 8, "checkpoint magic");
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw IoError("corrupt checkpoint (bad magic): " + path);
  }
  const uint32_t version = bin::get_u32(is, "checkpoint version");
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint version mismatch: got " + std::to_string(version) + ", expected " +
                  std::to_string(kCheckpointVersion));
  }
  LoadedCheckpoint out;
  const uint32_t cfg_len = bin::get_u32(is, "config length");
  out.config_echo.resize(cfg_len);
  if (cfg_len) bin::read_exact(is, out.config_echo.data(), cfg_len, "config echo");
  const uint32_t count = bin::get_u32(is, "tensor count");
  out.entries.resize(count);
  for (auto& e : out.entries) {
    const uint32_t name_len = bin::get_u32(is, "tensor name length");
    e.name.resize(name_len);
    if (name_len) bin::read_exact(is, e.name.data(), name_len, "tensor name");
    uint32_t dims[4];
    for (auto& d : dims) d = bin::get_u32(is, "tensor dims");
    e.shape = Shape4{static_cast<int>(dims[0]), static_cast<int>(dims[1]),
                     static_cast<int>(dims[2]), static_cast<int>(dims[3])};
    if (e.shape.numel() < 1) throw IoError("corrupt checkpoint (bad tensor dims): " + path);
    e.data.resize(static_cast<size_t>(e.shape.numel()));
    bin::get_f32_array(is, e.data.data(), e.data.size(), "tensor data");
  }
  int flag = is.get();
  if (flag == EOF) throw IoError("truncated file while reading optimizer flag");
  out.state.has_optimizer = flag != 0;
  if (out.state.has_optimizer) {
    for (auto& e : out.entries) {
      e.steps = static_cast<long long>(bin::get_u64(is, "optimizer steps"));
      e.m.resize(e.data.size());
      e.v.resize(e.data.size());
      for (auto& x : e.m) x = bin::get_f64(is, "optimizer m");
      for (auto& x : e.v) x = bin::get_f64(is, "optimizer v");
    }
  }
  for (auto& word : out.state.rng) word = bin::get_u64(is, "rng state");
  out.state.global_step = bin::get_u64(is, "global step");
  return out;
}

// Copies checkpoint tensors into the parameter list; names and shapes must
// match in order. Throws on any model/checkpoint mismatch.
inline void apply_checkpoint(const LoadedCheckpoint& ckpt, std::span<Parameter* const> params) {
  if (ckpt.entries.size() != params.size()) {
    throw IoError("checkpoint/model mismatch: " + std::to_string(ckpt.entries.size()) +
                  " tensors vs " + std::to_string(params.size()) + " parameters");
  }
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& e = ckpt.entries[i];
    Parameter* p = params[i];
    if (e.name != p->name) {
      throw IoError("checkpoint/model mismatch: tensor '" + e.name + "' vs parameter '" + p->name +
                    "'");
    }
    if (!(e.shape == p->value.shape())) {
      throw IoError("checkpoint/model mismatch: shape of '" + e.name + "'");
    }
    std::copy(e.data.begin(), e.data.end(), p->value.raw_values().begin());
    p->value.clear_grad();
    if (ckpt.state.has_optimizer) {
      p->steps = e.steps;
      p->m = e.m;
      p->v = e.v;
    } else {
      p->steps = 0;
      p->m.clear();
      p->v.clear();
    }
  }
}

}  // namespace stau
