// Copyright 2026 The stau Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Command bodies behind the CLI: training loop, evaluation, ablation grid
// and attention dumps. Kept in the library so tests drive the exact same
// code paths as the binary.

#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "stau/config.hpp"
#include "stau/datagen.hpp"
#include "stau/metrics.hpp"
#include "stau/model.hpp"
#include "stau/optim.hpp"

namespace stau {

namespace detail {

// Named sub-streams of the run seed.
enum class SeedStream : uint64_t {
  kWeights = 0x57,
  kTrainData = 0xD0,
  kEvalData = 0xE0,
  kBatch = 0xB0,
};

inline uint64_t derive_seed(uint64_t seed, SeedStream stream) {
  SplitMix64 sm(seed ^ (static_cast<uint64_t>(stream) * 0x9E3779B97F4A7C15ULL));
  return sm.next();
}

inline std::string format_float(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return std::string(buf);
}

}  // namespace detail

inline SequenceBatch training_data(const RunConfig& cfg) {
  if (!cfg.data_path.empty()) return SequenceBatch::load(cfg.data_path);
  SpriteSequenceSpec spec = cfg.sequence_spec();
  spec.seed = detail::derive_seed(cfg.seed, detail::SeedStream::kTrainData);
  std::optional<DigitSet> digits;
  if (spec.kind == SpriteKind::kMnistDigit) digits = load_idx(cfg.idx_images, cfg.idx_labels);
  return generate(spec, cfg.train_sequences, digits ? &*digits : nullptr);
}

inline SequenceBatch evaluation_data(const RunConfig& cfg) {
  if (!cfg.eval_data_path.empty()) return SequenceBatch::load(cfg.eval_data_path);
  SpriteSequenceSpec spec = cfg.sequence_spec();
  spec.seed = detail::derive_seed(cfg.seed, detail::SeedStream::kEvalData);
  std::optional<DigitSet> digits;
  if (spec.kind == SpriteKind::kMnistDigit) digits = load_idx(cfg.idx_images, cfg.idx_labels);
  return generate(spec, cfg.eval_sequences, digits ? &*digits : nullptr);
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainHooks {
  std::function<void(long long step, double loss)> on_step;
  std::function<void(int t, int layer, CellTrace&)> trace_hook;
  bool trace_maps = false;
};

struct TrainResult {
  std::string checkpoint_path;  // final (or last good on abort)
  std::string log_path;
  double final_loss = 0.0;
  long long steps_run = 0;
  bool aborted_nan = false;
  std::string diagnostic;
};

inline TrainResult run_training(const RunConfig& cfg, std::ostream* console = nullptr,
                                const TrainHooks& hooks = {}) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);

  SequenceBatch train_set = training_data(cfg);
  const int seq_len = cfg.conditioning + cfg.horizon;
  if (train_set.t < seq_len) {
    throw ConfigError("training data holds " + std::to_string(train_set.t) +
                      " frames, need conditioning + horizon = " + std::to_string(seq_len));
  }

  Xoshiro256pp init_rng(detail::derive_seed(cfg.seed, detail::SeedStream::kWeights));
  PredictiveModel model(cfg.model_config(), init_rng);
  AdamOptimizer opt(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
  Xoshiro256pp batch_rng(detail::derive_seed(cfg.seed, detail::SeedStream::kBatch));

  TrainResult result;
  result.log_path = cfg.out_dir + "/loss_log.csv";
  std::ofstream log(result.log_path);
  if (!log) throw IoError("cannot open loss log: " + result.log_path);
  log << "# training loss: per-step MSE averaged over prediction steps\n";
  log << "step,loss\n";

  const std::string echo = cfg.serialize();
  const std::string last_path = cfg.out_dir + "/checkpoint_last.stau";
  const std::string final_path = cfg.out_dir + "/checkpoint_final.stau";
  auto save = [&](const std::string& path, long long step) {
    TrainerState state;
    state.has_optimizer = true;
    batch_rng.save(state.rng);
    state.global_step = static_cast<uint64_t>(step);
    save_checkpoint(path, echo, model.parameters(), state);
  };

  RolloutOptions ropts;
  ropts.mode = RolloutMode::kTeacherForced;
  ropts.compute_loss = true;
  ropts.trace_hook = hooks.trace_hook;
  ropts.trace_maps = hooks.trace_maps;

  const auto wall_start = std::chrono::steady_clock::now();
  double loss_value = 0.0;
  for (long long step = 1; step <= cfg.steps; ++step) {
    std::vector<int> indices(cfg.batch);
    for (auto& ix : indices) {
      ix = static_cast<int>(batch_rng.below(static_cast<uint64_t>(train_set.b - 1)));
    }
    std::vector<Tensor> frames;
    frames.reserve(seq_len);
    for (int t = 0; t < seq_len; ++t) frames.push_back(train_set.frame_subset(indices, t));

    try {
      RolloutResult rollout = model.rollout(frames, ropts);
      loss_value = rollout.loss.item();
      if (!std::isfinite(loss_value)) throw NumericError("loss is not finite");
      backward(rollout.loss);
      opt.step(model.parameters());
    } catch (const NumericError& err) {
      result.aborted_nan = true;
      result.diagnostic = "step " + std::to_string(step) + ": " + err.what();
      std::ofstream diag(cfg.out_dir + "/nan_diagnostic.txt");
      diag << result.diagnostic << "\n";
      if (console) *console << "aborting on numeric error, " << result.diagnostic << "\n";
      // checkpoint_last.stau still holds the most recent periodic snapshot
      result.checkpoint_path = fs::exists(last_path) ? last_path : "";
      result.steps_run = step - 1;
      return result;
    }

    if (step % cfg.log_every == 0) {
      log << step << "," << detail::format_float(loss_value) << "\n";
    }
    if (hooks.on_step) hooks.on_step(step, loss_value);
    if (cfg.save_every > 0 && step % cfg.save_every == 0) {
      save(last_path, step);
      if (console) {
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
        *console << "step " << step << "/" << cfg.steps << " loss "
                 << detail::format_float(loss_value) << " (" << detail::format_float(secs)
                 << "s)\n";
      }
    }
    result.steps_run = step;
  }
  save(final_path, cfg.steps);
  result.checkpoint_path = final_path;
  result.final_loss = loss_value;
  log.close();
  if (console) *console << "final checkpoint: " << final_path << "\n";
  return result;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalResult {
  MetricReport report;
  std::string report_path;
  RunConfig config;  // checkpoint topology merged with eval overrides
};

// Builds the model from the checkpoint's own config echo; the request only
// contributes evaluation fields (data, horizon, output paths, seed).
inline RunConfig merge_eval_config(const RunConfig& ckpt_cfg, const RunConfig& request) {
  RunConfig cfg = ckpt_cfg;
  cfg.eval_sequences = request.eval_sequences;
  cfg.conditioning = request.conditioning;
  cfg.horizon = request.horizon;
  cfg.eval_data_path = request.eval_data_path;
  cfg.data_path = request.data_path;
  cfg.idx_images = request.idx_images;
  cfg.idx_labels = request.idx_labels;
  cfg.out_dir = request.out_dir;
  cfg.seed = request.seed;
  cfg.frames = request.frames;
  return cfg;
}

inline PredictiveModel model_from_checkpoint(const LoadedCheckpoint& ckpt, RunConfig& cfg_out) {
  cfg_out = RunConfig::parse(ckpt.config_echo);
  Xoshiro256pp dummy(0);
  PredictiveModel model(cfg_out.model_config(), dummy);
  apply_checkpoint(ckpt, model.parameters());
  return model;
}

inline EvalResult run_eval(const std::string& checkpoint_path, const RunConfig& request,
                           std::ostream* console = nullptr, int dump_sequences = 2) {
  namespace fs = std::filesystem;
  LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path);
  RunConfig ckpt_cfg;
  PredictiveModel model = model_from_checkpoint(ckpt, ckpt_cfg);
  RunConfig cfg = merge_eval_config(ckpt_cfg, request);
  cfg.validate();
  fs::create_directories(cfg.out_dir);

  SequenceBatch eval_set = evaluation_data(cfg);
  const int seq_len = cfg.conditioning + cfg.horizon;
  if (eval_set.t < seq_len) {
    throw ConfigError("evaluation data too short for conditioning + horizon");
  }
  std::vector<int> all(eval_set.b);
  for (int i = 0; i < eval_set.b; ++i) all[i] = i;
  std::vector<Tensor> frames;
  for (int t = 0; t < seq_len; ++t) frames.push_back(eval_set.frame_subset(all, t));

  NoGradGuard no_grad;
  RolloutOptions ropts;
  ropts.mode = RolloutMode::kClosedLoop;
  ropts.closed_loop_after = cfg.conditioning;
  ropts.compute_loss = false;
  RolloutResult rollout = model.rollout(frames, ropts);

  // horizon predictions: \hat v_{c+1} .. \hat v_{c+h}
  std::vector<Tensor> preds, targets;
  for (int i = 0; i < cfg.horizon; ++i) {
    preds.push_back(rollout.predictions[cfg.conditioning - 1 + i]);
    targets.push_back(frames[cfg.conditioning + i]);
  }
  EvalResult out;
  out.report = evaluate_metrics(preds, targets);
  out.report_path = cfg.out_dir + "/eval_report.csv";
  out.config = cfg;
  out.report.write_csv(out.report_path);

  const int n_dump = std::min(dump_sequences, eval_set.b);
  for (int s = 0; s < n_dump; ++s) {
    for (int i = 0; i < cfg.horizon; ++i) {
      const Shape4 fs4 = preds[i].shape();
      const long long plane = static_cast<long long>(fs4.h) * fs4.w;
      char name[128];
      std::snprintf(name, sizeof(name), "%s/pred_seq%d_t%02d.pgm", cfg.out_dir.c_str(), s,
                    cfg.conditioning + i + 1);
      write_pgm(name, preds[i].values().data() + s * fs4.c * plane, fs4.h, fs4.w);
      std::snprintf(name, sizeof(name), "%s/gt_seq%d_t%02d.pgm", cfg.out_dir.c_str(), s,
                    cfg.conditioning + i + 1);
      write_pgm(name, targets[i].values().data() + s * fs4.c * plane, fs4.h, fs4.w);
    }
  }
  if (console) {
    *console << "eval: mse_pp " << detail::format_float(out.report.mean_mse_per_pixel())
             << " ssim " << detail::format_float(out.report.mean_ssim()) << " -> "
             << out.report_path << "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

inline std::string run_gen_data(const RunConfig& cfg, int count, const std::string& path,
                                std::ostream* console = nullptr) {
  SpriteSequenceSpec spec = cfg.sequence_spec();
  spec.seed = detail::derive_seed(cfg.seed, detail::SeedStream::kTrainData);
  std::optional<DigitSet> digits;
  if (spec.kind == SpriteKind::kMnistDigit) digits = load_idx(cfg.idx_images, cfg.idx_labels);
  SequenceBatch batch = generate(spec, count, digits ? &*digits : nullptr);
  batch.save(path);
  if (console) {
    *console << "wrote " << count << " sequences (" << batch.t << "x" << batch.h << "x" << batch.w
             << ") to " << path << "\n";
  }
  return path;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct AblateVariant {
  std::string name;
  std::string temporal_supervision;
  std::string spatial_supervision;
};

inline const std::vector<AblateVariant>& supervision_variants() {
  // full cross-supervision, the two single-direction variants, and the
  // fully self-supervised unit
  static const std::vector<AblateVariant> v = {
      {"full", "cross", "cross"},
      {"s_to_t", "cross", "self"},
      {"t_to_s", "self", "cross"},
      {"none", "self", "self"},
  };
  return v;
}

struct AblateRow {
  std::string variant;
  int tau = 0, theta = 0;
  long long parameters = 0;
  long long macs_per_step = 0;
  double final_train_loss = 0.0;
  double eval_mse_per_pixel = 0.0;
  double eval_mse_frame_sum = 0.0;
  double eval_psnr = 0.0;
  double eval_ssim = 0.0;
};

struct AblateResult {
  std::vector<AblateRow> rows;
  std::string csv_path;
};

// Trains and evaluates every requested variant / receptive-field combination
// with a shared seed and merges the results into one CSV.
inline AblateResult run_ablate(const RunConfig& base, const std::vector<std::string>& variants,
                               const std::vector<int>& taus, const std::vector<int>& thetas,
                               std::ostream* console = nullptr) {
  namespace fs = std::filesystem;
  fs::create_directories(base.out_dir);
  AblateResult out;
  for (const std::string& vname : variants) {
    const AblateVariant* variant = nullptr;
    for (const auto& v : supervision_variants()) {
      if (v.name == vname) variant = &v;
    }
    if (!variant) throw ConfigError("unknown ablation variant: " + vname);
    for (int tau : taus) {
      for (int theta : thetas) {
        RunConfig cfg = base;
        cfg.temporal_supervision = variant->temporal_supervision;
        cfg.spatial_supervision = variant->spatial_supervision;
        cfg.tau = tau;
        cfg.theta = theta;
        const std::string run_name =
            vname + "_tau" + std::to_string(tau) + "_theta" + std::to_string(theta);
        cfg.out_dir = base.out_dir + "/" + run_name;
        if (console) *console << "[ablate] " << run_name << "\n";
        TrainResult trained = run_training(cfg, console);
        if (trained.aborted_nan) {
          throw NumericError("ablation run " + run_name + " aborted: " + trained.diagnostic);
        }
        RunConfig eval_req = cfg;
        eval_req.out_dir = cfg.out_dir + "/eval";
        EvalResult eval = run_eval(trained.checkpoint_path, eval_req, console, 0);

        Xoshiro256pp tmp_rng(0);
        PredictiveModel probe(cfg.model_config(), tmp_rng);
        AblateRow row;
        row.variant = vname;
        row.tau = tau;
        row.theta = theta;
        row.parameters = probe.parameter_count();
        row.macs_per_step = probe.cell_stack_macs(cfg.canvas_h >> cfg.encoder_depth,
                                                  cfg.canvas_w >> cfg.encoder_depth);
        row.final_train_loss = trained.final_loss;
        row.eval_mse_per_pixel = eval.report.mean_mse_per_pixel();
        row.eval_mse_frame_sum = eval.report.mean_mse_frame_sum();
        row.eval_psnr = eval.report.mean_psnr();
        row.eval_ssim = eval.report.mean_ssim();
        out.rows.push_back(row);
      }
    }
  }

  std::vector<std::vector<std::string>> rows;
  rows.push_back({"variant", "tau", "theta", "parameters", "macs_per_cell_stack_step",
                  "final_train_loss", "eval_mse_per_pixel", "eval_mse_frame_sum", "eval_psnr",
                  "eval_ssim"});
  for (const auto& r : out.rows) {
    rows.push_back({r.variant, std::to_string(r.tau), std::to_string(r.theta),
                    std::to_string(r.parameters), std::to_string(r.macs_per_step),
                    detail::format_float(r.final_train_loss),
                    detail::format_float(r.eval_mse_per_pixel),
                    detail::format_float(r.eval_mse_frame_sum), detail::format_float(r.eval_psnr),
                    detail::format_float(r.eval_ssim)});
  }
  out.csv_path = base.out_dir + "/ablation.csv";
  write_csv(out.csv_path,
            {"macs: convolution kernels + attention dot products and weighted sums, per sample "
             "per time step through the cell stack at steady-state windows"},
            rows);
  if (console) *console << "ablation table: " << out.csv_path << "\n";
  return out;
}

// ---------------------------------------------------------------------------
// dump-attention
// ---------------------------------------------------------------------------

namespace detail {

// C channel maps tiled into one grid image, each map min-max normalized.
inline void write_feature_grid(const std::string& path, const Tensor& t, int sample) {
  const Shape4 s = t.shape();
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(s.c))));
  const int rows = (s.c + cols - 1) / cols;
  const int gap = 1;
  const int gh = rows * s.h + (rows - 1) * gap;
  const int gw = cols * s.w + (cols - 1) * gap;
  std::vector<float> grid(static_cast<size_t>(gh) * gw, 0.0f);
  const auto v = t.values();
  const long long plane = static_cast<long long>(s.h) * s.w;
  for (int c = 0; c < s.c; ++c) {
    const float* src = v.data() + (static_cast<long long>(sample) * s.c + c) * plane;
    float lo = src[0], hi = src[0];
    for (long long i = 1; i < plane; ++i) {
      lo = std::min(lo, src[i]);
      hi = std::max(hi, src[i]);
    }
    const float span = hi > lo ? hi - lo : 1.0f;
    const int r0 = (c / cols) * (s.h + gap);
    const int c0 = (c % cols) * (s.w + gap);
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < s.w; ++x) {
        grid[static_cast<long long>(r0 + y) * gw + c0 + x] = (src[y * s.w + x] - lo) / span;
      }
    }
  }
  write_pgm(path, grid.data(), gh, gw);
}

}  // namespace detail

struct AttentionDump {
  std::vector<std::vector<float>> alphas, betas;
  std::vector<float> ft_mean, fs_mean, ut_mean, us_mean;
  std::vector<std::string> files;
};

// Probes one (time step, layer) during a teacher-forced rollout and writes
// the attention scores, gate means and normalized feature-map grids.
inline AttentionDump run_dump_attention(const std::string& checkpoint_path,
                                        const RunConfig& request, int probe_step, int probe_layer,
                                        std::ostream* console = nullptr) {
  namespace fs = std::filesystem;
  LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path);
  RunConfig ckpt_cfg;
  PredictiveModel model = model_from_checkpoint(ckpt, ckpt_cfg);
  RunConfig cfg = merge_eval_config(ckpt_cfg, request);
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  if (probe_layer < 1 || probe_layer > cfg.layers) {
    throw ConfigError("dump-attention: layer out of range");
  }

  SequenceBatch data = evaluation_data(cfg);
  std::vector<int> all(data.b);
  for (int i = 0; i < data.b; ++i) all[i] = i;
  std::vector<Tensor> frames = data.frames_subset(all);
  if (probe_step < 1 || probe_step >= static_cast<int>(frames.size())) {
    throw ConfigError("dump-attention: step out of range");
  }

  AttentionDump dump;
  CellTrace probe;
  bool captured = false;
  NoGradGuard no_grad;
  RolloutOptions ropts;
  ropts.compute_loss = false;
  ropts.trace_maps = true;
  ropts.trace_hook = [&](int t, int layer, CellTrace& trace) {
    if (t == probe_step && layer == probe_layer) {
      probe = trace;
      captured = true;
    }
  };
  model.rollout(frames, ropts);
  if (!captured) throw ConfigError("dump-attention: probe point not reached");

  dump.alphas = probe.alphas;
  dump.betas = probe.betas;
  dump.ft_mean = probe.ft_mean;
  dump.fs_mean = probe.fs_mean;
  dump.ut_mean = probe.ut_mean;
  dump.us_mean = probe.us_mean;

  auto write_weight_csv = [&](const std::string& name,
                              const std::vector<std::vector<float>>& weights) {
    if (weights.empty()) return;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> header{"sample"};
    for (size_t j = 0; j < weights.front().size(); ++j) header.push_back("w" + std::to_string(j + 1));
    rows.push_back(header);
    for (size_t s = 0; s < weights.size(); ++s) {
      std::vector<std::string> row{std::to_string(s)};
      for (float w : weights[s]) row.push_back(detail::format_float(w));
      rows.push_back(row);
    }
    const std::string path = cfg.out_dir + "/" + name;
    write_csv(path, {"attention weights at step " + std::to_string(probe_step) + ", layer " +
                         std::to_string(probe_layer) + "; newest/top entry first"},
              rows);
    dump.files.push_back(path);
  };
  write_weight_csv("alphas.csv", dump.alphas);
  write_weight_csv("betas.csv", dump.betas);

  {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"sample", "f_t_mean", "f_s_mean", "u_t_mean", "u_s_mean"});
    const size_t n = dump.ut_mean.size();
    for (size_t s = 0; s < n; ++s) {
      auto get = [&](const std::vector<float>& v) {
        return s < v.size() ? detail::format_float(v[s]) : std::string("na");
      };
      rows.push_back({std::to_string(s), get(dump.ft_mean), get(dump.fs_mean), get(dump.ut_mean),
                      get(dump.us_mean)});
    }
    const std::string path = cfg.out_dir + "/gates.csv";
    write_csv(path, {"gate means per sample"}, rows);
    dump.files.push_back(path);
  }

  auto write_map = [&](const char* name, const Tensor& t) {
    if (!t.defined()) return;
    const std::string path = cfg.out_dir + "/" + name + ".pgm";
    detail::write_feature_grid(path, t, 0);
    dump.files.push_back(path);
  };
  write_map("t_att", probe.t_att);
  write_map("s_att", probe.s_att);
  write_map("t_ami", probe.t_ami);
  write_map("s_aai", probe.s_aai);
  write_map("f_t", probe.f_t);
  write_map("f_s", probe.f_s);
  write_map("u_t", probe.u_t);
  write_map("u_s", probe.u_s);

  if (console) {
    *console << "attention dump for step " << probe_step << ", layer " << probe_layer << " -> "
             << cfg.out_dir << "\n";
  }
  return dump;
}

}  // namespace stau
