// Copyright 2026 The stau Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: model topology, optimizer, data spec and I/O paths.
// Serializes to a human-readable key=value file; unknown keys are rejected.

#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "stau/cell.hpp"
#include "stau/datagen.hpp"
#include "stau/error.hpp"
#include "stau/model.hpp"

namespace stau {

struct RunConfig {
  // model topology
  int layers = 4;
  int hidden = 64;
  int encoder_depth = 2;
  int tau = 5;
  int theta = 5;
  double gamma = 0.0;
  bool use_tam = true;
  bool use_sam = true;
  std::string temporal_supervision = "cross";
  std::string spatial_supervision = "cross";
  bool per_location_scores = false;

  // optimizer
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  // training
  int batch = 4;
  int steps = 2000;
  uint64_t seed = 1;
  int train_sequences = 32;
  int eval_sequences = 8;

  // data (synthetic generation unless data_path is set)
  int canvas_h = 64;
  int canvas_w = 64;
  int frames = 20;
  int sprites = 2;
  std::string sprite_kind = "rect";
  int sprite_h = 12;
  int sprite_w = 12;
  double vel_min = 0.5;
  double vel_max = 2.0;
  std::string composite = "max";
  std::string data_path;
  std::string eval_data_path;
  std::string idx_images;
  std::string idx_labels;

  // rollout regime
  int conditioning = 10;
  int horizon = 10;

  // output
  std::string out_dir = "out";
  int save_every = 500;
  int log_every = 1;

  CellVariant cell_variant() const {
    CellVariant v;
    v.use_tam = use_tam;
    v.use_sam = use_sam;
    v.temporal_supervision = supervision_from_string(temporal_supervision);
    v.spatial_supervision = supervision_from_string(spatial_supervision);
    v.per_location_scores = per_location_scores;
    return v;
  }

  ModelConfig model_config() const {
    ModelConfig m;
    m.in_channels = 1;
    m.hidden = hidden;
    m.layers = layers;
    m.encoder_depth = encoder_depth;
    m.tau = tau;
    m.theta = theta;
    m.gamma = gamma;
    m.variant = cell_variant();
    return m;
  }

  SpriteSequenceSpec sequence_spec() const {
    SpriteSequenceSpec s;
    s.canvas_h = canvas_h;
    s.canvas_w = canvas_w;
    s.frames = frames;
    s.sprite_count = sprites;
    s.kind = sprite_kind_from_string(sprite_kind);
    s.sprite_h = sprite_h;
    s.sprite_w = sprite_w;
    s.vel_min = vel_min;
    s.vel_max = vel_max;
    s.composite = composite == "max" ? CompositeMode::kMax : CompositeMode::kAddClamp;
    return s;
  }

  void validate() const {
    auto positive = [](long long v, const char* name) {
      if (v < 1) throw ConfigError(std::string(name) + " must be >= 1");
    };
    positive(layers, "layers");
    positive(hidden, "hidden");
    positive(encoder_depth, "encoder_depth");
    positive(tau, "tau");
    positive(theta, "theta");
    positive(batch, "batch");
    positive(steps, "steps");
    positive(train_sequences, "train_sequences");
    positive(eval_sequences, "eval_sequences");
    positive(frames, "frames");
    positive(sprites, "sprites");
    positive(conditioning, "conditioning");
    positive(horizon, "horizon");
    if (gamma < 0.0) throw ConfigError("gamma must be >= 0");
    if (lr <= 0.0) throw ConfigError("lr must be > 0");
    if (conditioning + horizon > frames) {
      throw ConfigError("conditioning + horizon must not exceed the sequence length");
    }
    const int div = 1 << encoder_depth;
    if (canvas_h % div != 0 || canvas_w % div != 0) {
      throw ConfigError("canvas dims must be divisible by 2^encoder_depth");
    }
    if (temporal_supervision != "cross" && temporal_supervision != "self") {
      throw ConfigError("temporal_supervision must be cross or self");
    }
    if (spatial_supervision != "cross" && spatial_supervision != "self") {
      throw ConfigError("spatial_supervision must be cross or self");
    }
    if (composite != "max" && composite != "add") {
      throw ConfigError("composite must be max or add");
    }
    sprite_kind_from_string(sprite_kind);  // throws on unknown kinds
  }

  std::string serialize() const;
  // Sets only the keys present in the text; rejects unknown keys.
  void apply(const std::string& text);
  static RunConfig parse(const std::string& text);
  static RunConfig parse_file(const std::string& path);
};

namespace detail {

struct ConfigField {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    auto add_int = [&f](const char* key, int RunConfig::* member) {
      f.push_back({key, [member](const RunConfig& c) { return std::to_string(c.*member); },
                   [member, key](RunConfig& c, const std::string& v) {
                     try {
                       c.*member = std::stoi(v);
                     } catch (const std::exception&) {
                       throw ConfigError(std::string("bad integer for ") + key + ": " + v);
                     }
                   }});
    };
    auto add_double = [&f](const char* key, double RunConfig::* member) {
      f.push_back({key, [member](const RunConfig& c) { return format_double(c.*member); },
                   [member, key](RunConfig& c, const std::string& v) {
                     try {
                       c.*member = std::stod(v);
                     } catch (const std::exception&) {
                       throw ConfigError(std::string("bad number for ") + key + ": " + v);
                     }
                   }});
    };
    auto add_bool = [&f](const char* key, bool RunConfig::* member) {
      f.push_back({key,
                   [member](const RunConfig& c) { return (c.*member) ? "true" : "false"; },
                   [member, key](RunConfig& c, const std::string& v) {
                     if (v == "true") {
                       c.*member = true;
                     } else if (v == "false") {
                       c.*member = false;
                     } else {
                       throw ConfigError(std::string("bad bool for ") + key + ": " + v);
                     }
                   }});
    };
    auto add_string = [&f](const char* key, std::string RunConfig::* member) {
      f.push_back({key, [member](const RunConfig& c) { return c.*member; },
                   [member](RunConfig& c, const std::string& v) { c.*member = v; }});
    };
    add_int("layers", &RunConfig::layers);
    add_int("hidden", &RunConfig::hidden);
    add_int("encoder_depth", &RunConfig::encoder_depth);
    add_int("tau", &RunConfig::tau);
    add_int("theta", &RunConfig::theta);
    add_double("gamma", &RunConfig::gamma);
    add_bool("use_tam", &RunConfig::use_tam);
    add_bool("use_sam", &RunConfig::use_sam);
    add_string("temporal_supervision", &RunConfig::temporal_supervision);
    add_string("spatial_supervision", &RunConfig::spatial_supervision);
    add_bool("per_location_scores", &RunConfig::per_location_scores);
    add_double("lr", &RunConfig::lr);
    add_double("beta1", &RunConfig::beta1);
    add_double("beta2", &RunConfig::beta2);
    add_double("adam_eps", &RunConfig::adam_eps);
    add_int("batch", &RunConfig::batch);
    add_int("steps", &RunConfig::steps);
    f.push_back({"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
                 [](RunConfig& c, const std::string& v) {
                   try {
                     c.seed = std::stoull(v);
                   } catch (const std::exception&) {
                     throw ConfigError("bad seed: " + v);
                   }
                 }});
    add_int("train_sequences", &RunConfig::train_sequences);
    add_int("eval_sequences", &RunConfig::eval_sequences);
    add_int("canvas_h", &RunConfig::canvas_h);
    add_int("canvas_w", &RunConfig::canvas_w);
    add_int("frames", &RunConfig::frames);
    add_int("sprites", &RunConfig::sprites);
    add_string("sprite_kind", &RunConfig::sprite_kind);
    add_int("sprite_h", &RunConfig::sprite_h);
    add_int("sprite_w", &RunConfig::sprite_w);
    add_double("vel_min", &RunConfig::vel_min);
    add_double("vel_max", &RunConfig::vel_max);
    add_string("composite", &RunConfig::composite);
    add_string("data_path", &RunConfig::data_path);
    add_string("eval_data_path", &RunConfig::eval_data_path);
    add_string("idx_images", &RunConfig::idx_images);
    add_string("idx_labels", &RunConfig::idx_labels);
    add_int("conditioning", &RunConfig::conditioning);
    add_int("horizon", &RunConfig::horizon);
    add_string("out_dir", &RunConfig::out_dir);
    add_int("save_every", &RunConfig::save_every);
    add_int("log_every", &RunConfig::log_every);
    return f;
  }();
  return fields;
}

}  // namespace detail

inline std::string RunConfig::serialize() const {
  std::ostringstream os;
  for (const auto& field : detail::config_fields()) {
    os << field.key << " = " << field.get(*this) << "\n";
  }
  return os.str();
}

inline void RunConfig::apply(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    // strip comments and whitespace
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const size_t begin = line.find_first_not_of(" \t");
    if (begin == std::string::npos) continue;
    const size_t end = line.find_last_not_of(" \t");
    line = line.substr(begin, end - begin + 1);
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    auto trim = [](std::string s) {
      const size_t b = s.find_first_not_of(" \t");
      if (b == std::string::npos) return std::string();
      const size_t e = s.find_last_not_of(" \t");
      return s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    bool found = false;
    for (const auto& field : detail::config_fields()) {
      if (field.key == key) {
        field.set(*this, value);
        found = true;
        break;
      }
    }
    if (!found) {
      throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
}

inline RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  cfg.apply(text);
  return cfg;
}

inline RunConfig RunConfig::parse_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

// ---------------------------------------------------------------------------
// presets
// ---------------------------------------------------------------------------

// Desk-scale preset: one 4x4 square bouncing on a 16x16 canvas, a 2-layer
// 16-channel model with tau=theta=3 trained 10->5.
inline RunConfig toy_preset() {
  RunConfig c;
  c.layers = 2;
  c.hidden = 16;
  c.encoder_depth = 1;
  c.tau = 3;
  c.theta = 3;
  c.gamma = 1.0;
  c.batch = 4;
  c.steps = 2000;
  c.train_sequences = 8;
  c.eval_sequences = 8;
  c.canvas_h = 16;
  c.canvas_w = 16;
  c.frames = 15;
  c.sprites = 1;
  c.sprite_kind = "rect";
  c.sprite_h = 4;
  c.sprite_w = 4;
  c.vel_min = 0.5;
  c.vel_max = 1.5;
  c.conditioning = 10;
  c.horizon = 5;
  c.save_every = 500;
  return c;
}

// Moving-digit preset: 64x64, 20 frames, two sprites, 4x64-channel model,
// 10 conditioning frames and a 10-frame horizon. Digit sprites require IDX
// files (idx_images/idx_labels); the cross sprite is the standalone default.
// Training duration and schedule at this scale are deliberately left to the
// caller (steps is a plain budget; the learning rate is constant).
inline RunConfig mnist_preset() {
  RunConfig c;
  c.layers = 4;
  c.hidden = 64;
  c.encoder_depth = 2;
  c.tau = 5;
  c.theta = 5;
  c.gamma = 0.0;
  c.batch = 4;
  c.steps = 20000;
  c.train_sequences = 256;
  c.eval_sequences = 16;
  c.canvas_h = 64;
  c.canvas_w = 64;
  c.frames = 20;
  c.sprites = 2;
  c.sprite_kind = "cross";
  c.sprite_h = 12;
  c.sprite_w = 12;
  c.vel_min = 1.0;
  c.vel_max = 3.0;
  c.conditioning = 10;
  c.horizon = 10;
  c.save_every = 1000;
  return c;
}

inline RunConfig preset_by_name(const std::string& name) {
  if (name == "toy") return toy_preset();
  if (name == "mnist") return mnist_preset();
  throw ConfigError("unknown preset: " + name);
}

}  // namespace stau
