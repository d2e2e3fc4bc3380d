// Copyright 2026 The stau Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic bouncing-sprite sequences (moving-digit style), IDX digit
// loading, and the binary sequence container.
//
// Sprite positions integrate in Q8 fixed point and render at the nearest
// pixel, so identically seeded batches are bitwise identical across
// platforms. Each sequence draws from its own PRNG stream derived from
// (seed, sequence index).

#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "stau/error.hpp"
#include "stau/io.hpp"
#include "stau/rng.hpp"
#include "stau/tensor.hpp"
#include "stau/thread_pool.hpp"

namespace stau {

enum class SpriteKind { kRect, kCross, kMnistDigit };
enum class CompositeMode { kMax, kAddClamp };

inline SpriteKind sprite_kind_from_string(const std::string& s) {
  if (s == "rect") return SpriteKind::kRect;
  if (s == "cross") return SpriteKind::kCross;
  if (s == "mnist") return SpriteKind::kMnistDigit;
  throw ConfigError("unknown sprite kind: " + s);
}

inline const char* to_string(SpriteKind k) {
  switch (k) {
    case SpriteKind::kRect: return "rect";
    case SpriteKind::kCross: return "cross";
    default: return "mnist";
  }
}

struct SpriteSequenceSpec {
  int canvas_h = 64, canvas_w = 64;
  int frames = 20;
  int sprite_count = 2;
  SpriteKind kind = SpriteKind::kRect;
  int sprite_h = 12, sprite_w = 12;  // ignored for mnist digits (28x28)
  double vel_min = 0.5, vel_max = 2.0;  // per-axis speed in px/frame
  CompositeMode composite = CompositeMode::kMax;
  uint64_t seed = 0;
};

// MNIST-style digit set (28x28 grayscale in [0,1]).
struct DigitSet {
  int count = 0, rows = 0, cols = 0;
  std::vector<float> pixels;
  std::vector<uint8_t> labels;
};

struct SequenceBatch {
  int b = 0, t = 0, c = 0, h = 0, w = 0;
  std::vector<float> data;  // (B,T,C,H,W) row-major

  long long frame_size() const { return static_cast<long long>(c) * h * w; }

  const float* frame_ptr(int seq, int step) const {
    return data.data() + (static_cast<long long>(seq) * t + step) * frame_size();
  }

  // All sequences at one step as a (B,C,H,W) tensor.
  Tensor frame(int step) const {
    std::vector<float> out(static_cast<size_t>(b) * frame_size());
    for (int s = 0; s < b; ++s) {
      const float* src = frame_ptr(s, step);
      std::copy(src, src + frame_size(), out.begin() + static_cast<long long>(s) * frame_size());
    }
    return Tensor::from_vector(Shape4{b, c, h, w}, std::move(out));
  }

  // Selected sequences at one step.
  Tensor frame_subset(std::span<const int> seqs, int step) const {
    std::vector<float> out(seqs.size() * static_cast<size_t>(frame_size()));
    for (size_t i = 0; i < seqs.size(); ++i) {
      const float* src = frame_ptr(seqs[i], step);
      std::copy(src, src + frame_size(), out.begin() + static_cast<long long>(i) * frame_size());
    }
    return Tensor::from_vector(Shape4{static_cast<int>(seqs.size()), c, h, w}, std::move(out));
  }

  std::vector<Tensor> frames_subset(std::span<const int> seqs) const {
    std::vector<Tensor> out;
    out.reserve(t);
    for (int step = 0; step < t; ++step) out.push_back(frame_subset(seqs, step));
    return out;
  }

  void save(const std::string& path) const;
  static SequenceBatch load(const std::string& path);
};

namespace detail {

// One reflected axis step in Q8 fixed point. range_fp is (canvas-sprite)<<8.
inline void bounce_axis(long long& pos, long long& vel, long long range_fp) {
  if (range_fp <= 0) {
    pos = 0;
    vel = 0;
    return;
  }
  pos += vel;
  while (pos < 0 || pos > range_fp) {
    if (pos < 0) {
      pos = -pos;
      vel = -vel;
    }
    if (pos > range_fp) {
      pos = 2 * range_fp - pos;
      vel = -vel;
    }
  }
}

inline int fp_to_pixel(long long fp) { return static_cast<int>((fp + 128) >> 8); }

}  // namespace detail

// Pixel positions of a sprite integrated for `steps` frames from a Q8 start
// position and velocity, reflecting inside [0, range_px]. The first entry is
// the starting position. Exposed for direct checks against a scalar
// reflection oracle.
inline std::vector<int> simulate_axis(long long pos_fp, long long vel_fp, int range_px,
                                      int steps) {
  const long long range_fp = static_cast<long long>(range_px) << 8;
  std::vector<int> out;
  out.reserve(steps);
  for (int i = 0; i < steps; ++i) {
    out.push_back(detail::fp_to_pixel(pos_fp));
    detail::bounce_axis(pos_fp, vel_fp, range_fp);
  }
  return out;
}

namespace detail {

inline std::vector<float> make_sprite(const SpriteSequenceSpec& spec, const DigitSet* digits,
                                      Xoshiro256pp& rng, int& sh, int& sw) {
  switch (spec.kind) {
    case SpriteKind::kRect: {
      sh = spec.sprite_h;
      sw = spec.sprite_w;
      return std::vector<float>(static_cast<size_t>(sh) * sw, 1.0f);
    }
    case SpriteKind::kCross: {
      sh = spec.sprite_h;
      sw = spec.sprite_w;
      std::vector<float> s(static_cast<size_t>(sh) * sw, 0.0f);
      const int bar_h = std::max(1, sh / 3);
      const int bar_w = std::max(1, sw / 3);
      const int top = (sh - bar_h) / 2;
      const int left = (sw - bar_w) / 2;
      for (int y = 0; y < sh; ++y)
        for (int x = left; x < left + bar_w; ++x) s[y * sw + x] = 1.0f;
      for (int y = top; y < top + bar_h; ++y)
        for (int x = 0; x < sw; ++x) s[y * sw + x] = 1.0f;
      return s;
    }
    default: {
      if (!digits || digits->count == 0) {
        throw ConfigError("mnist sprite source requires a loaded digit set");
      }
      const int idx = static_cast<int>(rng.below(static_cast<uint64_t>(digits->count - 1)));
      sh = digits->rows;
      sw = digits->cols;
      const float* src = digits->pixels.data() + static_cast<long long>(idx) * sh * sw;
      return std::vector<float>(src, src + static_cast<long long>(sh) * sw);
    }
  }
}

}  // namespace detail

// Deterministic sprite-sequence generation; reflection keeps every sprite
// fully inside the canvas.
inline SequenceBatch generate(const SpriteSequenceSpec& spec, int count,
                              const DigitSet* digits = nullptr) {
  if (spec.frames < 2) throw ConfigError("sequence spec: need at least 2 frames");
  if (spec.sprite_count < 1) throw ConfigError("sequence spec: need at least one sprite");
  if (spec.vel_min < 0.0 || spec.vel_max < spec.vel_min) {
    throw ConfigError("sequence spec: invalid velocity range");
  }
  if (spec.vel_max >= std::min(spec.canvas_h, spec.canvas_w)) {
    throw ConfigError("sequence spec: per-step displacement must stay below the canvas size");
  }
  SequenceBatch batch;
  batch.b = count;
  batch.t = spec.frames;
  batch.c = 1;
  batch.h = spec.canvas_h;
  batch.w = spec.canvas_w;
  batch.data.assign(static_cast<size_t>(count) * spec.frames * spec.canvas_h * spec.canvas_w,
                    0.0f);

  parallel_for(count, [&](long long s0, long long s1) {
    for (long long seq = s0; seq < s1; ++seq) {
      Xoshiro256pp rng = Xoshiro256pp::stream(spec.seed, static_cast<uint64_t>(seq));
      struct Sprite {
        std::vector<float> bitmap;
        int sh, sw;
        long long py, px, vy, vx;  // Q8
      };
      std::vector<Sprite> sprites(spec.sprite_count);
      const long long vmin_fp = static_cast<long long>(spec.vel_min * 256.0 + 0.5);
      const long long vmax_fp = static_cast<long long>(spec.vel_max * 256.0 + 0.5);
      for (auto& sp : sprites) {
        sp.bitmap = detail::make_sprite(spec, digits, rng, sp.sh, sp.sw);
        if (sp.sh > spec.canvas_h || sp.sw > spec.canvas_w) {
          throw ConfigError("sprite larger than canvas");
        }
        const long long range_y = static_cast<long long>(spec.canvas_h - sp.sh) << 8;
        const long long range_x = static_cast<long long>(spec.canvas_w - sp.sw) << 8;
        sp.py = range_y > 0 ? static_cast<long long>(rng.below(static_cast<uint64_t>(range_y))) : 0;
        sp.px = range_x > 0 ? static_cast<long long>(rng.below(static_cast<uint64_t>(range_x))) : 0;
        const long long span = vmax_fp - vmin_fp;
        sp.vy = vmin_fp + (span > 0 ? static_cast<long long>(rng.below(static_cast<uint64_t>(span))) : 0);
        if (rng.coin()) sp.vy = -sp.vy;
        sp.vx = vmin_fp + (span > 0 ? static_cast<long long>(rng.below(static_cast<uint64_t>(span))) : 0);
        if (rng.coin()) sp.vx = -sp.vx;
      }
      for (int step = 0; step < spec.frames; ++step) {
        float* frame = batch.data.data() +
                       (static_cast<long long>(seq) * spec.frames + step) *
                           static_cast<long long>(spec.canvas_h) * spec.canvas_w;
        for (auto& sp : sprites) {
          const int y0 = detail::fp_to_pixel(sp.py);
          const int x0 = detail::fp_to_pixel(sp.px);
          for (int y = 0; y < sp.sh; ++y) {
            float* row = frame + static_cast<long long>(y0 + y) * spec.canvas_w + x0;
            const float* src = sp.bitmap.data() + static_cast<long long>(y) * sp.sw;
            if (spec.composite == CompositeMode::kMax) {
              for (int x = 0; x < sp.sw; ++x) row[x] = std::max(row[x], src[x]);
            } else {
              for (int x = 0; x < sp.sw; ++x) row[x] = std::min(1.0f, row[x] + src[x]);
            }
          }
        }
        for (auto& sp : sprites) {
          detail::bounce_axis(sp.py, sp.vy, static_cast<long long>(spec.canvas_h - sp.sh) << 8);
          detail::bounce_axis(sp.px, sp.vx, static_cast<long long>(spec.canvas_w - sp.sw) << 8);
        }
      }
    }
  });
  return batch;
}

// ---------------------------------------------------------------------------
// IDX format (big-endian magic 0x00000803 images / 0x00000801 labels)
// ---------------------------------------------------------------------------

namespace detail {

inline uint32_t get_be_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  bin::read_exact(is, b, 4, what);
  return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
         (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

inline void put_be_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

inline DigitSet load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) throw IoError("cannot open: " + images_path);
  if (detail::get_be_u32(imgs, "idx image magic") != 0x00000803u) {
    throw IoError("bad IDX image magic in " + images_path);
  }
  DigitSet set;
  set.count = static_cast<int>(detail::get_be_u32(imgs, "idx image count"));
  set.rows = static_cast<int>(detail::get_be_u32(imgs, "idx rows"));
  set.cols = static_cast<int>(detail::get_be_u32(imgs, "idx cols"));
  if (set.count < 1 || set.rows < 1 || set.cols < 1) throw IoError("bad IDX image header");
  const long long n = static_cast<long long>(set.count) * set.rows * set.cols;
  std::vector<unsigned char> raw(static_cast<size_t>(n));
  bin::read_exact(imgs, raw.data(), raw.size(), "idx image data");
  set.pixels.resize(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) set.pixels[i] = static_cast<float>(raw[i]) / 255.0f;

  std::ifstream labels(labels_path, std::ios::binary);
  if (!labels) throw IoError("cannot open: " + labels_path);
  if (detail::get_be_u32(labels, "idx label magic") != 0x00000801u) {
    throw IoError("bad IDX label magic in " + labels_path);
  }
  const uint32_t label_count = detail::get_be_u32(labels, "idx label count");
  if (static_cast<int>(label_count) != set.count) {
    throw IoError("IDX image/label count mismatch: " + std::to_string(set.count) + " vs " +
                  std::to_string(label_count));
  }
  set.labels.resize(label_count);
  bin::read_exact(labels, set.labels.data(), set.labels.size(), "idx label data");
  return set;
}

inline void write_idx(const std::string& images_path, const std::string& labels_path,
                      const DigitSet& set) {
  std::ofstream imgs(images_path, std::ios::binary);
  if (!imgs) throw IoError("cannot open for writing: " + images_path);
  detail::put_be_u32(imgs, 0x00000803u);
  detail::put_be_u32(imgs, static_cast<uint32_t>(set.count));
  detail::put_be_u32(imgs, static_cast<uint32_t>(set.rows));
  detail::put_be_u32(imgs, static_cast<uint32_t>(set.cols));
  for (float v : set.pixels) {
    imgs.put(static_cast<char>(static_cast<int>(v * 255.0f + 0.5f)));
  }
  std::ofstream labels(labels_path, std::ios::binary);
  if (!labels) throw IoError("cannot open for writing: " + labels_path);
  detail::put_be_u32(labels, 0x00000801u);
  detail::put_be_u32(labels, static_cast<uint32_t>(set.count));
  for (uint8_t l : set.labels) labels.put(static_cast<char>(l));
}

// ---------------------------------------------------------------------------
// STAUSEQ1 container: magic, u32 version, u32 dims (B,T,C,H,W), f32 data LE
// ---------------------------------------------------------------------------

inline constexpr char kSequenceMagic[8] = {'S', 'T', 'A', 'U', 'S', 'E', 'Q', '1'};
inline constexpr uint32_t kSequenceVersion = 1;

inline void SequenceBatch::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(kSequenceMagic, 8);
  bin::put_u32(os, kSequenceVersion);
  for (int d : {b, t, c, h, w}) bin::put_u32(os, static_cast<uint32_t>(d));
  bin::put_f32_array(os, data.data(), data.size());
  if (!os) throw IoError("write failed: " + path);
}

inline SequenceBatch SequenceBatch::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[8];
  bin::read_exact(is, magic, 8, "sequence magic");
  if (std::memcmp(magic, kSequenceMagic, 8) != 0) {
    throw IoError("corrupt sequence container (bad magic): " + path);
  }
  const uint32_t version = bin::get_u32(is, "sequence version");
  if (version != kSequenceVersion) {
    throw IoError("sequence container version mismatch: " + std::to_string(version));
  }
  SequenceBatch out;
  uint32_t dims[5];
  for (auto& d : dims) d = bin::get_u32(is, "sequence dims");
  out.b = static_cast<int>(dims[0]);
  out.t = static_cast<int>(dims[1]);
  out.c = static_cast<int>(dims[2]);
  out.h = static_cast<int>(dims[3]);
  out.w = static_cast<int>(dims[4]);
  const long long expect = static_cast<long long>(out.b) * out.t * out.c * out.h * out.w;
  if (expect < 1) throw IoError("corrupt sequence container (bad dims): " + path);
  // element count must equal the header product exactly
  is.seekg(0, std::ios::end);
  const long long payload = static_cast<long long>(is.tellg()) - (8 + 4 + 20);
  if (payload != expect * 4) {
    throw IoError("sequence container size mismatch: header says " + std::to_string(expect) +
                  " elements, file holds " + std::to_string(payload / 4));
  }
  is.seekg(8 + 4 + 20, std::ios::beg);
  out.data.resize(static_cast<size_t>(expect));
  bin::get_f32_array(is, out.data.data(), out.data.size(), "sequence data");
  return out;
}

}  // namespace stau
