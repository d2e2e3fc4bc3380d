// Copyright 2026 The stau Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Frame quality metrics. MSE is reported under two conventions (documented
// in every report): per_pixel_mean is the plain mean of squared differences
// on the [0,1] scale; per_frame_sum is the sum of squared differences over
// all pixels of one frame. SSIM is single-scale with an 11x11 Gaussian
// window (sigma 1.5), C1=(0.01L)^2, C2=(0.03L)^2, L=1, valid positions only,
// channel-averaged.

#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "stau/error.hpp"
#include "stau/io.hpp"
#include "stau/tensor.hpp"

namespace stau {

enum class MseConvention { kPerPixelMean, kPerFrameSum };

// Squared-difference metric for one frame (C*H*W values).
inline double frame_mse(std::span<const float> pred, std::span<const float> target,
                        MseConvention convention) {
  if (pred.size() != target.size()) throw ShapeError("frame_mse: size mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - target[i];
    acc += d * d;
  }
  if (convention == MseConvention::kPerPixelMean) acc /= static_cast<double>(pred.size());
  return acc;
}

// 10*log10(maxVal^2 / mse). Identical frames report +infinity.
inline double psnr(double mse_per_pixel, double max_val = 1.0) {
  if (mse_per_pixel <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(max_val * max_val / mse_per_pixel);
}

namespace detail {

inline const std::vector<double>& ssim_window() {
  static const std::vector<double> w = [] {
    std::vector<double> v(11);
    const double sigma = 1.5;
    double sum = 0.0;
    for (int i = 0; i < 11; ++i) {
      const double d = i - 5;
      v[i] = std::exp(-d * d / (2.0 * sigma * sigma));
      sum += v[i];
    }
    for (auto& x : v) x /= sum;
    return v;
  }();
  return w;
}

// Separable valid-mode Gaussian filter of one plane.
inline void gauss_filter(const float* img, int h, int w, std::vector<double>& tmp,
                         std::vector<double>& out, bool square = false,
                         const float* other = nullptr) {
  const auto& win = ssim_window();
  const int ow = w - 10, oh = h - 10;
  tmp.assign(static_cast<size_t>(h) * ow, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < 11; ++k) {
        double v = img[y * w + x + k];
        if (square) v *= v;
        if (other) v = static_cast<double>(img[y * w + x + k]) * other[y * w + x + k];
        acc += win[k] * v;
      }
      tmp[y * ow + x] = acc;
    }
  }
  out.assign(static_cast<size_t>(oh) * ow, 0.0);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < 11; ++k) acc += win[k] * tmp[(y + k) * ow + x];
      out[y * ow + x] = acc;
    }
  }
}

}  // namespace detail

// Single-scale SSIM of one frame pair (C planes of h x w), channel-averaged.
inline double ssim(std::span<const float> pred, std::span<const float> target, int channels,
                   int h, int w) {
  if (pred.size() != target.size() ||
      static_cast<long long>(pred.size()) != static_cast<long long>(channels) * h * w) {
    throw ShapeError("ssim: size mismatch");
  }
  if (h < 11 || w < 11) throw ShapeError("ssim: frame smaller than the 11x11 window");
  constexpr double kC1 = 0.01 * 0.01;  // (0.01*L)^2, L=1
  constexpr double kC2 = 0.03 * 0.03;
  const int oh = h - 10, ow = w - 10;
  std::vector<double> tmp, mu_x, mu_y, xx, yy, xy;
  double total = 0.0;
  for (int c = 0; c < channels; ++c) {
    const float* px = pred.data() + static_cast<long long>(c) * h * w;
    const float* py = target.data() + static_cast<long long>(c) * h * w;
    detail::gauss_filter(px, h, w, tmp, mu_x);
    detail::gauss_filter(py, h, w, tmp, mu_y);
    detail::gauss_filter(px, h, w, tmp, xx, true);
    detail::gauss_filter(py, h, w, tmp, yy, true);
    detail::gauss_filter(px, h, w, tmp, xy, false, py);
    double acc = 0.0;
    for (int i = 0; i < oh * ow; ++i) {
      const double mx = mu_x[i], my = mu_y[i];
      const double vx = xx[i] - mx * mx;
      const double vy = yy[i] - my * my;
      const double cov = xy[i] - mx * my;
      acc += ((2.0 * mx * my + kC1) * (2.0 * cov + kC2)) /
             ((mx * mx + my * my + kC1) * (vx + vy + kC2));
    }
    total += acc / static_cast<double>(oh * ow);
  }
  return total / channels;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct MetricReport {
  std::vector<double> mse_per_pixel, mse_frame_sum, psnr_db, ssim_score;  // per step

  int horizon() const { return static_cast<int>(mse_per_pixel.size()); }

  double mean_of(const std::vector<double>& v) const {
    double acc = 0.0;
    for (double x : v) acc += x;
    return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
  }

  double mean_mse_per_pixel() const { return mean_of(mse_per_pixel); }
  double mean_mse_frame_sum() const { return mean_of(mse_frame_sum); }
  double mean_psnr() const { return mean_of(psnr_db); }
  double mean_ssim() const { return mean_of(ssim_score); }

  void write_csv(const std::string& path) const {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"step", "mse_per_pixel", "mse_frame_sum", "psnr", "ssim"});
    auto fmt = [](double v) {
      if (std::isinf(v)) return std::string("inf");
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.9g", v);
      return std::string(buf);
    };
    for (int i = 0; i < horizon(); ++i) {
      rows.push_back({std::to_string(i + 1), fmt(mse_per_pixel[i]), fmt(mse_frame_sum[i]),
                      fmt(psnr_db[i]), fmt(ssim_score[i])});
    }
    rows.push_back({"mean", fmt(mean_mse_per_pixel()), fmt(mean_mse_frame_sum()),
                    fmt(mean_psnr()), fmt(mean_ssim())});
    write_csv_file(path, rows);
  }

  static MetricReport read_csv_report(const std::string& path) {
    CsvFile file = read_csv(path);
    MetricReport out;
    for (const auto& row : file.rows) {
      if (row.size() != 5 || row[0] == "step" || row[0] == "mean") continue;
      auto parse = [](const std::string& s) {
        return s == "inf" ? std::numeric_limits<double>::infinity() : std::stod(s);
      };
      out.mse_per_pixel.push_back(parse(row[1]));
      out.mse_frame_sum.push_back(parse(row[2]));
      out.psnr_db.push_back(parse(row[3]));
      out.ssim_score.push_back(parse(row[4]));
    }
    return out;
  }

 private:
  static void write_csv_file(const std::string& path,
                             const std::vector<std::vector<std::string>>& rows) {
    const std::vector<std::string> comments = {
        "mse_per_pixel: mean of squared differences on the [0,1] pixel scale",
        "mse_frame_sum: sum of squared differences over all pixels of one frame, [0,1] scale",
        "psnr: 10*log10(1/mse_per_pixel), dB; ssim: 11x11 Gaussian window, sigma 1.5"};
    ::stau::write_csv(path, comments, rows);
  }
};

// Per-step metrics for aligned prediction/target tensors, averaged over the
// batch. PSNR is computed from the batch-mean per-pixel MSE.
inline MetricReport evaluate_metrics(std::span<const Tensor> predictions,
                                     std::span<const Tensor> targets) {
  if (predictions.size() != targets.size()) throw ShapeError("evaluate_metrics: length mismatch");
  MetricReport report;
  for (size_t i = 0; i < predictions.size(); ++i) {
    const Shape4 s = predictions[i].shape();
    if (!(s == targets[i].shape())) throw ShapeError("evaluate_metrics: shape mismatch");
    const long long per = s.numel() / s.b;
    const auto pv = predictions[i].values();
    const auto tv = targets[i].values();
    double mse_pp = 0.0, mse_fs = 0.0, ssim_acc = 0.0;
    for (int b = 0; b < s.b; ++b) {
      std::span<const float> pf(pv.data() + b * per, static_cast<size_t>(per));
      std::span<const float> tf(tv.data() + b * per, static_cast<size_t>(per));
      mse_pp += frame_mse(pf, tf, MseConvention::kPerPixelMean);
      mse_fs += frame_mse(pf, tf, MseConvention::kPerFrameSum);
      ssim_acc += ssim(pf, tf, s.c, s.h, s.w);
    }
    report.mse_per_pixel.push_back(mse_pp / s.b);
    report.mse_frame_sum.push_back(mse_fs / s.b);
    report.psnr_db.push_back(psnr(mse_pp / s.b));
    report.ssim_score.push_back(ssim_acc / s.b);
  }
  return report;
}

}  // namespace stau
