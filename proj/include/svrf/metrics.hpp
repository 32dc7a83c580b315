// Copyright Contributors to the SVRF Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "svrf/image.hpp"

namespace svrf {

inline constexpr double kPsnrCap = 99.0;

inline double mse(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument("mse: image dimensions differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    const double d = a.rgb[i] - b.rgb[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.rgb.size());
}

/// -10 log10(MSE), capped at 99 dB so identical images stay finite.
inline double psnr(const Image& a, const Image& b) {
  const double m = mse(a, b);
  if (m <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(m));
}

namespace detail {

inline std::vector<double> gaussian_kernel_11() {
  std::vector<double> k(11);
  double sum = 0.0;
  for (int i = 0; i < 11; ++i) {
    const double x = i - 5;
    k[i] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
    sum += k[i];
  }
  for (auto& v : k) v /= sum;
  return k;
}

inline std::vector<double> to_gray(const Image& img) {
  std::vector<double> g(static_cast<std::size_t>(img.width) * img.height);
  for (std::size_t i = 0; i < g.size(); ++i)
    g[i] = (img.rgb[i * 3] + img.rgb[i * 3 + 1] + img.rgb[i * 3 + 2]) / 3.0;
  return g;
}

// separable valid-region filter; output is (h-10) x (w-10)
inline std::vector<double> gauss_valid(const std::vector<double>& in, int w, int h,
                                       const std::vector<double>& k) {
  const int ow = w - 10, oh = h - 10;
  std::vector<double> horiz(static_cast<std::size_t>(ow) * h);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (int i = 0; i < 11; ++i) acc += k[i] * in[static_cast<std::size_t>(r) * w + c + i];
      horiz[static_cast<std::size_t>(r) * ow + c] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(ow) * oh);
  for (int r = 0; r < oh; ++r)
    for (int c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (int i = 0; i < 11; ++i)
        acc += k[i] * horiz[static_cast<std::size_t>(r + i) * ow + c];
      out[static_cast<std::size_t>(r) * ow + c] = acc;
    }
  return out;
}

}  // namespace detail

/// Mean structural similarity over an 11x11 Gaussian window (sigma 1.5),
/// C1 = 0.01^2 and C2 = 0.03^2 on a [0,1] range, grayscale as channel mean,
/// valid region only.
inline double ssim(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument("ssim: image dimensions differ");
  if (a.width < 11 || a.height < 11)
    throw std::invalid_argument("ssim: image smaller than the 11x11 window");

  const auto k = detail::gaussian_kernel_11();
  const auto ga = detail::to_gray(a);
  const auto gb = detail::to_gray(b);
  const int w = a.width, h = a.height;

  std::vector<double> aa(ga.size()), bb(gb.size()), ab(ga.size());
  for (std::size_t i = 0; i < ga.size(); ++i) {
    aa[i] = ga[i] * ga[i];
    bb[i] = gb[i] * gb[i];
    ab[i] = ga[i] * gb[i];
  }

  const auto mu_a = detail::gauss_valid(ga, w, h, k);
  const auto mu_b = detail::gauss_valid(gb, w, h, k);
  const auto m_aa = detail::gauss_valid(aa, w, h, k);
  const auto m_bb = detail::gauss_valid(bb, w, h, k);
  const auto m_ab = detail::gauss_valid(ab, w, h, k);

  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double acc = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double va = m_aa[i] - mu_a[i] * mu_a[i];
    const double vb = m_bb[i] - mu_b[i] * mu_b[i];
    const double cov = m_ab[i] - mu_a[i] * mu_b[i];
    const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
    const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
    acc += num / den;
  }
  return acc / static_cast<double>(mu_a.size());
}

/// Two-term geometric mean of MSE and sqrt(1 - SSIM). Reported everywhere as
/// "aggregate2" since the perceptual term of the usual three-term mean is
/// not part of this toolkit.
inline double aggregate_metric(double mse_value, double ssim_value) {
  if (mse_value < 0.0) throw std::invalid_argument("aggregate_metric: negative mse");
  if (ssim_value > 1.0 + 1e-12)
    throw std::invalid_argument("aggregate_metric: ssim above 1");
  const double s = std::sqrt(std::max(0.0, 1.0 - ssim_value));
  return std::sqrt(mse_value * s);
}

/// Mean |pred - reference| over pixels whose reference opacity exceeds the
/// threshold.
inline double depth_mae(const Grid& pred, const Grid& reference, const Grid& opacity,
                        double threshold = 0.5) {
  if (pred.width != reference.width || pred.height != reference.height ||
      pred.width != opacity.width || pred.height != opacity.height)
    throw std::invalid_argument("depth_mae: grid dimensions differ");
  double acc = 0.0;
  std::int64_t count = 0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    if (opacity.values[i] <= threshold) continue;
    acc += std::abs(pred.values[i] - reference.values[i]);
    ++count;
  }
  if (count == 0) throw std::invalid_argument("depth_mae: empty opacity mask");
  return acc / static_cast<double>(count);
}

/// Per-image quality record. `mse` is derived from the capped PSNR so the
/// pair stays self-consistent.
struct MetricsReport {
  double psnr = 0.0;
  double ssim = 0.0;
  double mse = 0.0;
  double aggregate2 = 0.0;

  static MetricsReport compare(const Image& rendered, const Image& reference) {
    MetricsReport r;
    r.psnr = svrf::psnr(rendered, reference);
    r.ssim = svrf::ssim(rendered, reference);
    r.mse = std::pow(10.0, -r.psnr / 10.0);
    r.aggregate2 = aggregate_metric(r.mse, r.ssim);
    return r;
  }
};

}  // namespace svrf
