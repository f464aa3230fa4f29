// Copyright 2026 The stpred Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Frame-quality metrics. Frames are any tensor whose last two extents are
// H and W; leading extents (batch, channel) are treated as separate planes.

#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "stpred/errors.hpp"
#include "stpred/tensor.hpp"

namespace stpred {

// Mean over all elements of the squared difference.
template <typename S>
double frame_mse(const TensorT<S>& pred, const TensorT<S>& truth) {
  require_same(pred.shape(), truth.shape(), "frame_mse");
  if (pred.size() == 0) throw ShapeError("frame_mse: empty frame");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(truth[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

inline double psnr_from_mse(double mse, double max_val = 1.0, double cap = 100.0) {
  if (mse <= max_val * max_val * std::pow(10.0, -cap / 10.0)) return cap;
  return 10.0 * std::log10(max_val * max_val / mse);
}

template <typename S>
double psnr(const TensorT<S>& pred, const TensorT<S>& truth, double max_val = 1.0, double cap = 100.0) {
  return psnr_from_mse(frame_mse(pred, truth), max_val, cap);
}

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double L = 1.0;
};

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> g(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    g[i] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
    total += g[i];
  }
  for (double& v : g) v /= total;
  return g;
}

// Valid-mode separable filtering of one H x W plane.
inline std::vector<double> filter_valid(const std::vector<double>& img, int h, int w, const std::vector<double>& g) {
  const int k = static_cast<int>(g.size());
  const int oh = h - k + 1, ow = w - k + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) acc += g[i] * img[static_cast<std::size_t>(y) * w + x + i];
      rows[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) acc += g[i] * rows[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  return out;
}

}  // namespace detail

// Gaussian-window SSIM averaged over valid window positions and planes.
template <typename S>
double ssim(const TensorT<S>& pred, const TensorT<S>& truth, const SsimParams& p = {}) {
  require_same(pred.shape(), truth.shape(), "ssim");
  const auto dims = pred.shape().dims();
  if (dims.size() < 2) throw ShapeError("ssim: frames need height and width");
  const int h = dims[dims.size() - 2], w = dims[dims.size() - 1];
  if (p.window < 1 || h < p.window || w < p.window) {
    throw ShapeError("ssim: frame " + std::to_string(h) + "x" + std::to_string(w) + " is smaller than the " +
                     std::to_string(p.window) + "x" + std::to_string(p.window) + " window");
  }
  const std::vector<double> g = detail::gaussian_window(p.window, p.sigma);
  const double c1 = (p.k1 * p.L) * (p.k1 * p.L);
  const double c2 = (p.k2 * p.L) * (p.k2 * p.L);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t planes = pred.size() / plane;

  double total = 0.0;
  std::size_t count = 0;
  std::vector<double> a(plane), b(plane), aa(plane), bb(plane), ab(plane);
  for (std::size_t q = 0; q < planes; ++q) {
    for (std::size_t i = 0; i < plane; ++i) {
      a[i] = static_cast<double>(pred[q * plane + i]);
      b[i] = static_cast<double>(truth[q * plane + i]);
      aa[i] = a[i] * a[i];
      bb[i] = b[i] * b[i];
      ab[i] = a[i] * b[i];
    }
    const auto ma = detail::filter_valid(a, h, w, g);
    const auto mb = detail::filter_valid(b, h, w, g);
    const auto saa = detail::filter_valid(aa, h, w, g);
    const auto sbb = detail::filter_valid(bb, h, w, g);
    const auto sab = detail::filter_valid(ab, h, w, g);
    for (std::size_t i = 0; i < ma.size(); ++i) {
      const double va = saa[i] - ma[i] * ma[i];
      const double vb = sbb[i] - mb[i] * mb[i];
      const double cov = sab[i] - ma[i] * mb[i];
      total += ((2 * ma[i] * mb[i] + c1) * (2 * cov + c2)) /
               ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

// Critical success index after binarising both fields at `threshold`
// (value >= threshold is an event). No events anywhere counts as 1.
template <typename S>
double csi(const TensorT<S>& pred, const TensorT<S>& truth, double threshold) {
  require_same(pred.shape(), truth.shape(), "csi");
  std::size_t hits = 0, misses = 0, false_alarms = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = static_cast<double>(pred[i]) >= threshold;
    const bool t = static_cast<double>(truth[i]) >= threshold;
    hits += p && t;
    misses += !p && t;
    false_alarms += p && !t;
  }
  const std::size_t denom = hits + misses + false_alarms;
  return denom == 0 ? 1.0 : static_cast<double>(hits) / static_cast<double>(denom);
}

// Per-forecast-step metrics, each averaged over the evaluated sequences.
struct MetricReport {
  int first_t = 1;  // label of row 0 (T + 1 for a forecast)
  std::vector<double> thresholds;
  std::vector<double> mse, psnr, ssim;
  std::vector<std::vector<double>> csi;  // csi[row][threshold]

  std::size_t rows() const { return mse.size(); }

  static double mean(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  }
  double mean_mse() const { return mean(mse); }
  double mean_psnr() const { return mean(psnr); }
  double mean_ssim() const { return mean(ssim); }

  std::string to_csv() const {
    std::ostringstream os;
    os << "t,mse,psnr,ssim";
    for (double th : thresholds) os << ",csi@" << th;
    os << "\n" << std::setprecision(9);
    for (std::size_t r = 0; r < rows(); ++r) {
      os << first_t + static_cast<int>(r) << "," << mse[r] << "," << psnr[r] << "," << ssim[r];
      for (double c : csi[r]) os << "," << c;
      os << "\n";
    }
    return os.str();
  }

  void write_csv(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f << to_csv();
    if (!f) throw IoError("write failed on '" + path + "'");
  }

  bool operator==(const MetricReport&) const = default;
};

// Accumulates per-sample frame metrics row by row.
class MetricAccumulator {
 public:
  MetricAccumulator(int first_t, int rows, std::vector<double> thresholds, SsimParams ssim = {})
      : ssim_(ssim), count_(static_cast<std::size_t>(rows), 0) {
    if (rows < 0) throw ContractError("MetricAccumulator: negative row count");
    report_.first_t = first_t;
    report_.thresholds = std::move(thresholds);
    report_.mse.assign(rows, 0.0);
    report_.psnr.assign(rows, 0.0);
    report_.ssim.assign(rows, 0.0);
    report_.csi.assign(rows, std::vector<double>(report_.thresholds.size(), 0.0));
  }

  // pred/truth are [N, J, H, W]; each sample contributes one observation.
  template <typename S>
  void add(int row, const TensorT<S>& pred, const TensorT<S>& truth) {
    require_same(pred.shape(), truth.shape(), "metrics");
    require_rank4(pred.shape(), "metrics");
    if (row < 0 || static_cast<std::size_t>(row) >= count_.size()) throw ContractError("metrics: row out of range");
    const Shape s = pred.shape();
    const Shape one = nchw(1, s.c(), s.h(), s.w());
    const std::size_t per = one.numel();
    for (int n = 0; n < s.n(); ++n) {
      TensorT<S> a(one), b(one);
      std::copy(pred.ptr() + n * per, pred.ptr() + (n + 1) * per, a.ptr());
      std::copy(truth.ptr() + n * per, truth.ptr() + (n + 1) * per, b.ptr());
      const double m = frame_mse(a, b);
      report_.mse[row] += m;
      report_.psnr[row] += psnr_from_mse(m);
      report_.ssim[row] += stpred::ssim(a, b, ssim_);
      for (std::size_t k = 0; k < report_.thresholds.size(); ++k) {
        report_.csi[row][k] += stpred::csi(a, b, report_.thresholds[k]);
      }
      ++count_[row];
    }
  }

  MetricReport finish() const {
    MetricReport r = report_;
    for (std::size_t i = 0; i < count_.size(); ++i) {
      if (count_[i] == 0) throw ContractError("metrics: row " + std::to_string(i) + " has no observations");
      const double c = static_cast<double>(count_[i]);
      r.mse[i] /= c;
      r.psnr[i] /= c;
      r.ssim[i] /= c;
      for (double& v : r.csi[i]) v /= c;
    }
    return r;
  }

 private:
  SsimParams ssim_;
  MetricReport report_;
  std::vector<std::size_t> count_;
};

}  // namespace stpred
