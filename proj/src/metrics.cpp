// Copyright (c) 2026 gifnet-cpp authors
// SPDX-License-Identifier: Apache-2.0

#include "gifnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

namespace gifnet {

namespace {

namespace fs = std::filesystem;

// Luma plane on the 0-255 scale, double precision.
struct Plane {
  int h = 0, w = 0;
  std::vector<double> v;

  Plane() = default;
  Plane(int hh, int ww) : h(hh), w(ww), v(static_cast<size_t>(hh) * ww, 0.0) {}
  double at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
  double& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  double clamped(int y, int x) const {
    return at(std::clamp(y, 0, h - 1), std::clamp(x, 0, w - 1));
  }
};

Plane luma255(const Image& img) {
  const Image l = to_luma(img);
  Plane p(l.height, l.width);
  for (size_t i = 0; i < l.data.size(); ++i)
    p.v[i] = 255.0 * static_cast<double>(l.data[i]);
  return p;
}

void check_same_size(const Plane& a, const Plane& b, const char* who) {
  if (a.h != b.h || a.w != b.w)
    throw std::invalid_argument(std::string(who) + ": size mismatch");
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

// Separable normalized Gaussian taps.
std::vector<double> gauss_taps(int n, double sigma) {
  std::vector<double> k(static_cast<size_t>(n));
  const double c = (n - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    k[static_cast<size_t>(i)] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
    sum += k[static_cast<size_t>(i)];
  }
  for (double& e : k) e /= sum;
  return k;
}

// Valid-mode filtering as two 1D passes (rows, then columns).
Plane gauss_valid(const Plane& p, const std::vector<double>& taps) {
  const int n = static_cast<int>(taps.size());
  Plane rows(p.h, p.w - n + 1);
  for (int y = 0; y < p.h; ++y)
    for (int x = 0; x < rows.w; ++x) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += taps[static_cast<size_t>(i)] * p.at(y, x + i);
      rows.at(y, x) = acc;
    }
  Plane out(p.h - n + 1, rows.w);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += taps[static_cast<size_t>(i)] * rows.at(y + i, x);
      out.at(y, x) = acc;
    }
  return out;
}

Plane decimate2(const Plane& p) {
  Plane out((p.h + 1) / 2, (p.w + 1) / 2);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) out.at(y, x) = p.at(2 * y, 2 * x);
  return out;
}

Plane product(const Plane& a, const Plane& b) {
  Plane out = a;
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= b.v[i];
  return out;
}

// Pixel-domain VIF of one (reference -> distorted) pair.
double vif_pair(Plane ref, Plane dist) {
  constexpr double kEps = 1e-10;
  constexpr double kSigmaNsq = 2.0;

  double num = 0.0, den = 0.0;
  for (int scale = 1; scale <= 4; ++scale) {
    const int n = (1 << (5 - scale)) + 1;
    const auto taps = gauss_taps(n, n / 5.0);
    if (scale > 1) {
      if (ref.h < n || ref.w < n) break;
      ref = decimate2(gauss_valid(ref, taps));
      dist = decimate2(gauss_valid(dist, taps));
    }
    if (ref.h < n || ref.w < n) break;

    const Plane mu1 = gauss_valid(ref, taps);
    const Plane mu2 = gauss_valid(dist, taps);
    const Plane rr = gauss_valid(product(ref, ref), taps);
    const Plane dd = gauss_valid(product(dist, dist), taps);
    const Plane rd = gauss_valid(product(ref, dist), taps);

    for (size_t i = 0; i < mu1.v.size(); ++i) {
      double s1 = std::max(0.0, rr.v[i] - mu1.v[i] * mu1.v[i]);
      double s2 = std::max(0.0, dd.v[i] - mu2.v[i] * mu2.v[i]);
      const double s12 = rd.v[i] - mu1.v[i] * mu2.v[i];

      double g = s12 / (s1 + kEps);
      double sv = s2 - g * s12;
      if (s1 < kEps) {
        g = 0.0;
        sv = s2;
        s1 = 0.0;
      }
      if (s2 < kEps) {
        g = 0.0;
        sv = 0.0;
      }
      if (g < 0.0) {
        sv = s2;
        g = 0.0;
      }
      if (sv < kEps) sv = kEps;

      num += std::log10(1.0 + g * g * s1 / (sv + kSigmaNsq));
      den += std::log10(1.0 + s1 / kSigmaNsq);
    }
  }
  return den == 0.0 ? 1.0 : num / den;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// stem -> path for every supported raster in dir.
std::map<std::string, fs::path> scan_images(const std::string& dir) {
  if (!fs::is_directory(dir))
    throw std::runtime_error(dir + ": not a directory");
  std::map<std::string, fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension().string();
    if (ext != ".png" && ext != ".bmp") continue;
    const std::string stem = entry.path().stem().string();
    if (!out.emplace(stem, entry.path()).second)
      throw std::runtime_error(dir + ": duplicate image stem " + stem);
  }
  return out;
}

}  // namespace

double metric_ag(const Image& img) {
  const Plane p = luma255(img);
  if (p.h < 2 || p.w < 2) return 0.0;
  double acc = 0.0;
  for (int y = 0; y + 1 < p.h; ++y)
    for (int x = 0; x + 1 < p.w; ++x) {
      const double dx = p.at(y, x + 1) - p.at(y, x);
      const double dy = p.at(y + 1, x) - p.at(y, x);
      acc += std::sqrt((dx * dx + dy * dy) / 2.0);
    }
  return acc / (static_cast<double>(p.h - 1) * (p.w - 1));
}

double metric_ei(const Image& img) {
  const Plane p = luma255(img);
  double acc = 0.0;
  for (int y = 0; y < p.h; ++y)
    for (int x = 0; x < p.w; ++x) {
      const double sx = p.clamped(y - 1, x + 1) + 2.0 * p.clamped(y, x + 1) +
                        p.clamped(y + 1, x + 1) - p.clamped(y - 1, x - 1) -
                        2.0 * p.clamped(y, x - 1) - p.clamped(y + 1, x - 1);
      const double sy = p.clamped(y + 1, x - 1) + 2.0 * p.clamped(y + 1, x) +
                        p.clamped(y + 1, x + 1) - p.clamped(y - 1, x - 1) -
                        2.0 * p.clamped(y - 1, x) - p.clamped(y - 1, x + 1);
      acc += std::sqrt(sx * sx + sy * sy);
    }
  return acc / static_cast<double>(p.h * p.w);
}

double metric_scd(const Image& fused, const Image& src_a, const Image& src_b) {
  const Plane f = luma255(fused), a = luma255(src_a), b = luma255(src_b);
  check_same_size(f, a, "metric_scd");
  check_same_size(f, b, "metric_scd");

  std::vector<double> fa(f.v.size()), fb(f.v.size());
  for (size_t i = 0; i < f.v.size(); ++i) {
    fa[i] = f.v[i] - a.v[i];
    fb[i] = f.v[i] - b.v[i];
  }
  return pearson(fb, a.v) + pearson(fa, b.v);
}

double metric_vif(const Image& fused, const Image& src_a, const Image& src_b) {
  const Plane f = luma255(fused), a = luma255(src_a), b = luma255(src_b);
  check_same_size(f, a, "metric_vif");
  check_same_size(f, b, "metric_vif");
  if (f.h < 17 || f.w < 17)
    throw std::invalid_argument("metric_vif: image smaller than the 17x17 window");
  return 0.5 * (vif_pair(a, f) + vif_pair(b, f));
}

MetricReport evaluate_dir(const std::string& fused_dir,
                          const std::string& src_a_dir,
                          const std::string& src_b_dir) {
  const auto fused = scan_images(fused_dir);
  const auto as = scan_images(src_a_dir);
  const auto bs = scan_images(src_b_dir);
  if (fused.empty())
    throw std::runtime_error(fused_dir + ": no images to evaluate");

  MetricReport report;
  double ei = 0.0, ag = 0.0, vif = 0.0, scd = 0.0;
  for (const auto& [stem, path] : fused) {
    const auto ita = as.find(stem);
    const auto itb = bs.find(stem);
    if (ita == as.end() || itb == bs.end())
      throw std::runtime_error("no source pair for fused image " + stem);
    const Image f = load_image(path.string());
    const Image a = load_image(ita->second.string());
    const Image b = load_image(itb->second.string());

    MetricRow row;
    row.id = stem;
    row.ei = metric_ei(f);
    row.ag = metric_ag(f);
    row.vif = metric_vif(f, a, b);
    row.scd = metric_scd(f, a, b);
    ei += row.ei;
    ag += row.ag;
    vif += row.vif;
    scd += row.scd;
    report.per_image.push_back(std::move(row));
  }
  const double n = static_cast<double>(report.per_image.size());
  report.mean = {"MEAN", ei / n, ag / n, vif / n, scd / n};
  return report;
}

std::string format_metric_report(const MetricReport& report) {
  std::string out = "id\tei\tag\tvif\tscd\n";
  auto row_line = [&](const MetricRow& r) {
    out += r.id + '\t' + fmt(r.ei) + '\t' + fmt(r.ag) + '\t' + fmt(r.vif) +
           '\t' + fmt(r.scd) + '\n';
  };
  for (const auto& row : report.per_image) row_line(row);
  row_line(report.mean);
  return out;
}

void write_metric_report(const MetricReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error(path + ": cannot open report for writing");
  out << format_metric_report(report);
  if (!out.flush()) throw std::runtime_error(path + ": report write failed");
}

}  // namespace gifnet
