/*
 * Copyright 2026 The Thermonet Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// Evaluation reports: Table-1-style summaries, per-part deviations, bed
// location density grids, correlations, training curves and value
// distributions, each emitted as CSV plus a static SVG rendering that
// embeds the same table. Numbers carry 6 significant digits; identical
// inputs give identical bytes.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "thermonet/io.hpp"
#include "thermonet/metrics.hpp"
#include "thermonet/preprocess.hpp"

namespace thermonet::report {

namespace fs = std::filesystem;
using synth::QualityVector;

inline constexpr std::array<const char*, 4> kDims{"length", "width", "height", "density"};

inline constexpr const char* kErrorNote =
    "# pct error = mean absolute percentage error 100*|pred-truth|/truth; "
    "std = population standard deviation\n";

struct PartRow {
  prep::PartKey key;
  int printer_id = 0;
  std::string split = "test";
  double bed_x = 0.0, bed_y = 0.0;
  QualityVector truth, pred;
  std::optional<double> adp;  // reconstruction ADP when an encoder is present
};

struct VariantResult {
  std::string name;   // machine name, e.g. LatentThermal
  std::string label;  // table row label
  std::vector<PartRow> rows;
};

struct CorrelationEntry {
  std::string feature, target;
  double r = 0.0;
  std::size_t n = 0;
  std::vector<double> x, y;  // series for the scatter rendering
};

struct BedGrid {
  double bed_w = 160.0;
  double bed_h = 120.0;
  std::size_t nx = 4;
  std::size_t ny = 3;
};

struct EvalReport {
  std::vector<VariantResult> variants;
  std::vector<CorrelationEntry> correlations;
  BedGrid grid;
};

/// %.6g with negative zero folded to zero.
inline std::string fmt(double v) {
  if (v == 0.0) v = 0.0;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Statistics

struct SummaryRow {
  std::string name, label;
  std::size_t n = 0;
  std::array<metrics::ErrorStats, 4> pct;  // length, width, height, density
  std::optional<double> mean_adp;
};

inline std::array<double, 4> pct_errors(const PartRow& r) {
  const auto p = r.pred.as_array(), t = r.truth.as_array();
  std::array<double, 4> e{};
  for (std::size_t k = 0; k < 4; ++k) e[k] = metrics::pct_error(p[k], t[k]);
  return e;
}

/// Signed deviation 100 * (pred - truth) / truth.
inline std::array<double, 4> pct_deviation(const PartRow& r) {
  const auto p = r.pred.as_array(), t = r.truth.as_array();
  std::array<double, 4> e{};
  for (std::size_t k = 0; k < 4; ++k) {
    if (!(t[k] > 0.0)) throw Error("pct_deviation: truth must be positive");
    e[k] = 100.0 * (p[k] - t[k]) / t[k];
  }
  return e;
}

inline SummaryRow summarize(const VariantResult& v) {
  if (v.rows.size() < 2) {
    throw Error("summary: variant " + v.name + " needs at least 2 parts, got " +
                std::to_string(v.rows.size()));
  }
  SummaryRow s{v.name, v.label, v.rows.size(), {}, std::nullopt};
  for (std::size_t k = 0; k < 4; ++k) {
    std::vector<double> e;
    for (const auto& r : v.rows) e.push_back(pct_errors(r)[k]);
    s.pct[k] = metrics::error_stats(e);
  }
  std::vector<double> adps;
  for (const auto& r : v.rows)
    if (r.adp) adps.push_back(*r.adp);
  if (!adps.empty()) {
    if (adps.size() != v.rows.size()) throw Error("summary: variant " + v.name + " has partial ADP");
    s.mean_adp = metrics::error_stats(adps).mean;
  }
  return s;
}

inline CorrelationEntry correlate(std::string feature, std::vector<double> x, std::string target,
                                  std::vector<double> y) {
  CorrelationEntry c;
  c.r = metrics::pearson(x, y);
  c.n = x.size();
  c.feature = std::move(feature);
  c.target = std::move(target);
  c.x = std::move(x);
  c.y = std::move(y);
  return c;
}

struct BedCell {
  std::size_t ix = 0, iy = 0;
  double x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  std::size_t n = 0;
  double pred_density = 0.0;  // cell means, zero when empty
  double true_density = 0.0;
};

inline std::vector<BedCell> bed_density(const VariantResult& v, const BedGrid& g) {
  if (g.nx == 0 || g.ny == 0 || !(g.bed_w > 0) || !(g.bed_h > 0)) throw Error("bed grid: empty grid");
  std::vector<BedCell> cells(g.nx * g.ny);
  for (std::size_t iy = 0; iy < g.ny; ++iy)
    for (std::size_t ix = 0; ix < g.nx; ++ix) {
      BedCell& c = cells[iy * g.nx + ix];
      c.ix = ix;
      c.iy = iy;
      c.x0 = g.bed_w * static_cast<double>(ix) / static_cast<double>(g.nx);
      c.x1 = g.bed_w * static_cast<double>(ix + 1) / static_cast<double>(g.nx);
      c.y0 = g.bed_h * static_cast<double>(iy) / static_cast<double>(g.ny);
      c.y1 = g.bed_h * static_cast<double>(iy + 1) / static_cast<double>(g.ny);
    }
  for (const auto& r : v.rows) {
    auto bin = [](double p, double extent, std::size_t n) {
      const double f = std::floor(p / extent * static_cast<double>(n));
      return static_cast<std::size_t>(std::clamp(f, 0.0, static_cast<double>(n - 1)));
    };
    BedCell& c = cells[bin(r.bed_y, g.bed_h, g.ny) * g.nx + bin(r.bed_x, g.bed_w, g.nx)];
    ++c.n;
    c.pred_density += r.pred.density;
    c.true_density += r.truth.density;
  }
  for (auto& c : cells) {
    if (c.n) {
      c.pred_density /= static_cast<double>(c.n);
      c.true_density /= static_cast<double>(c.n);
    }
  }
  return cells;
}

// ---------------------------------------------------------------------------
// CSV tables

inline std::string summary_csv(const EvalReport& rep) {
  std::string out = kErrorNote;
  out += "variant,label,n";
  for (const char* s : {"mean", "std"})
    for (std::size_t k = 0; k < 3; ++k) out += std::string(",") + kDims[k] + "_pct_" + s;
  out += ",density_pct_mean,density_pct_std,mean_adp\n";
  for (const auto& v : rep.variants) {
    const SummaryRow s = summarize(v);
    out += v.name + "," + io::detail::csv_field(v.label) + "," + std::to_string(s.n);
    for (std::size_t k = 0; k < 3; ++k) out += "," + fmt(s.pct[k].mean);
    for (std::size_t k = 0; k < 3; ++k) out += "," + fmt(s.pct[k].std);
    out += "," + fmt(s.pct[3].mean) + "," + fmt(s.pct[3].std) + ",";
    if (s.mean_adp) out += fmt(*s.mean_adp);
    out += "\n";
  }
  return out;
}

inline std::string per_part_csv(const EvalReport& rep) {
  std::string out = kErrorNote;
  out += "variant,part,build,printer,split,bed_x,bed_y";
  for (const char* p : {"true", "pred"})
    for (const char* d : kDims) out += std::string(",") + p + "_" + d;
  for (const char* d : kDims) out += std::string(",") + d + "_pct";
  for (const char* d : kDims) out += std::string(",") + d + "_dev_pct";
  out += ",adp\n";
  for (const auto& v : rep.variants) {
    for (const auto& r : v.rows) {
      out += v.name + "," + r.key.str() + "," + std::to_string(r.key.build) + "," +
             std::to_string(r.printer_id) + "," + r.split + "," + fmt(r.bed_x) + "," + fmt(r.bed_y);
      for (double x : r.truth.as_array()) out += "," + fmt(x);
      for (double x : r.pred.as_array()) out += "," + fmt(x);
      for (double x : pct_errors(r)) out += "," + fmt(x);
      for (double x : pct_deviation(r)) out += "," + fmt(x);
      out += ",";
      if (r.adp) out += fmt(*r.adp);
      out += "\n";
    }
  }
  return out;
}

inline std::string bed_density_csv(const EvalReport& rep) {
  std::string out = "# mean density (g/cm^3) of the parts whose centre falls in each bed cell\n";
  out += "variant,cell_x,cell_y,x0,x1,y0,y1,n,pred_density,true_density\n";
  for (const auto& v : rep.variants) {
    for (const auto& c : bed_density(v, rep.grid)) {
      out += v.name + "," + std::to_string(c.ix) + "," + std::to_string(c.iy) + "," + fmt(c.x0) + "," +
             fmt(c.x1) + "," + fmt(c.y0) + "," + fmt(c.y1) + "," + std::to_string(c.n) + ",";
      if (c.n) out += fmt(c.pred_density) + "," + fmt(c.true_density);
      else out += ",";
      out += "\n";
    }
  }
  return out;
}

inline std::string correlation_csv(const EvalReport& rep) {
  std::string out = "feature,target,r,n\n";
  for (const auto& c : rep.correlations)
    out += c.feature + "," + c.target + "," + fmt(c.r) + "," + std::to_string(c.n) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// SVG renderings

namespace detail {

inline const char* color(std::size_t i) {
  static const std::array<const char*, 6> palette{"#1b6ca8", "#d1495b", "#2e933c",
                                                   "#edae49", "#6a4c93", "#5c5c5c"};
  return palette[i % palette.size()];
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

class Svg {
 public:
  Svg(double w, double h, const std::string& title, const std::string& table) : w_(w), h_(h) {
    body_ += "<title>" + xml_escape(title) + "</title>\n";
    body_ += "<desc>\n" + xml_escape(table) + "</desc>\n";
    body_ += "<rect x=\"0\" y=\"0\" width=\"" + px(w) + "\" height=\"" + px(h) + "\" fill=\"white\"/>\n";
    text(w / 2, 20, title, 14, "middle");
  }
  void line(double x0, double y0, double x1, double y1, const std::string& stroke, double width = 1) {
    body_ += "<line x1=\"" + px(x0) + "\" y1=\"" + px(y0) + "\" x2=\"" + px(x1) + "\" y2=\"" + px(y1) +
             "\" stroke=\"" + stroke + "\" stroke-width=\"" + px(width) + "\"/>\n";
  }
  void rect(double x, double y, double w, double h, const std::string& fill) {
    body_ += "<rect x=\"" + px(x) + "\" y=\"" + px(y) + "\" width=\"" + px(std::max(w, 0.0)) +
             "\" height=\"" + px(std::max(h, 0.0)) + "\" fill=\"" + fill + "\"/>\n";
  }
  void circle(double x, double y, double r, const std::string& fill) {
    body_ += "<circle cx=\"" + px(x) + "\" cy=\"" + px(y) + "\" r=\"" + px(r) + "\" fill=\"" + fill +
             "\" fill-opacity=\"0.7\"/>\n";
  }
  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke) {
    body_ += "<polyline fill=\"none\" stroke=\"" + stroke + "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i)
      body_ += (i ? " " : "") + px(pts[i].first) + "," + px(pts[i].second);
    body_ += "\"/>\n";
  }
  void text(double x, double y, const std::string& s, double size = 11, const char* anchor = "start") {
    body_ += "<text x=\"" + px(x) + "\" y=\"" + px(y) + "\" font-family=\"sans-serif\" font-size=\"" +
             px(size) + "\" text-anchor=\"" + anchor + "\">" + xml_escape(s) + "</text>\n";
  }
  std::string str() const {
    return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
           px(w_) + "\" height=\"" + px(h_) + "\" viewBox=\"0 0 " + px(w_) + " " + px(h_) + "\">\n" +
           body_ + "</svg>\n";
  }

 private:
  double w_, h_;
  std::string body_;
};

/// Linear map of [lo, hi] onto [a, b]; a degenerate range maps to the middle.
struct Scale {
  double lo, hi, a, b;
  double operator()(double v) const {
    if (!(hi > lo)) return (a + b) / 2;
    return a + (v - lo) / (hi - lo) * (b - a);
  }
};

inline std::pair<double, double> range_of(const std::vector<double>& v, bool include_zero = false) {
  double lo = include_zero ? 0.0 : INFINITY, hi = include_zero ? 0.0 : -INFINITY;
  for (double x : v) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  if (v.empty() && !include_zero) return {0.0, 1.0};
  return {lo, hi};
}

/// Frame with y-axis labels at the range ends.
inline void axes(Svg& s, double x0, double y0, double x1, double y1, const Scale& ys,
                 const std::string& ylabel) {
  s.line(x0, y1, x1, y1, "#333");
  s.line(x0, y0, x0, y1, "#333");
  s.text(x0 - 4, ys(ys.hi) + 4, fmt(ys.hi), 9, "end");
  s.text(x0 - 4, ys(ys.lo) + 4, fmt(ys.lo), 9, "end");
  s.text(x0, y0 - 6, ylabel, 10);
}

}  // namespace detail

inline std::string summary_svg(const EvalReport& rep) {
  std::vector<SummaryRow> rows;
  std::vector<double> tops;
  for (const auto& v : rep.variants) {
    rows.push_back(summarize(v));
    for (std::size_t k = 0; k < 3; ++k) tops.push_back(rows.back().pct[k].mean + rows.back().pct[k].std);
  }
  const double W = 640, H = 360, x0 = 60, x1 = 620, y0 = 50, y1 = 300;
  detail::Svg s(W, H, "Dimensional % error by model version (bars: mean, whiskers: population std)",
                summary_csv(rep));
  const auto [lo, hi] = detail::range_of(tops, true);
  const detail::Scale ys{lo, hi, y1, y0};
  detail::axes(s, x0, y0, x1, y1, ys, "% error");
  const double group = (x1 - x0) / 3.0;
  const double bar = group * 0.8 / static_cast<double>(rows.size());
  for (std::size_t k = 0; k < 3; ++k) {
    s.text(x0 + group * (static_cast<double>(k) + 0.5), y1 + 16, kDims[k], 11, "middle");
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double bx = x0 + group * static_cast<double>(k) + group * 0.1 + bar * static_cast<double>(i);
      const auto& st = rows[i].pct[k];
      s.rect(bx, ys(st.mean), bar * 0.9, y1 - ys(st.mean), detail::color(i));
      s.line(bx + bar * 0.45, ys(st.mean), bx + bar * 0.45, ys(st.mean + st.std), "#000");
    }
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    s.rect(x0 + 150.0 * static_cast<double>(i), H - 30, 10, 10, detail::color(i));
    s.text(x0 + 150.0 * static_cast<double>(i) + 14, H - 21, rows[i].label, 9);
  }
  return s.str();
}

inline std::string per_part_svg(const EvalReport& rep) {
  const double W = 720, H = 420, top = 50, panel_h = 100;
  detail::Svg s(W, H, "Predicted dimension deviation per part (% deviation)", per_part_csv(rep));
  std::size_t max_rows = 1;
  for (const auto& v : rep.variants) max_rows = std::max(max_rows, v.rows.size());
  const detail::Scale xs{0.0, static_cast<double>(max_rows), 70.0, W - 20};
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<double> all;
    for (const auto& v : rep.variants)
      for (const auto& r : v.rows) all.push_back(pct_deviation(r)[k]);
    auto [lo, hi] = detail::range_of(all, true);
    const double y0 = top + static_cast<double>(k) * (panel_h + 15), y1 = y0 + panel_h;
    const detail::Scale ys{lo, hi, y1, y0};
    detail::axes(s, 70, y0, W - 20, y1, ys, std::string(kDims[k]) + " deviation %");
    s.line(70, ys(0.0), W - 20, ys(0.0), "#aaa");
    for (std::size_t i = 0; i < rep.variants.size(); ++i) {
      const auto& rows = rep.variants[i].rows;
      for (std::size_t j = 0; j < rows.size(); ++j)
        s.circle(xs(static_cast<double>(j) + 0.5), ys(pct_deviation(rows[j])[k]), 2, detail::color(i));
    }
  }
  for (std::size_t i = 0; i < rep.variants.size(); ++i) {
    s.rect(70 + 160.0 * static_cast<double>(i), H - 22, 10, 10, detail::color(i));
    s.text(84 + 160.0 * static_cast<double>(i), H - 13, rep.variants[i].label, 9);
  }
  return s.str();
}

inline std::string bed_density_svg(const EvalReport& rep) {
  const auto& g = rep.grid;
  const double cell = 40, pad = 30;
  const double panel_w = cell * static_cast<double>(g.nx), panel_h = cell * static_cast<double>(g.ny);
  const double W = pad + static_cast<double>(rep.variants.size()) * (panel_w + pad);
  const double H = 70 + panel_h + 40;
  detail::Svg s(std::max(W, 320.0), H, "Predicted density by bed location (g/cm^3)", bed_density_csv(rep));
  std::vector<double> vals;
  std::vector<std::vector<BedCell>> all;
  for (const auto& v : rep.variants) {
    all.push_back(bed_density(v, g));
    for (const auto& c : all.back())
      if (c.n) vals.push_back(c.pred_density);
  }
  const auto [lo, hi] = detail::range_of(vals);
  const detail::Scale shade{lo, hi, 0.0, 1.0};
  for (std::size_t i = 0; i < rep.variants.size(); ++i) {
    const double ox = pad + static_cast<double>(i) * (panel_w + pad), oy = 50;
    s.text(ox, oy - 6, rep.variants[i].label, 9);
    for (const auto& c : all[i]) {
      std::string fill = "#eeeeee";
      if (c.n) {
        const int t = static_cast<int>(std::lround(255 * shade(c.pred_density)));
        char buf[16];
        std::snprintf(buf, sizeof buf, "#%02x%02x%02x", t, 64, 255 - t);
        fill = buf;
      }
      s.rect(ox + cell * static_cast<double>(c.ix), oy + cell * static_cast<double>(c.iy), cell - 1,
             cell - 1, fill);
    }
  }
  s.text(pad, H - 12, "colour scale " + fmt(lo) + " (blue) to " + fmt(hi) + " (red); grey = no parts", 9);
  return s.str();
}

inline std::string correlation_svg(const EvalReport& rep) {
  const double panel = 220, pad = 50;
  const double W = pad + static_cast<double>(std::max<std::size_t>(rep.correlations.size(), 1)) * (panel + pad);
  detail::Svg s(W, panel + 110, "Correlation of part-level features with quality targets", correlation_csv(rep));
  for (std::size_t i = 0; i < rep.correlations.size(); ++i) {
    const auto& c = rep.correlations[i];
    const double ox = pad + static_cast<double>(i) * (panel + pad), oy = 50;
    const auto [xl, xh] = detail::range_of(c.x);
    const auto [yl, yh] = detail::range_of(c.y);
    const detail::Scale xs{xl, xh, ox, ox + panel}, ys{yl, yh, oy + panel, oy};
    detail::axes(s, ox, oy, ox + panel, oy + panel, ys, c.target);
    for (std::size_t j = 0; j < c.x.size() && j < c.y.size(); ++j) s.circle(xs(c.x[j]), ys(c.y[j]), 1.5, detail::color(i));
    s.text(ox + panel / 2, oy + panel + 18, c.feature + " (r = " + fmt(c.r) + ", n = " + std::to_string(c.n) + ")",
           10, "middle");
  }
  return s.str();
}

/// Writes summary, per-part, bed-density (and correlation, when present)
/// tables with their renderings into dir.
inline void emit_report(const EvalReport& rep, const fs::path& dir) {
  if (rep.variants.empty()) throw Error("emit_report: no variants to report");
  io::write_file_atomic(dir / "summary.csv", summary_csv(rep));
  io::write_file_atomic(dir / "summary.svg", summary_svg(rep));
  io::write_file_atomic(dir / "per_part.csv", per_part_csv(rep));
  io::write_file_atomic(dir / "per_part.svg", per_part_svg(rep));
  io::write_file_atomic(dir / "bed_density.csv", bed_density_csv(rep));
  io::write_file_atomic(dir / "bed_density.svg", bed_density_svg(rep));
  if (!rep.correlations.empty()) {
    io::write_file_atomic(dir / "correlation.csv", correlation_csv(rep));
    io::write_file_atomic(dir / "correlation.svg", correlation_svg(rep));
  }
}

// ---------------------------------------------------------------------------
// Training curves (validation ADP per epoch and similar)

struct Curve {
  std::string label;
  std::vector<double> values;
};

inline std::string curves_csv(const std::vector<Curve>& curves, const std::string& quantity) {
  std::string out = "series,epoch," + quantity + "\n";
  for (const auto& c : curves)
    for (std::size_t e = 0; e < c.values.size(); ++e)
      out += c.label + "," + std::to_string(e + 1) + "," + fmt(c.values[e]) + "\n";
  return out;
}

inline std::string curves_svg(const std::vector<Curve>& curves, const std::string& title,
                              const std::string& quantity) {
  const double W = 640, H = 360, x0 = 60, x1 = 620, y0 = 50, y1 = 300;
  detail::Svg s(W, H, title, curves_csv(curves, quantity));
  std::vector<double> all;
  std::size_t n = 1;
  for (const auto& c : curves) {
    all.insert(all.end(), c.values.begin(), c.values.end());
    n = std::max(n, c.values.size());
  }
  const auto [lo, hi] = detail::range_of(all, true);
  const detail::Scale ys{lo, hi, y1, y0}, xs{1.0, static_cast<double>(n), x0, x1};
  detail::axes(s, x0, y0, x1, y1, ys, quantity);
  s.text((x0 + x1) / 2, y1 + 18, "epoch", 10, "middle");
  for (std::size_t i = 0; i < curves.size(); ++i) {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t e = 0; e < curves[i].values.size(); ++e)
      pts.emplace_back(xs(static_cast<double>(e + 1)), ys(curves[i].values[e]));
    s.polyline(pts, detail::color(i));
    s.rect(x0 + 140.0 * static_cast<double>(i), H - 30, 10, 10, detail::color(i));
    s.text(x0 + 140.0 * static_cast<double>(i) + 14, H - 21, curves[i].label, 9);
  }
  return s.str();
}

inline void emit_curves(const fs::path& dir, const std::string& stem, const std::vector<Curve>& curves,
                        const std::string& title, const std::string& quantity) {
  if (curves.empty()) throw Error("emit_curves: no curves");
  io::write_file_atomic(dir / (stem + ".csv"), curves_csv(curves, quantity));
  io::write_file_atomic(dir / (stem + ".svg"), curves_svg(curves, title, quantity));
}

// ---------------------------------------------------------------------------
// Value distributions per group (five-number summaries and box plots)

struct Group {
  std::string label;
  std::vector<double> values;
};

inline std::array<double, 5> five_numbers(std::vector<double> v) {
  if (v.empty()) throw Error("distribution: empty group");
  std::sort(v.begin(), v.end());
  auto q = [&](double p) {
    const double pos = p * static_cast<double>(v.size() - 1);
    const std::size_t i = static_cast<std::size_t>(pos);
    const double f = pos - static_cast<double>(i);
    return i + 1 < v.size() ? v[i] * (1 - f) + v[i + 1] * f : v[i];
  };
  return {v.front(), q(0.25), q(0.5), q(0.75), v.back()};
}

inline std::string distribution_csv(const std::vector<Group>& groups) {
  std::string out = "group,n,min,q1,median,q3,max\n";
  for (const auto& g : groups) {
    out += io::detail::csv_field(g.label) + "," + std::to_string(g.values.size());
    for (double x : five_numbers(g.values)) out += "," + fmt(x);
    out += "\n";
  }
  return out;
}

inline std::string distribution_svg(const std::vector<Group>& groups, const std::string& title,
                                    const std::string& quantity) {
  const double slot = 36, x0 = 60, y0 = 50, y1 = 300;
  const double W = std::max(320.0, x0 + slot * static_cast<double>(groups.size()) + 20);
  detail::Svg s(W, 380, title, distribution_csv(groups));
  std::vector<double> all;
  for (const auto& g : groups) all.insert(all.end(), g.values.begin(), g.values.end());
  const auto [lo, hi] = detail::range_of(all);
  const detail::Scale ys{lo, hi, y1, y0};
  detail::axes(s, x0, y0, W - 20, y1, ys, quantity);
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto f = five_numbers(groups[i].values);
    const double cx = x0 + slot * (static_cast<double>(i) + 0.5);
    s.line(cx, ys(f[0]), cx, ys(f[4]), "#333");
    s.rect(cx - slot * 0.3, ys(f[3]), slot * 0.6, ys(f[1]) - ys(f[3]), detail::color(i));
    s.line(cx - slot * 0.3, ys(f[2]), cx + slot * 0.3, ys(f[2]), "#000", 2);
    s.text(cx, y1 + 14, groups[i].label, 8, "middle");
  }
  return s.str();
}

inline void emit_distribution(const fs::path& dir, const std::string& stem, const std::vector<Group>& groups,
                              const std::string& title, const std::string& quantity) {
  if (groups.empty()) throw Error("emit_distribution: no groups");
  io::write_file_atomic(dir / (stem + ".csv"), distribution_csv(groups));
  io::write_file_atomic(dir / (stem + ".svg"), distribution_svg(groups, title, quantity));
}

}  // namespace thermonet::report
