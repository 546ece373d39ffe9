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
#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "support/fixtures.hpp"
#include "thermonet/evalreport.hpp"

namespace thermonet {
namespace {

using metrics::adp;
using metrics::error_stats;
using metrics::pct_error;
using metrics::pearson;

std::vector<double> random_values(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

TEST(Adp, Examples) {
  const std::vector<double> a{100, 102}, b{101, 106};
  EXPECT_DOUBLE_EQ(adp(a, b), 2.5);
  EXPECT_EQ(adp(a, a), 0.0);
  std::vector<double> shifted = a;
  for (double& v : shifted) v += 2.0;
  EXPECT_DOUBLE_EQ(adp(a, shifted), 2.0);
  EXPECT_THROW(adp(a, std::vector<double>{1.0}), Error);
  EXPECT_THROW(adp(std::vector<double>{}, std::vector<double>{}), Error);
}

TEST(Adp, MetricProperties) {
  Rng rng(41);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + rng.index(50);
    const auto a = random_values(rng, n, 80, 220), b = random_values(rng, n, 80, 220);
    const double c = rng.uniform(-50, 50);
    EXPECT_GE(adp(a, b), 0.0);
    EXPECT_EQ(adp(a, b), adp(b, a));
    std::vector<double> ac = a, bc = b;
    for (double& v : ac) v += c;
    for (double& v : bc) v += c;
    EXPECT_NEAR(adp(ac, bc), adp(a, b), 1e-9);
    EXPECT_GT(adp(a, b), 0.0);
  }
}

TEST(PctError, Examples) {
  EXPECT_NEAR(pct_error(10.05, 10.0), 0.5, 1e-12);
  EXPECT_EQ(pct_error(7.0, 7.0), 0.0);
  EXPECT_THROW(pct_error(1.0, 0.0), Error);
  EXPECT_THROW(pct_error(1.0, -2.0), Error);
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const double p = rng.uniform(1, 40), q = rng.uniform(1, 40), c = rng.uniform(0.01, 100);
    EXPECT_NEAR(pct_error(c * p, c * q), pct_error(p, q), 1e-9 * (1 + pct_error(p, q)));
  }
}

TEST(ErrorStats, ExamplesAndOrderInvariance) {
  const auto a = error_stats(std::vector<double>{1, 1, 1});
  EXPECT_EQ(a.mean, 1.0);
  EXPECT_EQ(a.std, 0.0);
  const auto b = error_stats(std::vector<double>{0, 2});
  EXPECT_EQ(b.mean, 1.0);
  EXPECT_EQ(b.std, 1.0);
  EXPECT_THROW(error_stats(std::vector<double>{1}), Error);
  Rng rng(8);
  for (int t = 0; t < 50; ++t) {
    auto v = random_values(rng, 2 + rng.index(40), 0, 5);
    const auto s = error_stats(v);
    std::shuffle(v.begin(), v.end(), rng.engine());
    const auto s2 = error_stats(v);
    EXPECT_EQ(s.mean, s2.mean);
    EXPECT_EQ(s.std, s2.std);
  }
}

TEST(Pearson, ExamplesAndAffineInvariance) {
  const std::vector<double> x{1, 2, 3, 4, 5};
  std::vector<double> y, z;
  for (double v : x) {
    y.push_back(2 * v + 1);
    z.push_back(-v);
  }
  EXPECT_NEAR(pearson(x, y), 1.0, 1e-15);
  EXPECT_NEAR(pearson(x, z), -1.0, 1e-15);
  EXPECT_NEAR(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{1, 3, 2}), 0.5, 1e-15);
  EXPECT_THROW(pearson(std::vector<double>{1, 2}, std::vector<double>{1, 2}), Error);
  EXPECT_THROW(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2}), Error);
  try {
    pearson(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("zero variance"), std::string::npos);
  }
  Rng rng(12);
  for (int t = 0; t < 100; ++t) {
    const auto a = random_values(rng, 3 + rng.index(30), -5, 5), b = random_values(rng, a.size(), -5, 5);
    const double r = pearson(a, b);
    const double s = rng.uniform(0.1, 10), off = rng.uniform(-100, 100);
    std::vector<double> as, an;
    for (double v : a) {
      as.push_back(s * v + off);
      an.push_back(-s * v + off);
    }
    EXPECT_NEAR(pearson(as, b), r, 1e-9);
    EXPECT_NEAR(pearson(an, b), -r, 1e-9);
    EXPECT_LE(std::abs(r), 1.0);
  }
}

report::EvalReport sample_report(std::uint64_t seed, std::size_t n = 24) {
  Rng rng(seed);
  report::EvalReport rep;
  const char* names[] = {"NoThermal", "SequentialThermal", "LatentThermal"};
  const char* labels[] = {"Without thermal input", "With thermal sequential input",
                          "With thermal latent vector"};
  for (int v = 0; v < 3; ++v) {
    report::VariantResult vr{names[v], labels[v], {}};
    for (std::size_t i = 0; i < n; ++i) {
      report::PartRow r;
      r.key = {static_cast<int>(i % 3), static_cast<int>(i)};
      r.printer_id = static_cast<int>(i % 5);
      r.bed_x = rng.uniform(0, 160);
      r.bed_y = rng.uniform(0, 120);
      r.truth = {rng.uniform(34, 35), rng.uniform(17.5, 18), rng.uniform(6.8, 7.1), rng.uniform(4, 4.6)};
      const double spread = 0.01 * (3 - v);
      r.pred = {r.truth.length * (1 + rng.uniform(-spread, spread)),
                r.truth.width * (1 + rng.uniform(-spread, spread)),
                r.truth.height * (1 + rng.uniform(-spread, spread)),
                r.truth.density * (1 + rng.uniform(-spread, spread))};
      if (v == 2) r.adp = rng.uniform(0.5, 1.5);
      vr.rows.push_back(r);
    }
    rep.variants.push_back(vr);
  }
  std::vector<double> x, y;
  for (int i = 0; i < 20; ++i) {
    x.push_back(i);
    y.push_back(2.0 * i + rng.uniform(-1, 1));
  }
  rep.correlations.push_back(report::correlate("min_temp", x, "density", y));
  return rep;
}

TEST(Summary, RecomputesFromRows) {
  const auto rep = sample_report(5);
  for (const auto& v : rep.variants) {
    const auto s = report::summarize(v);
    for (std::size_t k = 0; k < 4; ++k) {
      double sum = 0.0;
      for (const auto& r : v.rows) {
        const double p = r.pred.as_array()[k], t = r.truth.as_array()[k];
        sum += 100.0 * std::abs(p - t) / t;
      }
      const double mean = sum / static_cast<double>(v.rows.size());
      double var = 0.0;
      for (const auto& r : v.rows) {
        const double p = r.pred.as_array()[k], t = r.truth.as_array()[k];
        var += std::pow(100.0 * std::abs(p - t) / t - mean, 2);
      }
      EXPECT_NEAR(s.pct[k].mean, mean, 1e-9);
      EXPECT_NEAR(s.pct[k].std, std::sqrt(var / static_cast<double>(v.rows.size())), 1e-9);
    }
  }
  report::VariantResult one{"x", "x", {rep.variants[0].rows[0]}};
  EXPECT_THROW(report::summarize(one), Error);
}

std::vector<std::vector<std::string>> data_rows(const std::string& csv) {
  std::vector<std::vector<std::string>> out;
  for (auto& r : io::detail::csv_rows(csv))
    if (!r.empty() && !r[0].empty() && r[0][0] != '#') out.push_back(r);
  return out;
}

TEST(Emit, SummaryRecomputableFromEmittedRows) {
  const auto rep = sample_report(6);
  const auto dir = testing::scratch_dir("emit") / "report";
  report::emit_report(rep, dir);
  const auto summary = data_rows(io::read_file(dir / "summary.csv"));
  const auto parts = data_rows(io::read_file(dir / "per_part.csv"));
  ASSERT_EQ(summary.size(), 4u);
  EXPECT_EQ(summary[1][1], "Without thermal input");
  EXPECT_EQ(summary[3][1], "With thermal latent vector");
  const auto& head = parts[0];
  auto col = [&](const std::string& name) {
    return static_cast<std::size_t>(std::find(head.begin(), head.end(), name) - head.begin());
  };
  const auto& shead = summary[0];
  auto scol = [&](const std::string& name) {
    return static_cast<std::size_t>(std::find(shead.begin(), shead.end(), name) - shead.begin());
  };
  for (std::size_t s = 1; s < summary.size(); ++s) {
    for (const char* d : report::kDims) {
      std::vector<double> e;
      for (std::size_t p = 1; p < parts.size(); ++p)
        if (parts[p][0] == summary[s][0]) e.push_back(std::stod(parts[p][col(std::string(d) + "_pct")]));
      ASSERT_EQ(e.size(), 24u);
      const auto st = metrics::error_stats(e);
      const double mean = std::stod(summary[s][scol(std::string(d) + "_pct_mean")]);
      const double sd = std::stod(summary[s][scol(std::string(d) + "_pct_std")]);
      // Both sides carry 6 significant digits.
      EXPECT_NEAR(st.mean, mean, 1e-5 * std::abs(mean) + 1e-9);
      EXPECT_NEAR(st.std, sd, 1e-5 * std::abs(sd) + 1e-4 * std::abs(mean));
    }
  }
  EXPECT_FALSE(summary[1][scol("mean_adp")].size());
  EXPECT_TRUE(summary[3][scol("mean_adp")].size());
  EXPECT_NE(io::read_file(dir / "summary.csv").find("population standard deviation"), std::string::npos);
  EXPECT_NE(io::read_file(dir / "summary.csv").find("mean absolute"), std::string::npos);
}

TEST(Emit, ByteIdenticalAcrossEmissions) {
  const auto rep = sample_report(7);
  const auto base = testing::scratch_dir("stable");
  report::emit_report(rep, base / "a");
  report::emit_report(sample_report(7), base / "b");
  std::size_t files = 0;
  for (const auto& e : std::filesystem::directory_iterator(base / "a")) {
    EXPECT_EQ(io::read_file(e.path()), io::read_file(base / "b" / e.path().filename()))
        << e.path().filename();
    ++files;
  }
  EXPECT_EQ(files, 8u);
  const std::string svg = io::read_file(base / "a" / "summary.svg");
  EXPECT_EQ(svg.rfind("<?xml", 0), 0u);
  EXPECT_NE(svg.find("<desc>"), std::string::npos);
  EXPECT_NE(svg.find("With thermal latent vector"), std::string::npos);
}

TEST(Emit, RejectsEmptyAndUnwritable) {
  EXPECT_THROW(report::emit_report(report::EvalReport{}, testing::scratch_dir("empty")), Error);
  const auto dir = testing::scratch_dir("unwritable");
  io::write_file_atomic(dir / "file", "x");
  EXPECT_THROW(report::emit_report(sample_report(1), dir / "file" / "sub"), Error);
}

TEST(BedDensity, CellsPartitionTheParts) {
  const auto rep = sample_report(9, 40);
  for (const auto& v : rep.variants) {
    const auto cells = report::bed_density(v, rep.grid);
    ASSERT_EQ(cells.size(), 12u);
    std::size_t n = 0;
    double pred = 0.0;
    for (const auto& c : cells) {
      n += c.n;
      pred += c.pred_density * static_cast<double>(c.n);
    }
    EXPECT_EQ(n, v.rows.size());
    double direct = 0.0;
    for (const auto& r : v.rows) direct += r.pred.density;
    EXPECT_NEAR(pred, direct, 1e-9);
  }
  report::VariantResult edge{"e", "e", {}};
  report::PartRow r;
  r.bed_x = 160.0;
  r.bed_y = 120.0;
  edge.rows.push_back(r);
  EXPECT_EQ(report::bed_density(edge, {}).back().n, 1u);
}

TEST(Distribution, FiveNumbers) {
  const auto f = report::five_numbers({5, 1, 3, 2, 4});
  EXPECT_EQ(f, (std::array<double, 5>{1, 2, 3, 4, 5}));
  EXPECT_THROW(report::five_numbers({}), Error);
  const auto dir = testing::scratch_dir("dist");
  report::emit_distribution(dir, "min_temp", {{"train", {1, 2, 3}}, {"test", {2, 4}}}, "t", "degC");
  EXPECT_EQ(io::read_file(dir / "min_temp.csv"), "group,n,min,q1,median,q3,max\ntrain,3,1,1.5,2,2.5,3\ntest,2,2,2.5,3,3.5,4\n");
  report::emit_curves(dir, "adp", {{"AE", {3, 2, 1.5}}, {"VAE3D", {4, 2, 1}}}, "ADP", "adp_c");
  EXPECT_EQ(data_rows(io::read_file(dir / "adp.csv")).size(), 7u);
}

TEST(Format, SixSignificantDigits) {
  EXPECT_EQ(report::fmt(3.14159265), "3.14159");
  EXPECT_EQ(report::fmt(-0.0), "0");
  EXPECT_EQ(report::fmt(1234567.0), "1.23457e+06");
}

}  // namespace
}  // namespace thermonet
