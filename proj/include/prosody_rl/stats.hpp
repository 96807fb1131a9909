#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>
#include "prosody_rl/error.hpp"
#include "prosody_rl/special.hpp"

namespace prosody_rl::stats {

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
  std::optional<double> dof;
  std::optional<double> corrected_p;
};

inline nlohmann::json to_json(const TestResult& r) {
  nlohmann::json j{{"statistic", r.statistic}, {"p_value", r.p_value}, {"n", r.n}};
  j["dof"] = r.dof ? nlohmann::json(*r.dof) : nlohmann::json(nullptr);
  j["corrected_p"] = r.corrected_p ? nlohmann::json(*r.corrected_p) : nlohmann::json(nullptr);
  return j;
}

enum class Alternative { TwoSided, Greater, Less };

inline double mean(std::span<const double> x) {
  if (x.empty()) fail(Errc::InsufficientData, "mean of an empty sample");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

/// Unbiased (n - 1) sample variance.
inline double variance(std::span<const double> x) {
  if (x.size() < 2) fail(Errc::InsufficientData, "variance needs at least two values");
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return ss / static_cast<double>(x.size() - 1);
}

/// Fractional (1-based) ranks; tied values share their average rank.
inline std::vector<double> ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> out(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) out[order[k]] = avg;
    i = j + 1;
  }
  return out;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(Errc::InvalidParams, "pearson: length mismatch");
  if (x.size() < 2) fail(Errc::InsufficientData, "pearson needs at least two pairs");
  const double mx = mean(x);
  const double my = mean(y);
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) fail(Errc::DegenerateRanking, "correlation undefined for a constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// p-value of a correlation coefficient via t = r sqrt(df / (1 - r^2)).
inline double correlation_p(double r, double df) {
  if (df <= 0.0) return 1.0;
  if (std::abs(r) >= 1.0) return 0.0;
  const double t = r * std::sqrt(df / (1.0 - r * r));
  return special::student_t_two_sided(t, df);
}

struct SpearmanOptions {
  // Exact permutation p-value; only allowed for n <= kMaxExactN.
  bool exact = false;
  static constexpr std::size_t kMaxExactN = 9;
};

inline TestResult spearman(std::span<const double> x, std::span<const double> y, SpearmanOptions opts = {}) {
  if (x.size() != y.size()) fail(Errc::InvalidParams, "spearman: length mismatch");
  if (x.size() < 3) fail(Errc::InsufficientData, "spearman needs at least 3 pairs");
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  TestResult out;
  out.n = x.size();
  out.statistic = pearson(rx, ry);
  out.dof = static_cast<double>(out.n - 2);
  if (!opts.exact) {
    out.p_value = correlation_p(out.statistic, *out.dof);
    return out;
  }
  if (out.n > SpearmanOptions::kMaxExactN) fail(Errc::InvalidParams, "exact spearman limited to n <= 9");
  std::vector<double> perm = ry;
  std::sort(perm.begin(), perm.end());
  std::size_t total = 0;
  std::size_t extreme = 0;
  const double observed = std::abs(out.statistic);
  do {
    ++total;
    if (std::abs(pearson(rx, perm)) >= observed - 1e-12) ++extreme;
  } while (std::next_permutation(perm.begin(), perm.end()));
  out.p_value = static_cast<double>(extreme) / static_cast<double>(total);
  return out;
}

/// Rank correlation computed within strata and pooled. Ranks are taken
/// inside each stratum, centered and scaled by the stratum size, so each
/// stratum contributes in proportion to its count.
inline TestResult stratified_spearman(std::span<const double> x, std::span<const double> y, std::span<const int> strata) {
  if (x.size() != y.size() || x.size() != strata.size()) fail(Errc::InvalidParams, "stratified_spearman: length mismatch");
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < strata.size(); ++i) groups[strata[i]].push_back(i);
  std::vector<double> ux;
  std::vector<double> uy;
  std::size_t used_groups = 0;
  for (const auto& [label, idx] : groups) {
    if (idx.size() < 2) continue;
    std::vector<double> gx;
    std::vector<double> gy;
    for (std::size_t i : idx) {
      gx.push_back(x[i]);
      gy.push_back(y[i]);
    }
    const auto rx = ranks(gx);
    const auto ry = ranks(gy);
    const double n = static_cast<double>(idx.size());
    const double center = 0.5 * (n + 1.0);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      ux.push_back((rx[k] - center) / n);
      uy.push_back((ry[k] - center) / n);
    }
    ++used_groups;
  }
  if (ux.size() < 3) fail(Errc::InsufficientData, "stratified_spearman needs at least 3 usable pairs");
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < ux.size(); ++i) {
    sxy += ux[i] * uy[i];
    sxx += ux[i] * ux[i];
    syy += uy[i] * uy[i];
  }
  if (sxx == 0.0 || syy == 0.0) fail(Errc::DegenerateRanking, "constant input within every stratum");
  TestResult out;
  out.n = ux.size();
  out.statistic = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  out.dof = static_cast<double>(out.n) - 1.0 - static_cast<double>(used_groups);
  out.p_value = correlation_p(out.statistic, *out.dof);
  return out;
}

inline TestResult point_biserial(std::span<const int> flags, std::span<const double> y) {
  if (flags.size() != y.size()) fail(Errc::InvalidParams, "point_biserial: length mismatch");
  std::vector<double> f(flags.size());
  std::size_t ones = 0;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (flags[i] != 0 && flags[i] != 1) fail(Errc::InvalidParams, "point_biserial flags must be 0 or 1");
    f[i] = flags[i];
    ones += static_cast<std::size_t>(flags[i]);
  }
  if (ones == 0 || ones == flags.size()) fail(Errc::DegenerateGroups, "point_biserial needs both flag groups");
  TestResult out;
  out.n = flags.size();
  out.statistic = pearson(f, y);
  out.dof = static_cast<double>(out.n - 2);
  out.p_value = correlation_p(out.statistic, *out.dof);
  return out;
}

inline TestResult chi_square_gof(std::span<const double> observed, std::span<const double> expected) {
  if (observed.size() != expected.size()) fail(Errc::InvalidParams, "chi_square_gof: length mismatch");
  if (observed.size() < 2) fail(Errc::InvalidParams, "chi_square_gof needs at least two categories");
  double stat = 0.0;
  double n = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    if (!(expected[i] > 0.0)) fail(Errc::InvalidExpected, "expected counts must be positive");
    const double d = observed[i] - expected[i];
    stat += d * d / expected[i];
    n += observed[i];
  }
  TestResult out;
  out.statistic = stat;
  out.n = static_cast<std::size_t>(std::llround(n));
  out.dof = static_cast<double>(observed.size() - 1);
  out.p_value = special::chi_square_sf(stat, *out.dof);
  return out;
}

/// Welch's unequal-variance t-test; statistic is positive when mean(a) > mean(b).
inline TestResult t_test_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) fail(Errc::InsufficientData, "t-test needs at least two values per group");
  const double ma = mean(a);
  const double mb = mean(b);
  const double va = variance(a) / static_cast<double>(a.size());
  const double vb = variance(b) / static_cast<double>(b.size());
  TestResult out;
  out.n = a.size() + b.size();
  const double se2 = va + vb;
  if (se2 == 0.0) {
    out.statistic = ma == mb ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), ma - mb);
    out.p_value = ma == mb ? 1.0 : 0.0;
    out.dof = static_cast<double>(out.n - 2);
    return out;
  }
  out.statistic = (ma - mb) / std::sqrt(se2);
  const double df = se2 * se2 /
                    (va * va / static_cast<double>(a.size() - 1) + vb * vb / static_cast<double>(b.size() - 1));
  out.dof = df;
  out.p_value = special::student_t_two_sided(out.statistic, df);
  return out;
}

/// Paired t-test on a - b.
inline TestResult paired_t_test(std::span<const double> a, std::span<const double> b,
                                Alternative alt = Alternative::TwoSided) {
  if (a.size() != b.size()) fail(Errc::InvalidParams, "paired_t_test: length mismatch");
  if (a.size() < 2) fail(Errc::InsufficientData, "paired_t_test needs at least two pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double md = mean(d);
  const double sd = std::sqrt(variance(d));
  TestResult out;
  out.n = d.size();
  out.dof = static_cast<double>(d.size() - 1);
  if (sd == 0.0) {
    out.statistic = md == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), md);
  } else {
    out.statistic = md / (sd / std::sqrt(static_cast<double>(d.size())));
  }
  switch (alt) {
    case Alternative::TwoSided:
      out.p_value = out.statistic == 0.0 ? 1.0 : special::student_t_two_sided(out.statistic, *out.dof);
      break;
    case Alternative::Greater:
      out.p_value = std::isinf(out.statistic) ? (out.statistic > 0 ? 0.0 : 1.0)
                                              : special::student_t_upper(out.statistic, *out.dof);
      break;
    case Alternative::Less:
      out.p_value = std::isinf(out.statistic) ? (out.statistic < 0 ? 0.0 : 1.0)
                                              : special::student_t_upper(-out.statistic, *out.dof);
      break;
  }
  return out;
}

inline std::vector<double> bonferroni(std::span<const double> p, std::size_t m) {
  if (m < p.size()) fail(Errc::InvalidParams, "bonferroni m must be at least the number of tests");
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = std::min(1.0, static_cast<double>(m) * p[i]);
  return out;
}

inline double bonferroni(double p, std::size_t m) { return std::min(1.0, static_cast<double>(m) * p); }

inline void apply_bonferroni(TestResult& r, std::size_t m) { r.corrected_p = bonferroni(r.p_value, m); }

}  // namespace prosody_rl::stats
