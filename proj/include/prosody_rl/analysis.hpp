#pragma once

// Report pipelines over interactive sessions and demonstration datasets.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "prosody_rl/error.hpp"
#include "prosody_rl/gridworld.hpp"
#include "prosody_rl/prosody.hpp"
#include "prosody_rl/reward_learning.hpp"
#include "prosody_rl/session_log.hpp"
#include "prosody_rl/stats.hpp"

namespace prosody_rl::analysis {

struct FeatureColumn {
  const char* name;
  double (*get)(const ProsodyFeatures&);
};

inline const std::vector<FeatureColumn>& feature_columns() {
  static const std::vector<FeatureColumn> cols{
      {"duration", [](const ProsodyFeatures& f) { return f.duration; }},
      {"pitch_mean", [](const ProsodyFeatures& f) { return f.pitch_mean; }},
      {"pitch_max", [](const ProsodyFeatures& f) { return f.pitch_max; }},
      {"energy_mean", [](const ProsodyFeatures& f) { return f.energy_mean; }},
      {"energy_max", [](const ProsodyFeatures& f) { return f.energy_max; }},
      {"energy_total", [](const ProsodyFeatures& f) { return f.energy_total; }},
      {"loudness_mean", [](const ProsodyFeatures& f) { return f.loudness_mean; }},
      {"loudness_max", [](const ProsodyFeatures& f) { return f.loudness_max; }},
  };
  return cols;
}

struct NamedTest {
  std::string name;
  stats::TestResult result;
  std::size_t m = 1;  // Bonferroni family size behind corrected_p
};

inline nlohmann::json to_json(const NamedTest& t) {
  auto j = stats::to_json(t.result);
  j["name"] = t.name;
  j["m"] = t.m;
  return j;
}

namespace detail {

inline void correct(std::vector<NamedTest>& tests) {
  const std::size_t m = tests.size();
  for (auto& t : tests) {
    t.m = m;
    stats::apply_bonferroni(t.result, m);
  }
}

inline std::optional<stats::TestResult> try_test(const std::function<stats::TestResult()>& f,
                                                 std::vector<std::string>& warnings, const std::string& what) {
  try {
    return f();
  } catch (const Error& e) {
    warnings.push_back(what + ": " + e.what());
    return std::nullopt;
  }
}

inline nlohmann::json tests_json(const std::vector<NamedTest>& v) {
  auto a = nlohmann::json::array();
  for (const auto& t : v) a.push_back(to_json(t));
  return a;
}

inline std::string p_text(const stats::TestResult& r) {
  std::string s = fmt::format("p={:.4g}", r.p_value);
  if (r.corrected_p) s += fmt::format(" p_corr={:.4g}", *r.corrected_p);
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Interactive sessions

struct EventRow {
  double t = 0.0;
  Word word = Word::Yes;
  double value = 0.0;
  double advantage = 0.0;
  int step_tick = -1;
  ProsodyFeatures features;
};

struct IntrlReport {
  std::size_t events = 0;
  std::size_t yes = 0;
  std::size_t no = 0;
  NamedTest balance;
  std::vector<NamedTest> word_tests;    // YES vs NO per feature, Welch
  std::vector<NamedTest> correlations;  // word-stratified Spearman of sign*feature vs advantage
  std::optional<NamedTest> repetition;  // point-biserial against advantage
  // Mean of the pitch, energy and loudness correlations.
  std::optional<double> prosody_correlation;
  std::vector<double> normalized_performance;
  std::vector<EventRow> rows;
  std::vector<std::string> warnings;

  [[nodiscard]] const NamedTest* word_test(const std::string& name) const {
    for (const auto& t : word_tests)
      if (t.name == name) return &t;
    return nullptr;
  }
  [[nodiscard]] const NamedTest* correlation(const std::string& name) const {
    for (const auto& t : correlations)
      if (t.name == name) return &t;
    return nullptr;
  }
};

struct IntrlOptions {
  std::size_t balance_m = 1;  // number of sessions analysed together
  double expected_yes_share = 0.5;
};

/// Pairs every feedback row with the last step that started strictly before it.
inline std::vector<EventRow> event_rows(const session::SessionLog& log, const MdpSolution& solution) {
  const auto steps = log.steps();
  std::vector<EventRow> out;
  for (const auto& f : log.feedback()) {
    if (!f.features) continue;
    const auto it = std::lower_bound(steps.begin(), steps.end(), f.t,
                                     [](const session::StepRecord& s, double t) { return s.t < t; });
    if (it == steps.begin()) continue;
    const auto& s = *std::prev(it);
    out.push_back({f.t, f.word, f.value, advantage(solution, s.state, s.action), s.tick, *f.features});
  }
  return out;
}

/// Steps per completed episode divided by the optimal step count.
inline std::vector<double> teaching_performance(const session::SessionLog& log, const MdpSolution& solution) {
  const auto& map = log.header.map;
  std::vector<double> out;
  int count = 0;
  int optimal = 0;
  try {
    optimal = optimal_step_count(map, log.header.reward, solution);
  } catch (const Error&) {
    return out;
  }
  for (const auto& s : log.steps()) {
    ++count;
    if (!s.terminal) continue;
    if (s.next.has_nut && s.next.cell() == map.squirrel) out.push_back(static_cast<double>(count) / optimal);
    count = 0;
  }
  return out;
}

inline IntrlReport analyze_intrl_session(const session::SessionLog& log, const MdpSolution& solution,
                                         const IntrlOptions& opt = {}) {
  IntrlReport rep;
  rep.rows = event_rows(log, solution);
  rep.events = rep.rows.size();
  if (rep.events < 3) fail(Errc::InsufficientData, "need at least 3 feedback events with features");
  for (const auto& r : rep.rows) (r.word == Word::Yes ? rep.yes : rep.no)++;

  const double n = static_cast<double>(rep.events);
  const std::vector<double> obs{static_cast<double>(rep.yes), static_cast<double>(rep.no)};
  const std::vector<double> exp{n * opt.expected_yes_share, n * (1.0 - opt.expected_yes_share)};
  rep.balance = {"yes_vs_no", stats::chi_square_gof(obs, exp), opt.balance_m};
  stats::apply_bonferroni(rep.balance.result, opt.balance_m);

  std::vector<double> adv;
  std::vector<int> strata;
  for (const auto& r : rep.rows) {
    adv.push_back(r.advantage);
    strata.push_back(r.word == Word::Yes ? 1 : 0);
  }
  for (const auto& col : feature_columns()) {
    std::vector<double> yes;
    std::vector<double> no;
    std::vector<double> signed_x;
    for (const auto& r : rep.rows) {
      const double v = col.get(r.features);
      (r.word == Word::Yes ? yes : no).push_back(v);
      signed_x.push_back(word_sign(r.word) * v);
    }
    if (yes.size() >= 2 && no.size() >= 2) {
      rep.word_tests.push_back({col.name, stats::t_test_two_sample(yes, no)});
    } else {
      rep.warnings.push_back(std::string(col.name) + ": too few events in one word class for a t-test");
    }
    if (auto r = detail::try_test([&] { return stats::stratified_spearman(signed_x, adv, strata); }, rep.warnings,
                                  col.name))
      rep.correlations.push_back({col.name, *r});
  }
  {
    std::vector<double> values;
    for (const auto& r : rep.rows) values.push_back(r.value);
    if (auto r = detail::try_test([&] { return stats::stratified_spearman(values, adv, strata); }, rep.warnings,
                                  "signed_value"))
      rep.correlations.push_back({"signed_value", *r});
  }
  detail::correct(rep.word_tests);
  detail::correct(rep.correlations);
  {
    double sum = 0.0;
    int k = 0;
    for (const char* name : {"pitch_mean", "energy_mean", "loudness_mean"})
      if (const auto* t = rep.correlation(name)) {
        sum += t->result.statistic;
        ++k;
      }
    if (k > 0) rep.prosody_correlation = sum / k;
  }

  std::vector<int> rep_flags;
  for (const auto& r : rep.rows) rep_flags.push_back(r.features.repetition);
  if (auto r = detail::try_test([&] { return stats::point_biserial(rep_flags, adv); }, rep.warnings, "repetition")) {
    rep.repetition = NamedTest{"repetition", *r, 1};
    stats::apply_bonferroni(rep.repetition->result, 1);
  }
  rep.normalized_performance = teaching_performance(log, solution);
  return rep;
}

inline nlohmann::json to_json(const IntrlReport& r) {
  nlohmann::json j;
  j["kind"] = "intrl";
  j["events"] = r.events;
  j["yes"] = r.yes;
  j["no"] = r.no;
  j["balance"] = to_json(r.balance);
  j["word_tests"] = detail::tests_json(r.word_tests);
  j["correlations"] = detail::tests_json(r.correlations);
  j["repetition"] = r.repetition ? to_json(*r.repetition) : nlohmann::json(nullptr);
  j["prosody_correlation"] = r.prosody_correlation ? nlohmann::json(*r.prosody_correlation) : nlohmann::json(nullptr);
  j["normalized_performance"] = r.normalized_performance;
  j["warnings"] = r.warnings;
  return j;
}

inline std::string to_text(const IntrlReport& r) {
  std::ostringstream os;
  os << fmt::format("feedback events: {} (yes {}, no {})\n", r.events, r.yes, r.no);
  os << fmt::format("balance chi2={:.4g} {} m={}\n", r.balance.result.statistic, detail::p_text(r.balance.result),
                    r.balance.m);
  os << "yes vs no (Welch t):\n";
  for (const auto& t : r.word_tests)
    os << fmt::format("  {:<14} t={:+.4f} {} m={}\n", t.name, t.result.statistic, detail::p_text(t.result), t.m);
  os << "feature vs advantage (within-word Spearman):\n";
  for (const auto& t : r.correlations)
    os << fmt::format("  {:<14} r={:+.4f} {} m={}\n", t.name, t.result.statistic, detail::p_text(t.result), t.m);
  if (r.prosody_correlation) os << fmt::format("  mean of pitch/energy/loudness r={:+.4f}\n", *r.prosody_correlation);
  if (r.repetition)
    os << fmt::format("repetition point-biserial r={:+.4f} {}\n", r.repetition->result.statistic,
                      detail::p_text(r.repetition->result));
  if (r.normalized_performance.empty()) {
    os << "normalized performance: no completed episode\n";
  } else {
    os << "normalized performance:";
    for (double v : r.normalized_performance) os << fmt::format(" {:.3f}", v);
    os << "\n";
  }
  for (const auto& w : r.warnings) os << "warning: " << w << "\n";
  return os.str();
}

inline std::string to_csv(const IntrlReport& r) {
  std::ostringstream os;
  os << "t,word,value,advantage,tick";
  for (const auto& c : feature_columns()) os << ',' << c.name;
  os << ",repetition\n";
  for (const auto& e : r.rows) {
    os << fmt::format("{},{},{},{},{}", e.t, to_string(e.word), e.value, e.advantage, e.step_tick);
    for (const auto& c : feature_columns()) os << fmt::format(",{}", c.get(e.features));
    os << ',' << e.features.repetition << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Demonstration datasets

struct DemoReport {
  std::size_t snippets = 0;
  std::size_t yes = 0;
  std::size_t no = 0;
  double yes_duration_share = 0.0;
  double no_duration_share = 0.0;
  std::vector<NamedTest> word_tests;
  std::optional<NamedTest> return_test;  // YES returns vs NO returns
  std::optional<NamedTest> yes_pitch;    // Spearman(pitch, gt_return) within YES
  std::optional<NamedTest> no_pitch;
  bool partial = false;
  std::vector<std::string> warnings;
};

inline DemoReport analyze_demo_dataset(const reward::DemoDataset& ds) {
  DemoReport rep;
  struct Item {
    Word word;
    double ret;
    ProsodyFeatures f;
  };
  std::vector<Item> items;
  for (const auto& s : ds.snippets) {
    if (!s.audio) continue;
    ProsodyFeatures f;
    if (s.audio->features) {
      f = *s.audio->features;
    } else {
      f.pitch_mean = s.audio->pitch_mean;
    }
    items.push_back({s.audio->word, s.gt_return, f});
  }
  rep.snippets = items.size();
  if (items.empty()) fail(Errc::InsufficientData, "dataset has no snippets with audio");

  double dy = 0.0;
  double dn = 0.0;
  std::vector<double> ry;
  std::vector<double> rn;
  std::vector<double> py;
  std::vector<double> pn;
  for (const auto& it : items) {
    if (it.word == Word::Yes) {
      ++rep.yes;
      dy += it.f.duration;
      ry.push_back(it.ret);
      py.push_back(it.f.pitch_mean);
    } else {
      ++rep.no;
      dn += it.f.duration;
      rn.push_back(it.ret);
      pn.push_back(it.f.pitch_mean);
    }
  }
  if (dy + dn > 0.0) {
    rep.yes_duration_share = dy / (dy + dn);
    rep.no_duration_share = dn / (dy + dn);
  }
  if (rep.yes == 0 || rep.no == 0) {
    rep.partial = true;
    rep.warnings.push_back(rep.yes == 0 ? "no YES snippets; word comparisons skipped"
                                        : "no NO snippets; word comparisons skipped");
  }

  if (!rep.partial) {
    for (const auto& col : feature_columns()) {
      std::vector<double> a;
      std::vector<double> b;
      for (const auto& it : items) (it.word == Word::Yes ? a : b).push_back(col.get(it.f));
      if (a.size() >= 2 && b.size() >= 2) rep.word_tests.push_back({col.name, stats::t_test_two_sample(a, b)});
    }
    detail::correct(rep.word_tests);
    if (ry.size() >= 2 && rn.size() >= 2) {
      rep.return_test = NamedTest{"return_yes_vs_no", stats::t_test_two_sample(ry, rn), 1};
      stats::apply_bonferroni(rep.return_test->result, 1);
    }
  }
  auto corr = [&](const std::vector<double>& p, const std::vector<double>& r, const char* name) {
    std::optional<NamedTest> out;
    if (p.empty()) return out;
    if (auto t = detail::try_test([&] { return stats::spearman(p, r); }, rep.warnings, name))
      out = NamedTest{name, *t, 2};
    if (out) stats::apply_bonferroni(out->result, 2);
    return out;
  };
  rep.yes_pitch = corr(py, ry, "pitch_vs_return_yes");
  rep.no_pitch = corr(pn, rn, "pitch_vs_return_no");
  return rep;
}

inline nlohmann::json to_json(const DemoReport& r) {
  nlohmann::json j;
  j["kind"] = "demo";
  j["snippets"] = r.snippets;
  j["yes"] = r.yes;
  j["no"] = r.no;
  j["yes_duration_share"] = r.yes_duration_share;
  j["no_duration_share"] = r.no_duration_share;
  j["word_tests"] = detail::tests_json(r.word_tests);
  j["return_test"] = r.return_test ? to_json(*r.return_test) : nlohmann::json(nullptr);
  j["pitch_vs_return_yes"] = r.yes_pitch ? to_json(*r.yes_pitch) : nlohmann::json(nullptr);
  j["pitch_vs_return_no"] = r.no_pitch ? to_json(*r.no_pitch) : nlohmann::json(nullptr);
  j["partial"] = r.partial;
  j["warnings"] = r.warnings;
  return j;
}

inline std::string to_text(const DemoReport& r) {
  std::ostringstream os;
  os << fmt::format("snippets: {} (yes {}, no {})\n", r.snippets, r.yes, r.no);
  os << fmt::format("duration share: yes {:.3f} no {:.3f}\n", r.yes_duration_share, r.no_duration_share);
  for (const auto& t : r.word_tests)
    os << fmt::format("  {:<14} t={:+.4f} {} m={}\n", t.name, t.result.statistic, detail::p_text(t.result), t.m);
  if (r.return_test)
    os << fmt::format("return yes vs no t={:+.4f} {}\n", r.return_test->result.statistic,
                      detail::p_text(r.return_test->result));
  for (const auto* t : {&r.yes_pitch, &r.no_pitch})
    if (*t)
      os << fmt::format("{} r={:+.4f} {} m={}\n", (*t)->name, (*t)->result.statistic, detail::p_text((*t)->result),
                        (*t)->m);
  if (r.partial) os << "PARTIAL REPORT\n";
  for (const auto& w : r.warnings) os << "warning: " << w << "\n";
  return os.str();
}

inline std::string to_csv(const reward::DemoDataset& ds) {
  std::ostringstream os;
  os << "index,word,gt_return,length";
  for (const auto& c : feature_columns()) os << ',' << c.name;
  os << '\n';
  for (std::size_t k = 0; k < ds.snippets.size(); ++k) {
    const auto& s = ds.snippets[k];
    if (!s.audio) continue;
    const ProsodyFeatures f = s.audio->features.value_or(ProsodyFeatures{});
    os << fmt::format("{},{},{},{}", k, to_string(s.audio->word), s.gt_return, s.states.size());
    for (const auto& c : feature_columns()) os << fmt::format(",{}", c.get(f));
    os << '\n';
  }
  return os.str();
}

}  // namespace prosody_rl::analysis
