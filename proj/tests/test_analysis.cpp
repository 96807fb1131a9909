#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "prosody_rl/analysis.hpp"
#include "prosody_rl/synthetic_teacher.hpp"

using namespace prosody_rl;

namespace {

struct Setup {
  GridMap map;
  MdpSolution sol;
  teacher::IntrlSession session;
};

Setup make_session(teacher::TeacherProfile p, int steps, std::uint64_t map_seed = 42) {
  Setup s{generate_map(10, 10, map_seed), {}, {}};
  s.sol = value_iteration(s.map);
  teacher::IntrlOptions opt;
  opt.steps = steps;
  s.session = teacher::generate_intrl_session(s.map, s.sol, p, opt);
  return s;
}

void expect_probabilities_valid(const analysis::IntrlReport& r) {
  auto check = [](const analysis::NamedTest& t) {
    EXPECT_GE(t.result.p_value, 0.0) << t.name;
    EXPECT_LE(t.result.p_value, 1.0) << t.name;
    if (t.result.corrected_p) {
      EXPECT_GE(*t.result.corrected_p, t.result.p_value) << t.name;
      EXPECT_LE(*t.result.corrected_p, 1.0) << t.name;
    }
  };
  check(r.balance);
  for (const auto& t : r.word_tests) check(t);
  for (const auto& t : r.correlations) {
    check(t);
    EXPECT_GE(t.result.statistic, -1.0);
    EXPECT_LE(t.result.statistic, 1.0);
  }
}

}  // namespace

TEST(IntrlReport, PositiveBiasMakesBalanceSignificant) {
  teacher::TeacherProfile p;
  p.pos_bias = 3.0;
  p.seed = 1;
  const auto s = make_session(p, 1600);
  const auto r = analysis::analyze_intrl_session(s.session.log, s.sol);
  ASSERT_GE(r.events, 1000u);
  EXPECT_GT(r.yes, r.no);
  ASSERT_TRUE(r.balance.result.corrected_p.has_value());
  EXPECT_LT(*r.balance.result.corrected_p, 0.05);
  expect_probabilities_valid(r);
}

TEST(IntrlReport, BalanceFamilySizeIsApplied) {
  teacher::TeacherProfile p;
  p.seed = 2;
  const auto s = make_session(p, 200);
  analysis::IntrlOptions opt;
  opt.balance_m = 10;
  const auto r = analysis::analyze_intrl_session(s.session.log, s.sol, opt);
  EXPECT_EQ(r.balance.m, 10u);
  EXPECT_DOUBLE_EQ(*r.balance.result.corrected_p, std::min(1.0, 10 * r.balance.result.p_value));
}

TEST(IntrlReport, RecoversInjectedCorrelation) {
  for (std::uint64_t seed : {3, 4}) {
    teacher::TeacherProfile p;
    p.expressiveness = 0.25;
    p.seed = seed;
    const auto s = make_session(p, 1200);
    const auto r = analysis::analyze_intrl_session(s.session.log, s.sol);
    ASSERT_TRUE(r.prosody_correlation.has_value());
    EXPECT_NEAR(*r.prosody_correlation, 0.25, 0.1) << seed;
    for (const char* name : {"pitch_mean", "energy_mean", "loudness_mean"}) {
      const auto* t = r.correlation(name);
      ASSERT_NE(t, nullptr);
      EXPECT_NEAR(t->result.statistic, 0.25, 0.1) << name;
      EXPECT_EQ(t->m, r.correlations.size());
    }
  }
}

TEST(IntrlReport, IntensityBoostShowsInEnergyNotDuration) {
  teacher::TeacherProfile p;
  p.neg_intensity_boost = 2.0;
  p.seed = 5;
  const auto s = make_session(p, 1200);
  const auto r = analysis::analyze_intrl_session(s.session.log, s.sol);
  for (const char* name : {"energy_mean", "energy_max", "loudness_mean", "loudness_max"}) {
    const auto* t = r.word_test(name);
    ASSERT_NE(t, nullptr) << name;
    EXPECT_LT(*t->result.corrected_p, 0.05) << name;
    EXPECT_LT(t->result.statistic, 0.0) << name;  // NO is louder
  }
  const auto* d = r.word_test("duration");
  ASSERT_NE(d, nullptr);
  EXPECT_GE(*d->result.corrected_p, 0.05);
  EXPECT_EQ(d->m, analysis::feature_columns().size());
}

TEST(IntrlReport, RowsPairWithPrecedingStep) {
  teacher::TeacherProfile p;
  p.seed = 6;
  const auto s = make_session(p, 300);
  const auto r = analysis::analyze_intrl_session(s.session.log, s.sol);
  const auto steps = s.session.log.steps();
  ASSERT_EQ(r.rows.size(), s.session.advantages.size());
  for (std::size_t k = 0; k < r.rows.size(); ++k) {
    EXPECT_DOUBLE_EQ(r.rows[k].advantage, s.session.advantages[k]);
    const auto& step = steps[static_cast<std::size_t>(r.rows[k].step_tick)];
    EXPECT_LT(step.t, r.rows[k].t);
    EXPECT_NEAR(r.rows[k].t - step.t, 0.3, 1e-9);
  }
}

TEST(IntrlReport, NormalizedPerformanceAtLeastOne) {
  teacher::TeacherProfile p;
  p.seed = 7;
  const auto s = make_session(p, 800);
  const auto r = analysis::analyze_intrl_session(s.session.log, s.sol);
  ASSERT_FALSE(r.normalized_performance.empty());
  for (double v : r.normalized_performance) EXPECT_GE(v, 1.0);
}

TEST(IntrlReport, TooFewEvents) {
  teacher::TeacherProfile p;
  p.seed = 8;
  auto s = make_session(p, 100);
  auto& rows = s.session.log.rows;
  int kept = 0;
  std::erase_if(rows, [&](const session::Row& row) {
    if (!std::holds_alternative<session::FeedbackRecord>(row)) return false;
    return ++kept > 2;
  });
  try {
    analysis::analyze_intrl_session(s.session.log, s.sol);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::InsufficientData);
  }
}

TEST(IntrlReport, OutputsCarryEveryTest) {
  teacher::TeacherProfile p;
  p.seed = 9;
  const auto s = make_session(p, 400);
  const auto r = analysis::analyze_intrl_session(s.session.log, s.sol);
  const auto j = analysis::to_json(r);
  EXPECT_EQ(j.at("kind"), "intrl");
  EXPECT_EQ(j.at("events").get<std::size_t>(), r.events);
  EXPECT_EQ(j.at("word_tests").size(), analysis::feature_columns().size());
  EXPECT_TRUE(j.at("word_tests")[0].contains("corrected_p"));
  const auto csv = analysis::to_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "t,word,value,advantage,tick,duration,pitch_mean,pitch_max,energy_mean,energy_max,energy_total,"
            "loudness_mean,loudness_max,repetition");
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), r.events + 1);
  const auto text = analysis::to_text(r);
  EXPECT_NE(text.find("balance chi2="), std::string::npos);
  EXPECT_NE(text.find("m=8"), std::string::npos);
}

TEST(DemoReport, TableOneSignPattern) {
  const auto map = generate_map(10, 10, 42);
  teacher::TeacherProfile p;
  p.expressiveness = 0.37;
  p.seed = 10;
  const auto ds = teacher::generate_demo_dataset(map, reward::solve_desk(map), p, 500);
  const auto r = analysis::analyze_demo_dataset(ds);
  EXPECT_FALSE(r.partial);
  ASSERT_TRUE(r.yes_pitch && r.no_pitch && r.return_test);
  EXPECT_GT(r.yes_pitch->result.statistic, 0.0);
  EXPECT_LT(r.no_pitch->result.statistic, 0.0);
  EXPECT_EQ(r.yes_pitch->m, 2u);
  EXPECT_GT(r.return_test->result.statistic, 0.0);
  EXPECT_LT(r.return_test->result.p_value, 0.05);
  EXPECT_NEAR(r.yes_duration_share + r.no_duration_share, 1.0, 1e-12);
  EXPECT_EQ(r.yes + r.no, 500u);
}

TEST(DemoReport, ShuffledPitchControl) {
  const auto map = generate_map(10, 10, 42);
  teacher::TeacherProfile p;
  p.expressiveness = 0.37;
  p.seed = 11;
  auto ds = teacher::generate_demo_dataset(map, reward::solve_desk(map), p, 500);
  std::vector<double> pitch;
  for (const auto& s : ds.snippets) pitch.push_back(s.audio->pitch_mean);
  std::mt19937_64 rng(12);
  std::shuffle(pitch.begin(), pitch.end(), rng);
  for (std::size_t k = 0; k < ds.snippets.size(); ++k) {
    ds.snippets[k].audio->pitch_mean = pitch[k];
    ds.snippets[k].audio->features->pitch_mean = pitch[k];
  }
  const auto r = analysis::analyze_demo_dataset(ds);
  EXPECT_LT(std::abs(r.yes_pitch->result.statistic), 0.12);
  EXPECT_LT(std::abs(r.no_pitch->result.statistic), 0.12);
}

TEST(DemoReport, AllYesIsPartial) {
  const auto map = generate_map(10, 10, 3);
  teacher::TeacherProfile p;
  p.seed = 13;
  auto ds = teacher::generate_demo_dataset(map, reward::solve_desk(map), p, 40);
  for (auto& s : ds.snippets) s.audio->word = Word::Yes;
  const auto r = analysis::analyze_demo_dataset(ds);
  EXPECT_TRUE(r.partial);
  EXPECT_TRUE(r.word_tests.empty());
  EXPECT_FALSE(r.return_test.has_value());
  EXPECT_TRUE(r.yes_pitch.has_value());
  EXPECT_FALSE(r.no_pitch.has_value());
  ASSERT_FALSE(r.warnings.empty());
  EXPECT_NE(analysis::to_text(r).find("PARTIAL REPORT"), std::string::npos);
  EXPECT_TRUE(analysis::to_json(r).at("partial").get<bool>());
}

TEST(DemoReport, NoAudioIsInsufficient) {
  reward::DemoDataset ds;
  ds.snippets.push_back({{{0.0}}, 1.0, std::nullopt});
  EXPECT_THROW(analysis::analyze_demo_dataset(ds), Error);
}

TEST(DemoReport, CsvRowsPerAudioSnippet) {
  const auto map = generate_map(10, 10, 3);
  teacher::TeacherProfile p;
  p.seed = 14;
  const auto ds = teacher::generate_demo_dataset(map, reward::solve_desk(map), p, 25);
  const auto csv = analysis::to_csv(ds);
  EXPECT_EQ(csv.rfind("index,word,gt_return,length,duration,", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 26);
}
