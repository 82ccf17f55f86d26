#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "acnescore/evaluation.hpp"
#include "test_util.hpp"

using namespace acnescore;
using acnescore::testing::throws_code;

namespace {

// Reference golden-set confusion matrix, rows predicted 1..5, columns true 1..5.
ConfusionMatrix reference_matrix() {
  ConfusionMatrix m;
  const int rows[5][5] = {{0, 0, 0, 0, 0}, {1, 12, 22, 0, 0}, {1, 25, 106, 35, 3}, {0, 0, 1, 13, 8}, {0, 0, 0, 1, 2}};
  for (int p = 1; p <= 5; ++p) {
    for (int t = 1; t <= 5; ++t) m.cell(p, t) = static_cast<std::size_t>(rows[p - 1][t - 1]);
  }
  return m;
}

std::vector<GoldenRecord> random_panel(std::size_t images, std::mt19937_64& rng) {
  std::vector<GoldenRecord> out;
  for (std::size_t k = 0; k < images; ++k) {
    std::vector<std::pair<std::string, SeverityLabel>> labels;
    for (int r = 0; r < 11; ++r) labels.emplace_back("derm" + std::to_string(r), SeverityLabel(1 + static_cast<int>(rng() % 5)));
    out.push_back(GoldenRecord::make("img" + std::to_string(k), "", labels));
  }
  return out;
}

}  // namespace

TEST(Rmse, ZeroResidual) {
  const std::vector<double> c{1.0, 2.5, 4.0};
  EXPECT_EQ(rmse_vs_consensus(c, c), 0.0);
}

TEST(Rmse, ConstantOffset) {
  const std::vector<double> c{1.0, 2.5, 4.0};
  const std::vector<double> p{1.5, 3.0, 4.5};
  EXPECT_NEAR(rmse_vs_consensus(p, c), 0.5, 1e-15);
}

TEST(Rmse, HandComputed) {
  EXPECT_NEAR(rmse_vs_consensus(std::vector<double>{3, 5}, std::vector<double>{3, 4}), std::sqrt(0.5), 1e-15);
}

TEST(Rmse, Errors) {
  EXPECT_TRUE(throws_code(ErrorCode::ShapeError, [] { rmse_vs_consensus(std::vector<double>{1}, std::vector<double>{1, 2}); }));
  EXPECT_TRUE(throws_code(ErrorCode::EmptyInput, [] { rmse_vs_consensus({}, {}); }));
}

TEST(Rmse, NonNegativeAndZeroOnlyOnMatch) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(1.0, 5.0);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> a(10);
    for (auto& x : a) x = u(rng);
    auto b = a;
    EXPECT_EQ(rmse_vs_consensus(a, b), 0.0);
    b[rng() % 10] += 0.25;
    EXPECT_GT(rmse_vs_consensus(a, b), 0.0);
  }
}

TEST(Baseline, Constant) { EXPECT_EQ(baseline_rmse(std::vector<double>{3.2, 3.2, 3.2}), 0.0); }

TEST(Baseline, SymmetricPair) { EXPECT_DOUBLE_EQ(baseline_rmse(std::vector<double>{2.0, 4.0}), 1.0); }

TEST(Baseline, EqualsRmseOfMeanPredictorAndStdDev) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(1.0, 5.0);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> c(1 + rng() % 60);
    for (auto& x : c) x = u(rng);
    long double mean = 0;
    for (double x : c) mean += x;
    mean /= c.size();
    long double var = 0;
    for (double x : c) var += (x - mean) * (x - mean);
    const double sd = static_cast<double>(std::sqrt(var / c.size()));
    EXPECT_NEAR(baseline_rmse(c), sd, 1e-12);
    double m = 0;
    for (double x : c) m += x;
    m /= static_cast<double>(c.size());
    EXPECT_NEAR(baseline_rmse(c), rmse_vs_consensus(std::vector<double>(c.size(), m), c), 1e-12);
  }
  EXPECT_TRUE(throws_code(ErrorCode::EmptyInput, [] { baseline_rmse({}); }));
}

TEST(Panel, RaterMatchingConsensusScoresZero) {
  std::vector<GoldenRecord> golden;
  for (int k = 0; k < 5; ++k) {
    std::vector<std::pair<std::string, SeverityLabel>> labels;
    for (int r = 0; r < 11; ++r) labels.emplace_back("r" + std::to_string(r), SeverityLabel(1 + k));
    golden.push_back(GoldenRecord::make("i" + std::to_string(k), "", labels));
  }
  const auto report = panel_report(golden);
  for (const auto& [_, v] : report.per_rater_rmse) EXPECT_EQ(v, 0.0);
}

TEST(Panel, ReferenceTableStatistics) {
  const std::vector<double> table{0.517, 0.508, 0.500, 0.495, 0.490, 0.484, 0.454, 0.450, 0.402, 0.400, 0.388};
  std::map<std::string, double> per_rater;
  for (std::size_t i = 0; i < table.size(); ++i) per_rater["derm" + std::to_string(i + 1)] = table[i];
  const auto report = panel_statistics(per_rater, 0.482);
  EXPECT_EQ(report.worst, 0.517);
  EXPECT_EQ(report.median, 0.484);
  EXPECT_TRUE(*report.model_beats_median());
  EXPECT_TRUE(*report.model_beats_worst());
}

TEST(Panel, MatchesBruteForceOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto golden = random_panel(40, rng);
    const auto report = panel_report(golden);
    for (int r = 0; r < 11; ++r) {
      const std::string id = "derm" + std::to_string(r);
      long double sum = 0;
      for (const auto& g : golden) {
        long double mean = 0;
        for (const auto& [_, l] : g.labels) mean += l.value();
        mean /= 11;
        const long double d = g.label_of(id)->value() - mean;
        sum += d * d;
      }
      EXPECT_NEAR(report.per_rater_rmse.at(id), static_cast<double>(std::sqrt(sum / golden.size())), 1e-9);
    }
  }
}

TEST(Panel, InconsistentRatersRejected) {
  std::mt19937_64 rng(4);
  auto golden = random_panel(3, rng);
  auto labels = golden[1].labels;
  labels[0].first = "stranger";
  golden[1] = GoldenRecord::make(golden[1].image_id, "", labels);
  EXPECT_TRUE(throws_code(ErrorCode::PanelError, [&] { panel_report(golden); }));
}

TEST(Confusion, PerfectPredictionsDiagonal) {
  std::vector<SeverityLabel> l{SeverityLabel(1), SeverityLabel(3), SeverityLabel(3), SeverityLabel(5)};
  const auto m = confusion(l, l);
  for (int p = 1; p <= 5; ++p) {
    for (int t = 1; t <= 5; ++t) {
      if (p != t) EXPECT_EQ(m.cell(p, t), 0U);
    }
  }
  EXPECT_EQ(m.cell(3, 3), 2U);
  EXPECT_EQ(m.total(), 4U);
}

TEST(Confusion, EmptyAndShape) {
  EXPECT_EQ(confusion({}, {}).total(), 0U);
  std::vector<SeverityLabel> a{SeverityLabel(1)};
  EXPECT_TRUE(throws_code(ErrorCode::ShapeError, [&] { confusion(a, {}); }));
}

TEST(Confusion, MarginsMatchHistograms) {
  std::mt19937_64 rng(5);
  std::vector<SeverityLabel> p;
  std::vector<SeverityLabel> t;
  for (int i = 0; i < 300; ++i) {
    p.emplace_back(1 + static_cast<int>(rng() % 5));
    t.emplace_back(1 + static_cast<int>(rng() % 5));
  }
  const auto m = confusion(p, t);
  const auto hp = class_distribution(p);
  const auto ht = class_distribution(t);
  for (int c = 1; c <= 5; ++c) {
    EXPECT_EQ(m.predicted_total(c), hp[SeverityLabel(c)]);
    EXPECT_EQ(m.truth_total(c), ht[SeverityLabel(c)]);
  }
}

TEST(Recall, ReferenceMatrix) {
  const auto m = reference_matrix();
  EXPECT_EQ(m.total(), 230U);
  const auto f = recall_fractions(m);
  EXPECT_EQ(*f[2], (Fraction{106, 129}));
  EXPECT_EQ(*f[0], (Fraction{0, 2}));
  EXPECT_EQ(recall_per_class(m)[0], 0.0);
  EXPECT_NEAR(*recall_per_class(m)[2], 0.8217, 1e-4);
}

TEST(Recall, IdentityAndUndefined) {
  ConfusionMatrix m;
  for (int c = 1; c <= 5; ++c) m.cell(c, c) = 1;
  for (const auto& r : recall_per_class(m)) EXPECT_EQ(*r, 1.0);
  ConfusionMatrix sparse;
  sparse.cell(2, 2) = 3;
  const auto r = recall_per_class(sparse);
  EXPECT_FALSE(r[0].has_value());
  EXPECT_EQ(*r[1], 1.0);
}

TEST(Pearson, IdentityNegationAffine) {
  const std::vector<double> t{1.0, 2.2, 3.1, 4.8, 2.0};
  std::vector<double> neg;
  std::vector<double> aff;
  for (double x : t) {
    neg.push_back(-x);
    aff.push_back(2 * x + 1);
  }
  EXPECT_NEAR(pearson(t, t), 1.0, 1e-15);
  EXPECT_NEAR(pearson(neg, t), -1.0, 1e-15);
  EXPECT_NEAR(pearson(aff, t), 1.0, 1e-15);
}

TEST(Pearson, PositiveAffineInvariance) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0, 1);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> a(20);
    std::vector<double> b(20);
    for (std::size_t k = 0; k < 20; ++k) {
      a[k] = n(rng);
      b[k] = a[k] + n(rng);
    }
    const double r = pearson(a, b);
    std::vector<double> a2;
    for (double x : a) a2.push_back(3.5 * x - 7.0);
    EXPECT_NEAR(pearson(a2, b), r, 1e-12);
    EXPECT_LE(std::abs(r), 1.0);
  }
}

TEST(Pearson, Undefined) {
  EXPECT_TRUE(throws_code(ErrorCode::UndefinedCorrelation,
                          [] { pearson(std::vector<double>{2, 2, 2}, std::vector<double>{1, 2, 3}); }));
  EXPECT_TRUE(throws_code(ErrorCode::UndefinedCorrelation,
                          [] { pearson(std::vector<double>{2}, std::vector<double>{1}); }));
}

TEST(EvaluateModel, ExactConsensusScorer) {
  std::mt19937_64 rng(7);
  const auto golden = random_panel(30, rng);
  const auto s = evaluate_model(golden, [](const GoldenRecord& g) { return g.consensus; });
  EXPECT_EQ(s.model_rmse, 0.0);
  for (int p = 1; p <= 5; ++p) {
    for (int t = 1; t <= 5; ++t) {
      if (p != t) EXPECT_EQ(s.confusion.cell(p, t), 0U);
    }
  }
  EXPECT_EQ(s.confusion.total(), 30U);
  EXPECT_NEAR(*s.pearson, 1.0, 1e-12);
}

TEST(EvaluateModel, GlobalMeanScorerMatchesBaseline) {
  std::mt19937_64 rng(8);
  const auto golden = random_panel(30, rng);
  double mean = 0;
  for (const auto& g : golden) mean += g.consensus.value();
  mean /= static_cast<double>(golden.size());
  const auto s = evaluate_model(golden, [mean](const GoldenRecord&) { return clamp_score(mean); });
  EXPECT_NEAR(s.model_rmse, s.baseline_rmse, 1e-12);
  EXPECT_FALSE(s.pearson.has_value());
}

TEST(EvaluateModel, FailuresExcluded) {
  std::mt19937_64 rng(9);
  const auto golden = random_panel(10, rng);
  const auto s = evaluate_model(golden, [](const GoldenRecord& g) {
    if (g.image_id == "img3" || g.image_id == "img7") throw Error(ErrorCode::NoFaceFound, "none");
    return g.consensus;
  });
  EXPECT_EQ(s.failed.size(), 2U);
  EXPECT_EQ(s.scored_ids.size(), 8U);
  EXPECT_EQ(s.confusion.total(), 8U);
  const auto j = to_json(s);
  EXPECT_EQ(j["failed_images"].size(), 2U);
  EXPECT_EQ(j["confusion"].size(), 5U);
  EXPECT_EQ(j["per_rater_rmse"].size(), 11U);
}

TEST(EvaluateModel, AllFailuresIsError) {
  std::mt19937_64 rng(10);
  const auto golden = random_panel(3, rng);
  EXPECT_TRUE(throws_code(ErrorCode::EvaluationError, [&] {
    evaluate_model(golden, [](const GoldenRecord&) -> SeverityScore { throw Error(ErrorCode::NoFaceFound, "x"); });
  }));
}
