/*
 * Copyright 2026 The oodsynth Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <gtest/gtest.h>

#include "oodsynth/metrics.hpp"
#include "test_support.hpp"

namespace oodsynth {
namespace {

using testing_support::pairwise_auroc;
using testing_support::random_scores;
using testing_support::sweep_fpr95;

TEST(Auroc, Examples) {
  EXPECT_EQ(auroc({{2.0, 3.0}, {0.0, 1.0}}), 1.0);
  EXPECT_EQ(auroc({{0.0, 1.0}, {2.0, 3.0}}), 0.0);
  EXPECT_EQ(auroc({{4.0, 4.0, 4.0}, {4.0, 4.0}}), 0.5);
  EXPECT_THROW(auroc({{}, {1.0}}), std::invalid_argument);
  EXPECT_THROW(auroc({{1.0}, {}}), std::invalid_argument);
  EXPECT_THROW(auroc({{NAN}, {1.0}}), std::invalid_argument);
}

TEST(Auroc, MatchesAllPairsOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 400; ++trial) {
    const auto s = random_scores(rng, trial % 2 == 0);
    EXPECT_NEAR(auroc(s), pairwise_auroc(s), 1e-12);
  }
}

TEST(Auroc, InvariantUnderIncreasingTransform) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    auto s = random_scores(rng, trial % 2 == 0);
    const double before = auroc(s);
    for (auto* side : {&s.id_scores, &s.ood_scores}) {
      for (auto& v : *side) v = std::exp(0.5 * v) + 3.0 * v;
    }
    EXPECT_NEAR(auroc(s), before, 1e-12);
  }
}

TEST(Auroc, SwappingSidesComplements) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = random_scores(rng, trial % 2 == 0);
    EXPECT_NEAR(auroc(s) + auroc({s.ood_scores, s.id_scores}), 1.0, 1e-12);
  }
}

TEST(Fpr95, Examples) {
  EXPECT_EQ(fpr_at_95_tpr({{2.0, 3.0}, {0.0, 1.0}}), 0.0);
  std::vector<double> same;
  for (int i = 0; i < 40; ++i) same.push_back(i % 7);
  EXPECT_GE(fpr_at_95_tpr({same, same}), 0.95);
  EXPECT_EQ(fpr_at_95_tpr({same, same}), sweep_fpr95({same, same}));
  EXPECT_THROW(fpr_at_95_tpr({{}, {1.0}}), std::invalid_argument);
}

TEST(Fpr95, MatchesThresholdSweepOracle) {
  Rng rng(4);
  for (int trial = 0; trial < 400; ++trial) {
    const auto s = random_scores(rng, trial % 2 == 0);
    EXPECT_EQ(fpr_at_95_tpr(s), sweep_fpr95(s)) << trial;
  }
}

TEST(Fpr95, NonIncreasingAsOodScoresDrop) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    auto s = random_scores(rng, trial % 2 == 0);
    double previous = fpr_at_95_tpr(s);
    for (int step = 0; step < 5; ++step) {
      for (auto& v : s.ood_scores) v -= rng.uniform(0.0, 1.0);
      const double now = fpr_at_95_tpr(s);
      EXPECT_LE(now, previous);
      previous = now;
    }
  }
}

TEST(Metrics, IndependentOfOrder) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    auto s = random_scores(rng, trial % 2 == 0);
    const double a = auroc(s);
    const double f = fpr_at_95_tpr(s);
    rng.shuffle(std::span<double>(s.id_scores));
    rng.shuffle(std::span<double>(s.ood_scores));
    EXPECT_EQ(auroc(s), a);
    EXPECT_EQ(fpr_at_95_tpr(s), f);
  }
}

TEST(ThresholdAtTpr, LargestAdmittingThreshold) {
  std::vector<double> id;
  for (int i = 1; i <= 20; ++i) id.push_back(i);
  // 19 of 20 must be >= tau
  EXPECT_EQ(threshold_at_tpr(id, 0.95), 2.0);
  EXPECT_EQ(threshold_at_tpr(id, 1.0), 1.0);
  EXPECT_THROW(threshold_at_tpr(id, 0.0), std::invalid_argument);
  EXPECT_THROW(threshold_at_tpr(std::vector<double>{}, 0.5), std::invalid_argument);
}

TEST(IdAccuracy, OneHotExamples) {
  const auto hit = EmbeddingMatrix::from_rows({{1, 0, 0}, {0, 0, 1}, {0, 1, 0}});
  const std::vector<int> labels{0, 2, 1};
  EXPECT_EQ(id_accuracy(hit, labels), 1.0);
  const auto miss = EmbeddingMatrix::from_rows({{0, 1, 0}, {1, 0, 0}, {0, 0, 1}});
  EXPECT_EQ(id_accuracy(miss, labels), 0.0);
  EXPECT_THROW(id_accuracy(hit, std::vector<int>{0, 1}), std::invalid_argument);
}

TEST(IdAccuracy, HandCountOracle) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const auto l = testing_support::random_matrix(rng, 1 + rng.below(50), 2 + rng.below(5));
    std::vector<int> labels;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < l.rows(); ++i) {
      labels.push_back(static_cast<int>(rng.below(l.cols())));
      std::size_t best = 0;
      for (std::size_t j = 1; j < l.cols(); ++j) best = l(i, j) > l(i, best) ? j : best;
      hits += best == static_cast<std::size_t>(labels.back()) ? 1 : 0;
    }
    EXPECT_EQ(id_accuracy(l, labels), static_cast<double>(hits) / static_cast<double>(l.rows()));
  }
}

TEST(Msp, Examples) {
  EXPECT_DOUBLE_EQ(msp_score(std::vector<double>(4, 0.3)), 0.25);
  EXPECT_NEAR(msp_score(std::vector<double>{100.0, 0.0, 0.0}), 1.0, 1e-15);
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const auto l = testing_support::random_matrix(rng, 1, 2 + rng.below(8), 4.0);
    std::vector<double> shifted(l.row(0).begin(), l.row(0).end());
    for (auto& x : shifted) x += 17.5;
    EXPECT_NEAR(msp_score(shifted), msp_score(l.row(0)), 1e-12);
  }
}

TEST(EnergyBaseline, MirrorsEnergy) {
  EXPECT_NEAR(energy_baseline_score(std::vector<double>(10, 0.0)), std::log(10.0), 1e-15);
  EXPECT_EQ(energy_baseline_score(std::vector<double>{-3.5}), -3.5);
  EXPECT_DOUBLE_EQ(energy_baseline_score(std::vector<double>{1000.0, 1000.0}), 1000.0 + std::log(2.0));
}

}  // namespace
}  // namespace oodsynth
