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

#include "oodsynth/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace oodsynth {

void ScoreSet::validate() const {
  if (id_scores.empty() || ood_scores.empty()) {
    throw std::invalid_argument("ScoreSet: both ID and OOD scores must be nonempty");
  }
  for (const auto* side : {&id_scores, &ood_scores}) {
    for (const double v : *side) {
      if (!std::isfinite(v)) throw std::invalid_argument("ScoreSet: non-finite score");
    }
  }
}

double auroc(const ScoreSet& s) {
  s.validate();
  const std::size_t n_id = s.id_scores.size();
  const std::size_t n_ood = s.ood_scores.size();
  // (score, is_id) sorted ascending; tied blocks share their mean rank.
  std::vector<std::pair<double, bool>> all;
  all.reserve(n_id + n_ood);
  for (const double v : s.id_scores) all.emplace_back(v, true);
  for (const double v : s.ood_scores) all.emplace_back(v, false);
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  double id_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    std::size_t ids_in_block = 0;
    while (j < all.size() && all[j].first == all[i].first) {
      ids_in_block += all[j].second ? 1 : 0;
      ++j;
    }
    // ranks i+1 .. j, mean (i + 1 + j) / 2
    id_rank_sum += static_cast<double>(ids_in_block) * 0.5 * static_cast<double>(i + 1 + j);
    i = j;
  }
  const double u = id_rank_sum - 0.5 * static_cast<double>(n_id) * static_cast<double>(n_id + 1);
  return u / (static_cast<double>(n_id) * static_cast<double>(n_ood));
}

double threshold_at_tpr(std::span<const double> id_scores, double tpr) {
  if (id_scores.empty()) throw std::invalid_argument("threshold_at_tpr: no ID scores");
  if (!(tpr > 0.0 && tpr <= 1.0)) throw std::invalid_argument("threshold_at_tpr: tpr must lie in (0, 1]");
  std::vector<double> sorted(id_scores.begin(), id_scores.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const std::size_t n = sorted.size();
  // Smallest count j with j / n >= tpr; the j-th largest score admits at
  // least j samples, and any larger threshold admits fewer.
  auto needed = static_cast<std::size_t>(std::ceil(tpr * static_cast<double>(n) - 1e-9));
  needed = std::clamp<std::size_t>(needed, 1, n);
  return sorted[needed - 1];
}

double fpr_at_95_tpr(const ScoreSet& s) {
  s.validate();
  const double tau = threshold_at_tpr(s.id_scores, 0.95);
  const auto false_pos = std::count_if(s.ood_scores.begin(), s.ood_scores.end(),
                                       [tau](double v) { return v >= tau; });
  return static_cast<double>(false_pos) / static_cast<double>(s.ood_scores.size());
}

double id_accuracy(const EmbeddingMatrix& logits, std::span<const int> labels) {
  if (logits.rows() != labels.size()) throw std::invalid_argument("id_accuracy: shape mismatch");
  if (labels.empty()) throw std::invalid_argument("id_accuracy: empty batch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (static_cast<int>(argmax(logits.row(i))) == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double msp_score(std::span<const double> logits) {
  const auto p = softmax(logits);
  return *std::max_element(p.begin(), p.end());
}

double energy_baseline_score(std::span<const double> logits) { return log_sum_exp(logits); }

}  // namespace oodsynth
