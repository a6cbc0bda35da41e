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

// OOD evaluation metrics. Every score follows the convention higher = more
// in-distribution; ID samples are the positive class.

#ifndef OODSYNTH_METRICS_HPP_
#define OODSYNTH_METRICS_HPP_

#include <span>
#include <vector>

#include "oodsynth/embeddings.hpp"

namespace oodsynth {

struct ScoreSet {
  std::vector<double> id_scores;
  std::vector<double> ood_scores;

  // Throws std::invalid_argument if either side is empty or non-finite.
  void validate() const;
};

// P(id > ood) + 0.5 P(id == ood) via midrank sums, O(n log n).
double auroc(const ScoreSet& s);

// Largest threshold tau with |{id >= tau}| / |id| >= tpr. tpr in (0, 1].
double threshold_at_tpr(std::span<const double> id_scores, double tpr);

// |{ood >= tau}| / |ood| at tau = threshold_at_tpr(id, 0.95).
double fpr_at_95_tpr(const ScoreSet& s);

// Fraction of rows whose argmax (lowest index on ties) equals the label.
double id_accuracy(const EmbeddingMatrix& logits, std::span<const int> labels);

// Maximum softmax probability.
double msp_score(std::span<const double> logits);

// log sum exp(logits), i.e. negative energy.
double energy_baseline_score(std::span<const double> logits);

}  // namespace oodsynth

#endif  // OODSYNTH_METRICS_HPP_
