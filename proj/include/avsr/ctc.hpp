// Copyright 2026 The avsr-lombard Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "avsr/tensor.hpp"

namespace avsr::ctc {

inline constexpr int kBlank = 0;

// Label indices into the output units, never the blank.
using LabelSequence = std::vector<int>;
// One output unit per frame, blanks included.
using Alignment = std::vector<int>;

// Rows are frames, columns output units; each row is a log distribution.
using LogProbs = RowMatrix;

inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

// Merge adjacent repeats, then drop blanks.
LabelSequence collapse(const Alignment& path);

// Fewest frames that can emit the target: one per label plus one blank
// between each pair of equal neighbours.
int min_frames(const LabelSequence& target);

struct LossResult {
  // +inf when the target cannot be emitted in T frames.
  double loss = 0.0;
  bool reachable = true;
  // d loss / d logprobs, T x K. Zero when unreachable.
  RowMatrix gradient;

  double log_posterior() const { return -loss; }
};

// Negative log posterior of the target, summed over every alignment that
// collapses to it, by log-space forward-backward over the 2L+1 lattice.
LossResult ctc_loss(const LogProbs& logprobs, const LabelSequence& target);

// The posterior by explicit enumeration of all K^T paths. Test oracle;
// refuses T > 10 or K > 5.
double brute_force_posterior(const LogProbs& logprobs, const LabelSequence& target);

// collapse(argmax per frame); ties go to the lowest index.
LabelSequence greedy_decode(const LogProbs& logprobs);

// Prefix beam search. The final pick rescores the surviving prefixes and
// the greedy hypothesis by exact posterior, so the result never scores
// below greedy decoding.
LabelSequence beam_decode(const LogProbs& logprobs, int beam_width);

}  // namespace avsr::ctc
