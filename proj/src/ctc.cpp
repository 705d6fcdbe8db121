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

#include "avsr/ctc.hpp"

#include <algorithm>
#include <map>

namespace avsr::ctc {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_target(const LogProbs& logprobs, const LabelSequence& target) {
  AVSR_REQUIRE(logprobs.rows() >= 1, "CTC needs at least one frame");
  for (int l : target) {
    AVSR_REQUIRE(l != kBlank, "target contains the blank label");
    AVSR_REQUIRE(l > 0 && l < logprobs.cols(), "target label ", l, " is outside the ",
                 logprobs.cols(), "-unit output");
  }
}

}  // namespace

LabelSequence collapse(const Alignment& path) {
  LabelSequence out;
  int prev = -1;
  for (int a : path) {
    if (a != prev && a != kBlank) out.push_back(a);
    prev = a;
  }
  return out;
}

int min_frames(const LabelSequence& target) {
  int n = static_cast<int>(target.size());
  for (std::size_t i = 1; i < target.size(); ++i) {
    if (target[i] == target[i - 1]) ++n;
  }
  return n;
}

LossResult ctc_loss(const LogProbs& logprobs, const LabelSequence& target) {
  check_target(logprobs, target);
  const auto T = static_cast<int>(logprobs.rows());
  const auto K = static_cast<int>(logprobs.cols());
  LossResult result;
  result.gradient = RowMatrix::Zero(T, K);
  if (min_frames(target) > T) {
    result.loss = std::numeric_limits<double>::infinity();
    result.reachable = false;
    return result;
  }

  const int S = 2 * static_cast<int>(target.size()) + 1;
  std::vector<int> ext(S, kBlank);
  for (std::size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i];
  auto can_skip = [&](int s) { return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2]; };

  RowMatrix alpha = RowMatrix::Constant(T, S, kNegInf);
  RowMatrix beta = RowMatrix::Constant(T, S, kNegInf);
  alpha(0, 0) = logprobs(0, ext[0]);
  if (S > 1) alpha(0, 1) = logprobs(0, ext[1]);
  for (int t = 1; t < T; ++t) {
    for (int s = 0; s < S; ++s) {
      double a = alpha(t - 1, s);
      if (s >= 1) a = log_add(a, alpha(t - 1, s - 1));
      if (can_skip(s)) a = log_add(a, alpha(t - 1, s - 2));
      alpha(t, s) = a == kNegInf ? kNegInf : a + logprobs(t, ext[s]);
    }
  }
  beta(T - 1, S - 1) = logprobs(T - 1, ext[S - 1]);
  if (S > 1) beta(T - 1, S - 2) = logprobs(T - 1, ext[S - 2]);
  for (int t = T - 2; t >= 0; --t) {
    for (int s = 0; s < S; ++s) {
      double b = beta(t + 1, s);
      if (s + 1 < S) b = log_add(b, beta(t + 1, s + 1));
      if (s + 2 < S && can_skip(s + 2)) b = log_add(b, beta(t + 1, s + 2));
      beta(t, s) = b == kNegInf ? kNegInf : b + logprobs(t, ext[s]);
    }
  }

  double log_p = alpha(T - 1, S - 1);
  if (S > 1) log_p = log_add(log_p, alpha(T - 1, S - 2));
  if (log_p == kNegInf) {
    result.loss = std::numeric_limits<double>::infinity();
    result.reachable = false;
    return result;
  }
  result.loss = -log_p;

  // Both alpha and beta include the emission at t, hence the subtraction.
  for (int t = 0; t < T; ++t) {
    for (int s = 0; s < S; ++s) {
      if (alpha(t, s) == kNegInf || beta(t, s) == kNegInf) continue;
      const double occ = alpha(t, s) + beta(t, s) - logprobs(t, ext[s]) - log_p;
      result.gradient(t, ext[s]) -= std::exp(occ);
    }
  }
  return result;
}

double brute_force_posterior(const LogProbs& logprobs, const LabelSequence& target) {
  check_target(logprobs, target);
  const auto T = static_cast<int>(logprobs.rows());
  const auto K = static_cast<int>(logprobs.cols());
  AVSR_REQUIRE(T <= 10 && K <= 5, "brute-force enumeration limited to T <= 10 and K <= 5 (got T=",
               T, ", K=", K, ")");
  Alignment path(T, 0);
  double total = 0.0;
  while (true) {
    if (collapse(path) == target) {
      double lp = 0.0;
      for (int t = 0; t < T; ++t) lp += logprobs(t, path[t]);
      total += std::exp(lp);
    }
    int t = T - 1;
    while (t >= 0 && path[t] == K - 1) path[t--] = 0;
    if (t < 0) break;
    ++path[t];
  }
  return total;
}

LabelSequence greedy_decode(const LogProbs& logprobs) {
  Alignment path(logprobs.rows());
  for (Eigen::Index t = 0; t < logprobs.rows(); ++t) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < logprobs.cols(); ++k) {
      if (logprobs(t, k) > logprobs(t, best)) best = k;
    }
    path[t] = static_cast<int>(best);
  }
  return collapse(path);
}

LabelSequence beam_decode(const LogProbs& logprobs, int beam_width) {
  AVSR_REQUIRE(beam_width >= 1, "beam width must be at least 1, got ", beam_width);
  struct Score {
    double blank = kNegInf;
    double label = kNegInf;
    double total() const { return log_add(blank, label); }
  };
  using Beam = std::map<LabelSequence, Score>;
  const auto T = logprobs.rows();
  const auto K = static_cast<int>(logprobs.cols());

  auto prune = [&](const Beam& beam) {
    std::vector<std::pair<LabelSequence, Score>> items(beam.begin(), beam.end());
    // std::map order makes ties resolve towards the lexicographically
    // smaller prefix.
    std::stable_sort(items.begin(), items.end(),
                     [](const auto& a, const auto& b) { return a.second.total() > b.second.total(); });
    if (items.size() > static_cast<std::size_t>(beam_width)) items.resize(beam_width);
    return items;
  };

  std::vector<std::pair<LabelSequence, Score>> beam = {{LabelSequence{}, Score{0.0, kNegInf}}};
  for (Eigen::Index t = 0; t < T; ++t) {
    Beam next;
    for (const auto& [prefix, score] : beam) {
      const double stay = score.total();
      auto& same = next[prefix];
      same.blank = log_add(same.blank, stay + logprobs(t, kBlank));
      const int last = prefix.empty() ? -1 : prefix.back();
      if (last >= 0) same.label = log_add(same.label, score.label + logprobs(t, last));
      for (int k = 1; k < K; ++k) {
        const double p = logprobs(t, k);
        if (p == kNegInf) continue;
        LabelSequence ext = prefix;
        ext.push_back(k);
        auto& grown = next[ext];
        // A repeated label only extends the prefix across a blank.
        grown.label = log_add(grown.label, (k == last ? score.blank : stay) + p);
      }
    }
    beam = prune(next);
  }

  LabelSequence best = greedy_decode(logprobs);
  double best_score = ctc_loss(logprobs, best).log_posterior();
  for (const auto& [prefix, score] : beam) {
    const double s = ctc_loss(logprobs, prefix).log_posterior();
    if (s > best_score) {
      best = prefix;
      best_score = s;
    }
  }
  return best;
}

}  // namespace avsr::ctc
