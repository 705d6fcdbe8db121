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

#include <cmath>
#include <map>

#include <gtest/gtest.h>

#include "avsr/ctc.hpp"

namespace avsr::ctc {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

LogProbs random_logprobs(Rng& rng, int T, int K, double scale = 2.0) {
  LogProbs lp(T, K);
  for (int t = 0; t < T; ++t) {
    double mx = kNegInf;
    for (int k = 0; k < K; ++k) {
      lp(t, k) = scale * rng.normal();
      mx = std::max(mx, lp(t, k));
    }
    double s = 0;
    for (int k = 0; k < K; ++k) s += std::exp(lp(t, k) - mx);
    lp.row(t).array() -= mx + std::log(s);
  }
  return lp;
}

LabelSequence random_target(Rng& rng, int K, int max_len) {
  LabelSequence y(rng.uniform_int(max_len + 1));
  for (auto& l : y) l = 1 + static_cast<int>(rng.uniform_int(K - 1));
  return y;
}

// Local enumeration: posterior of every label sequence, keyed by sequence.
std::map<LabelSequence, double> all_posteriors(const LogProbs& lp) {
  const auto T = static_cast<int>(lp.rows()), K = static_cast<int>(lp.cols());
  std::map<LabelSequence, double> out;
  std::vector<int> path(T, 0);
  while (true) {
    LabelSequence y;
    int prev = -1;
    double logp = 0;
    for (int t = 0; t < T; ++t) {
      if (path[t] != 0 && path[t] != prev) y.push_back(path[t]);
      prev = path[t];
      logp += lp(t, path[t]);
    }
    out[y] += std::exp(logp);
    int t = T - 1;
    while (t >= 0 && path[t] == K - 1) path[t--] = 0;
    if (t < 0) break;
    ++path[t];
  }
  return out;
}

double posterior(const LogProbs& lp, const LabelSequence& y) { return std::exp(ctc_loss(lp, y).log_posterior()); }

TEST(Collapse, MergesRepeatsThenDropsBlanks) {
  EXPECT_EQ(collapse({1, 1, 0, 1}), (LabelSequence{1, 1}));
  EXPECT_EQ(collapse({0, 0, 0}), LabelSequence{});
  EXPECT_EQ(collapse({1, 0, 1}), (LabelSequence{1, 1}));
  EXPECT_EQ(collapse({1, 1}), (LabelSequence{1}));
}

TEST(Collapse, IdempotentOnBlankFreeOutput) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    Alignment a(rng.uniform_int(12));
    for (auto& v : a) v = static_cast<int>(rng.uniform_int(4));
    const auto once = collapse(a);
    // Re-collapsing a blank-free string only changes it where the first
    // pass produced adjacent repeats, which a blank-separated pair yields.
    Alignment spaced;
    for (int l : once) {
      spaced.push_back(l);
      spaced.push_back(0);
    }
    EXPECT_EQ(collapse(spaced), once);
  }
}

TEST(CtcLoss, SingleFrameSingleAlignment) {
  LogProbs lp(1, 2);
  lp << std::log(0.4), std::log(0.6);
  EXPECT_NEAR(ctc_loss(lp, {1}).loss, -std::log(0.6), 1e-12);
  EXPECT_NEAR(ctc_loss(lp, {1}).loss, 0.5108, 1e-4);
}

TEST(CtcLoss, TwoFramesUniform) {
  LogProbs lp = LogProbs::Constant(2, 2, std::log(0.5));
  // aa, a-, -a out of four paths.
  EXPECT_NEAR(ctc_loss(lp, {1}).loss, -std::log(0.75), 1e-12);
  EXPECT_NEAR(ctc_loss(lp, {1}).loss, 0.2877, 1e-4);
}

TEST(CtcLoss, RepeatNeedsSeparatingBlank) {
  LogProbs lp = LogProbs::Constant(2, 2, std::log(0.5));
  const auto r = ctc_loss(lp, {1, 1});
  EXPECT_FALSE(r.reachable);
  EXPECT_TRUE(std::isinf(r.loss) && r.loss > 0);
  EXPECT_EQ(r.gradient.cwiseAbs().sum(), 0.0);
  LogProbs lp3 = LogProbs::Constant(3, 2, std::log(0.5));
  EXPECT_NEAR(posterior(lp3, {1, 1}), 0.125, 1e-12);
}

TEST(CtcLoss, EmptyTargetIsAllBlank) {
  Rng rng(5);
  const auto lp = random_logprobs(rng, 3, 4);
  EXPECT_NEAR(ctc_loss(lp, {}).log_posterior(), lp(0, 0) + lp(1, 0) + lp(2, 0), 1e-12);
}

TEST(CtcLoss, RejectsBlankAndOutOfRangeLabels) {
  LogProbs lp = LogProbs::Constant(3, 3, std::log(1.0 / 3));
  EXPECT_THROW(ctc_loss(lp, {0}), PreconditionError);
  EXPECT_THROW(ctc_loss(lp, {3}), PreconditionError);
}

TEST(CtcLoss, MatchesEnumerationOnRandomInstances) {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const int T = 1 + static_cast<int>(rng.uniform_int(8));
    const int K = 2 + static_cast<int>(rng.uniform_int(3));
    const auto lp = random_logprobs(rng, T, K);
    const auto y = random_target(rng, K, 3);
    const double brute = brute_force_posterior(lp, y);
    const auto r = ctc_loss(lp, y);
    if (!r.reachable) {
      EXPECT_EQ(brute, 0.0);
      continue;
    }
    EXPECT_LE(std::abs(std::exp(-r.loss) - brute) / brute, 1e-9) << "T=" << T << " K=" << K;
  }
}

TEST(CtcLoss, PosteriorsSumToOne) {
  Rng rng(12);
  for (int i = 0; i < 50; ++i) {
    const int T = 1 + static_cast<int>(rng.uniform_int(6));
    const int K = 2 + static_cast<int>(rng.uniform_int(2));
    const auto lp = random_logprobs(rng, T, K);
    double total = 0;
    for (const auto& [y, p] : all_posteriors(lp)) total += posterior(lp, y);
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(CtcLoss, GradientMatchesFiniteDifferences) {
  Rng rng(13);
  for (int i = 0; i < 30; ++i) {
    const int T = 2 + static_cast<int>(rng.uniform_int(7));
    const int K = 2 + static_cast<int>(rng.uniform_int(4));
    const auto lp = random_logprobs(rng, T, K);
    const auto y = random_target(rng, K, 3);
    const auto r = ctc_loss(lp, y);
    if (!r.reachable) continue;
    const double h = 1e-6;
    for (int t = 0; t < T; ++t) {
      for (int k = 0; k < K; ++k) {
        LogProbs a = lp, b = lp;
        a(t, k) += h;
        b(t, k) -= h;
        const double fd = (ctc_loss(a, y).loss - ctc_loss(b, y).loss) / (2 * h);
        const double an = r.gradient(t, k);
        EXPECT_LE(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}), 1e-4);
      }
    }
  }
}

TEST(BruteForce, RefusesLargeInstances) {
  LogProbs lp = LogProbs::Constant(11, 2, std::log(0.5));
  EXPECT_THROW(brute_force_posterior(lp, {1}), PreconditionError);
  LogProbs wide = LogProbs::Constant(2, 6, std::log(1.0 / 6));
  EXPECT_THROW(brute_force_posterior(wide, {1}), PreconditionError);
}

LogProbs one_hot_rows(const std::vector<int>& path, int K) {
  LogProbs lp = LogProbs::Constant(static_cast<int>(path.size()), K, std::log(0.01 / (K - 1)));
  for (std::size_t t = 0; t < path.size(); ++t) lp(static_cast<int>(t), path[t]) = std::log(0.99);
  return lp;
}

TEST(Greedy, SpellsOneHotPath) {
  // p l a c e with blanks in between, over the 28-unit charset.
  const std::vector<int> path = {0, 16, 16, 0, 12, 0, 1, 1, 3, 0, 5, 0};
  EXPECT_EQ(greedy_decode(one_hot_rows(path, 28)), (LabelSequence{16, 12, 1, 3, 5}));
  EXPECT_EQ(greedy_decode(one_hot_rows({0, 0, 0}, 28)), LabelSequence{});
}

TEST(Greedy, TiesGoToLowestIndex) {
  LogProbs lp(1, 3);
  lp << std::log(0.2), std::log(0.4), std::log(0.4);
  EXPECT_EQ(greedy_decode(lp), (LabelSequence{1}));
}

TEST(Beam, WidthOneMatchesGreedyOnPeakedRows) {
  Rng rng(21);
  for (int i = 0; i < 100; ++i) {
    std::vector<int> path(1 + rng.uniform_int(10));
    for (auto& a : path) a = static_cast<int>(rng.uniform_int(5));
    const auto lp = one_hot_rows(path, 5);
    EXPECT_EQ(beam_decode(lp, 1), greedy_decode(lp));
    EXPECT_EQ(greedy_decode(lp), collapse(path));
  }
}

TEST(Beam, NeverScoresBelowGreedy) {
  Rng rng(22);
  for (int i = 0; i < 1000; ++i) {
    const int T = 1 + static_cast<int>(rng.uniform_int(6));
    const int K = 2 + static_cast<int>(rng.uniform_int(3));
    const auto lp = random_logprobs(rng, T, K, 1.0);
    const auto g = greedy_decode(lp), b = beam_decode(lp, 1 + static_cast<int>(rng.uniform_int(6)));
    EXPECT_GE(brute_force_posterior(lp, b), brute_force_posterior(lp, g) * (1 - 1e-12));
  }
}

TEST(Beam, FindsBetterLabelSequenceThanBestPath) {
  // Search random 3-frame instances for one where the most probable label
  // sequence differs from the collapse of the most probable path.
  Rng rng(23);
  bool found = false;
  for (int i = 0; i < 5000 && !found; ++i) {
    const auto lp = random_logprobs(rng, 3, 3, 1.0);
    const auto post = all_posteriors(lp);
    LabelSequence best;
    double best_p = -1;
    for (const auto& [y, p] : post) {
      if (p > best_p) {
        best = y;
        best_p = p;
      }
    }
    const auto g = greedy_decode(lp);
    if (g == best || post.at(g) >= best_p * (1 - 1e-9)) continue;
    found = true;
    EXPECT_EQ(beam_decode(lp, 4), best);
    EXPECT_NE(g, best);
  }
  EXPECT_TRUE(found);
}

TEST(Decoders, AppendingCertainBlankChangesNothing) {
  Rng rng(24);
  for (int i = 0; i < 200; ++i) {
    const int T = 1 + static_cast<int>(rng.uniform_int(8));
    const auto lp = random_logprobs(rng, T, 4);
    LogProbs ext(T + 1, 4);
    ext.topRows(T) = lp;
    ext.row(T).setConstant(kNegInf);
    ext(T, 0) = 0.0;
    EXPECT_EQ(greedy_decode(ext), greedy_decode(lp));
    EXPECT_EQ(beam_decode(ext, 4), beam_decode(lp, 4));
  }
}

TEST(Beam, RejectsZeroWidth) {
  LogProbs lp = LogProbs::Constant(2, 2, std::log(0.5));
  EXPECT_THROW(beam_decode(lp, 0), PreconditionError);
}

}  // namespace
}  // namespace avsr::ctc
