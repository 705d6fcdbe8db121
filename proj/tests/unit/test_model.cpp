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
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "avsr/avsr_model.hpp"
#include "avsr/checkpoint.hpp"

namespace avsr {
namespace {

using nn::Tape;

// Narrow enough for exhaustive finite differences.
ModelConfig micro_config() {
  ModelConfig c = ModelConfig::tiny();
  c.name = "micro";
  c.gru_cells = 3;
  c.gru_layers = 2;
  c.audio_channels = {2, 3};
  c.roi_height = 12;
  c.roi_width = 12;
  c.visual_downsample = 1;
  c.visual_front_channels = 2;
  c.visual_stage_widths = {2, 3};
  c.visual_blocks_per_stage = 1;
  return c;
}

std::vector<double> random_wave(Rng& rng, std::size_t n) {
  std::vector<double> w(n);
  for (auto& v : w) v = 0.1 * rng.normal();
  return w;
}

Tensor random_video(Rng& rng, int T, int H, int W) {
  Tensor v({T, H, W});
  for (auto& x : v.values()) x = rng.normal();
  return v;
}

TEST(ModelConfig, FullDefaults) {
  const auto c = ModelConfig::full();
  EXPECT_EQ(c.charset_size, 28);
  EXPECT_EQ(c.gru_cells, 128);
  EXPECT_EQ(c.feature_dim(), 256);
  EXPECT_EQ(c.audio_kernels.front(), 5 * 16);  // 5 ms at 16 kHz
  EXPECT_EQ(c.audio_strides.front(), 4);       // 0.25 ms
  EXPECT_EQ(c.audio_channels.size(), 5u);
  EXPECT_EQ(c.visual_temporal_kernel, 5);
  EXPECT_EQ(c.audio_pool_window(), 10);
  EXPECT_EQ(kSampleRate / c.audio_rate_divisor(), 250);
  EXPECT_EQ(ModelConfig::tiny().audio_channels.size(), 2u);
  EXPECT_EQ(ModelConfig::tiny().gru_cells, 16);
}

TEST(ModelConfig, JsonRoundTripAndPartialOverride) {
  const auto c = micro_config();
  nlohmann::json j = c;
  EXPECT_EQ(j.get<ModelConfig>(), c);
  const auto o = nlohmann::json{{"name", "tiny"}, {"gru_cells", 8}}.get<ModelConfig>();
  EXPECT_EQ(o.gru_cells, 8);
  EXPECT_EQ(o.audio_channels, ModelConfig::tiny().audio_channels);
  EXPECT_THROW((nlohmann::json{{"audio_strides", {3, 2, 2, 2, 2}}}.get<ModelConfig>()), PreconditionError);
}

TEST(AudioStream, FullConfigOneSecondGives25By256) {
  AvsrModel m(ModelConfig::full(), Modality::A, 1);
  Rng rng(1);
  Tape tape;
  const auto f = m.audio_stream(tape, random_wave(rng, 16000), {});
  EXPECT_EQ(tape.value(f).shape(), (std::vector<int>{25, 256}));
}

TEST(AudioStream, FrameCountIsFloorOfSamplesOver640) {
  AvsrModel m(ModelConfig::tiny(), Modality::A, 2);
  Rng rng(2);
  for (auto [n, t] : std::vector<std::pair<int, int>>{{16000, 25}, {32000, 50}, {640, 1}, {1279, 1}, {6500, 10}}) {
    Tape tape;
    const auto f = m.audio_stream(tape, random_wave(rng, n), {});
    EXPECT_EQ(tape.value(f).dim(0), t) << n;
    EXPECT_EQ(tape.value(f).dim(1), 32);
  }
  Tape tape;
  EXPECT_THROW(m.audio_stream(tape, random_wave(rng, 639), {}), PreconditionError);
}

TEST(VisualStream, PreservesFrameCount) {
  AvsrModel m(ModelConfig::tiny(), Modality::V, 3);
  Rng rng(3);
  Tape tape;
  const auto f = m.visual_stream(tape, random_video(rng, 25, 190, 130), {});
  EXPECT_EQ(tape.value(f).shape(), (std::vector<int>{25, 32}));
  Tape t2;
  EXPECT_THROW(m.visual_stream(t2, random_video(rng, 5, 60, 80), {}), PreconditionError);
}

TEST(VisualStream, TrunkReceptiveFieldIsFiveFrames) {
  AvsrModel m(micro_config(), Modality::V, 4);
  Rng rng(4);
  const Tensor a = random_video(rng, 25, 12, 12);
  Tensor b = a;
  for (int i = 0; i < 144; ++i) b[10 * 144 + i] += 1.0 + rng.uniform();
  Tape ta, tb;
  const auto fa = m.visual_trunk(ta, a, {});
  const auto fb = m.visual_trunk(tb, b, {});
  const auto ma = ta.value(fa).matrix(), mb = tb.value(fb).matrix();
  for (int t = 0; t < 25; ++t) {
    const bool differs = (ma.row(t) - mb.row(t)).cwiseAbs().maxCoeff() > 0;
    EXPECT_EQ(differs, t >= 8 && t <= 12) << "frame " << t;
  }
  // The recurrent layers spread the change to every frame.
  Tape sa, sb;
  const auto ga = sa.value(m.visual_stream(sa, a, {})).matrix();
  const auto gb = sb.value(m.visual_stream(sb, b, {})).matrix();
  for (int t = 0; t < 25; ++t) EXPECT_GT((ga.row(t) - gb.row(t)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(VisualStream, ZeroInputGivesZeroTrunk) {
  AvsrModel m(micro_config(), Modality::V, 5);
  Tape tape;
  const auto f = m.visual_trunk(tape, Tensor({7, 12, 12}), {});
  EXPECT_EQ(tape.value(f).vec().cwiseAbs().maxCoeff(), 0.0);
}

TEST(FusionHead, RowsAreLogDistributions) {
  AvsrModel m(micro_config(), Modality::AV, 6);
  Rng rng(6);
  const auto lp = m.infer({random_wave(rng, 640 * 9), random_video(rng, 9, 12, 12)});
  ASSERT_EQ(lp.rows(), 9);
  ASSERT_EQ(lp.cols(), 28);
  for (int t = 0; t < 9; ++t) EXPECT_NEAR(std::log(lp.row(t).array().exp().sum()), 0.0, 1e-6);
}

TEST(FusionHead, FrameMismatchReportsBothLengths) {
  AvsrModel m(micro_config(), Modality::AV, 7);
  Rng rng(7);
  try {
    m.infer({random_wave(rng, 640 * 26), random_video(rng, 25, 12, 12)});
    FAIL() << "expected a frame-count error";
  } catch (const PreconditionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("26"), std::string::npos) << msg;
    EXPECT_NE(msg.find("25"), std::string::npos) << msg;
  }
}

TEST(FusionHead, ZeroFinalLayerIsUniform) {
  AvsrModel m(micro_config(), Modality::A, 8);
  m.params().at("head.fc.weight").value.fill(0.0);
  m.params().at("head.fc.bias").value.fill(0.0);
  Rng rng(8);
  const auto lp = m.infer({random_wave(rng, 640 * 5), {}});
  for (Eigen::Index i = 0; i < lp.size(); ++i) EXPECT_NEAR(lp.data()[i], -std::log(28.0), 1e-12);
  EXPECT_NEAR(-std::log(28.0), -3.3322, 1e-4);
}

TEST(Model, SynchronizedStreamsEmitEqualFrameCounts) {
  ModelConfig c = micro_config();
  AvsrModel m(c, Modality::AV, 9);
  Rng rng(9);
  for (int i = 0; i < 12; ++i) {
    const int T = 5 + static_cast<int>(rng.uniform_int(196));
    Tape tape;
    const auto r = m.forward(tape, {random_wave(rng, 640 * T), random_video(rng, T, 12, 12)}, {});
    EXPECT_EQ(tape.value(r.audio_features).shape(), (std::vector<int>{T, c.feature_dim()}));
    EXPECT_EQ(tape.value(r.visual_features).shape(), (std::vector<int>{T, c.feature_dim()}));
    EXPECT_EQ(tape.value(r.logprobs).dim(0), T);
    const auto lp = tape.value(r.logprobs).matrix();
    for (int t = 0; t < T; ++t) ASSERT_NEAR(std::log(lp.row(t).array().exp().sum()), 0.0, 1e-6);
  }
}

TEST(Model, ForwardIsBitwiseDeterministic) {
  Rng rng(10);
  const ModelInput in{random_wave(rng, 640 * 6), random_video(rng, 6, 12, 12)};
  AvsrModel a(micro_config(), Modality::AV, 10), b(micro_config(), Modality::AV, 10);
  const auto la = a.infer(in);
  EXPECT_TRUE((la.array() == a.infer(in).array()).all());
  EXPECT_TRUE((la.array() == b.infer(in).array()).all());
  AvsrModel c(micro_config(), Modality::AV, 11);
  EXPECT_FALSE((la.array() == c.infer(in).array()).all());
}

TEST(Model, StreamParametersDoNotDependOnModality) {
  AvsrModel av(micro_config(), Modality::AV, 12), a(micro_config(), Modality::A, 12);
  for (auto* p : a.params_with_prefix("audio.")) EXPECT_EQ(p->value, av.params().at(p->name).value);
  EXPECT_TRUE(a.params_with_prefix("visual.").empty());
  EXPECT_NE(av.params().at("head.gru0.fwd.w_ih").value.dim(1), a.params().at("head.gru0.fwd.w_ih").value.dim(1));
}

// Finite-difference check through the whole network and the CTC loss.
TEST(Model, GradientMatchesFiniteDifferences) {
  AvsrModel m(micro_config(), Modality::AV, 13);
  Rng rng(13);
  const ModelInput in{random_wave(rng, 640 * 4), random_video(rng, 4, 12, 12)};
  const ctc::LabelSequence target = {3, 7};
  auto loss = [&](nn::Gradients* g) {
    Tape tape;
    const auto r = m.forward(tape, in, ForwardOptions::train_all());
    const auto l = nn::ctc_loss(tape, r.logprobs, target);
    if (g) {
      tape.backward(l);
      *g = tape.parameter_gradients();
    }
    return tape.value(l)[0];
  };
  nn::Gradients grads;
  loss(&grads);
  int checked = 0;
  double worst = 0;
  for (auto* p : m.params().all()) {
    if (p->is_buffer) continue;
    ASSERT_TRUE(grads.count(p)) << p->name;
    const Tensor& g = grads.at(p);
    // A few elements of every tensor.
    for (int k = 0; k < 3; ++k) {
      const std::size_t i = rng.uniform_int(p->value.size());
      const double o = p->value[i];
      p->value[i] = o + 1e-6;
      const double up = loss(nullptr);
      p->value[i] = o - 1e-6;
      const double dn = loss(nullptr);
      p->value[i] = o;
      const double fd = (up - dn) / 2e-6;
      const double err = std::abs(fd - g[i]) / std::max({std::abs(fd), std::abs(g[i]), 1e-6});
      worst = std::max(worst, err);
      EXPECT_LE(err, 1e-4) << p->name << "[" << i << "] fd=" << fd << " analytic=" << g[i];
      ++checked;
    }
  }
  EXPECT_GT(checked, 100);
  RecordProperty("worst_relative_error", std::to_string(worst));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto dir = std::filesystem::temp_directory_path() / "avsr_test_ckpt";
  std::filesystem::create_directories(dir);
  AvsrModel m(micro_config(), Modality::AV, 14);
  Checkpoint c = snapshot(m, {{"epoch", 3}});
  c.extra.emplace_back("adam.step", Tensor({1}, 7.0));
  save_checkpoint(dir / "m.ckpt", c);
  const auto r = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(r.config, m.config());
  EXPECT_EQ(r.modality, Modality::AV);
  EXPECT_EQ(r.meta.at("epoch"), 3);
  ASSERT_EQ(r.params.size(), c.params.size());
  for (std::size_t i = 0; i < r.params.size(); ++i) {
    EXPECT_EQ(r.params[i].first, c.params[i].first);
    EXPECT_EQ(r.params[i].second, c.params[i].second);
  }
  EXPECT_EQ(r.find_extra("adam.step")->to_vector(), std::vector<double>{7.0});
  Rng rng(14);
  const ModelInput in{random_wave(rng, 640 * 5), random_video(rng, 5, 12, 12)};
  auto loaded = model_from_checkpoint(r);
  EXPECT_TRUE((loaded.infer(in).array() == m.infer(in).array()).all());

  // Stream transfer into a differently seeded AV model.
  AvsrModel other(micro_config(), Modality::AV, 99);
  EXPECT_GT(load_parameters(other, r, "audio."), 0u);
  for (auto* p : other.params_with_prefix("audio.")) EXPECT_EQ(p->value, m.params().at(p->name).value);
  EXPECT_NE(other.params().at("head.fc.weight").value, m.params().at("head.fc.weight").value);

  std::ofstream(dir / "bad.ckpt") << "not a checkpoint";
  EXPECT_THROW(load_checkpoint(dir / "bad.ckpt"), IoError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace avsr
