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
#include <map>
#include <sstream>

#include <gtest/gtest.h>

#include "support/world.hpp"

namespace avsr {
namespace {

namespace fs = std::filesystem;
using testing::make_world;
using testing::World;

const World& world() {
  static const World w = make_world(2, 3, {3, 2, 1});
  return w;
}

ModelConfig small_config() {
  ModelConfig c = ModelConfig::tiny();
  c.gru_cells = 6;
  c.gru_layers = 1;
  return c;
}

TrainSchedule quick(Phase p, int epochs = 2) {
  TrainSchedule s = TrainSchedule::standard(p);
  s.epochs = epochs;
  s.batch_size = 2;
  s.learning_rate = 3e-3;
  s.seed = 5;
  return s;
}

fs::path temp_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("avsr_training_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::map<std::string, Tensor> values_with_prefix(AvsrModel& m, const std::string& prefix) {
  std::map<std::string, Tensor> out;
  for (auto* p : m.params_with_prefix(prefix)) out[p->name] = p->value;
  return out;
}

TEST(Schedule, StandardDefaults) {
  const auto a = TrainSchedule::standard(Phase::audio);
  EXPECT_EQ(a.learning_rate, 1e-3);
  EXPECT_EQ(a.batch_size, 64);
  EXPECT_EQ(a.epochs, 400);
  const auto v = TrainSchedule::standard(Phase::visual);
  EXPECT_EQ(v.learning_rate, 3e-4);
  EXPECT_EQ(v.batch_size, 10);
  EXPECT_EQ(v.epochs, 120);
  const auto f = TrainSchedule::standard(Phase::fusion);
  EXPECT_EQ(f.epochs, 100);
  EXPECT_GT(f.early_stop_patience, 0);
  EXPECT_EQ(TrainSchedule::standard(Phase::finetune).epochs, 40);
  EXPECT_EQ(a.adam.beta1, 0.9);
  EXPECT_EQ(a.adam.beta2, 0.999);
  EXPECT_EQ(a.adam.eps, 1e-8);
  EXPECT_EQ(a.clip_norm, 5.0);
}

TEST(Schedule, JsonRoundTripAndPartialOverride) {
  TrainSchedule s = quick(Phase::visual, 7);
  s.lr_decay = 0.25;
  nlohmann::json j = s;
  const auto back = j.get<TrainSchedule>();
  EXPECT_EQ(nlohmann::json(back), j);
  const auto partial = nlohmann::json{{"phase", "audio"}, {"epochs", 3}}.get<TrainSchedule>();
  EXPECT_EQ(partial.epochs, 3);
  EXPECT_EQ(partial.batch_size, 64);
  EXPECT_THROW((nlohmann::json{{"phase", "audio"}, {"batch_size", 0}}.get<TrainSchedule>()), PreconditionError);
  EXPECT_THROW((nlohmann::json{{"phase", "audio"}, {"optimizer", {{"name", "sgd"}}}}.get<TrainSchedule>()),
               PreconditionError);
}

TEST(Phases, ModalitiesAndPrefixes) {
  EXPECT_EQ(phase_modality(Phase::audio), Modality::A);
  EXPECT_EQ(phase_modality(Phase::visual), Modality::V);
  EXPECT_EQ(phase_modality(Phase::fusion), Modality::AV);
  EXPECT_EQ(phase_trainable_prefixes(Phase::fusion), std::vector<std::string>{"head."});
  EXPECT_EQ(parse_phase("finetune"), Phase::finetune);
  EXPECT_THROW(parse_phase("warmup"), PreconditionError);
}

TEST(SnrModes, ParseAndValidationLevel) {
  EXPECT_EQ(SnrMode::parse("augmented"), SnrMode::augmented());
  EXPECT_EQ(SnrMode::parse("clean"), SnrMode::clean());
  EXPECT_EQ(SnrMode::clean().to_string(), "clean");
  EXPECT_TRUE(SnrMode::clean().validation_snr().is_clean());
  EXPECT_EQ(SnrMode::parse("specific:-6"), SnrMode::specific(-6));
  EXPECT_EQ(SnrMode::specific(-6).to_string(), "specific:-6");
  EXPECT_THROW(SnrMode::parse("specific:-7"), PreconditionError);
  EXPECT_TRUE(SnrMode::augmented().validation_snr().is_clean());
  EXPECT_EQ(SnrMode::specific(3).validation_snr(), SnrCondition::noisy(3));
  Rng rng(1);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(SnrMode::specific(-15).sample(rng), SnrCondition::noisy(-15));
}

TEST(TrainPhase, RejectsWrongModality) {
  AvsrModel m(small_config(), Modality::V, 1);
  EXPECT_THROW(train_phase(m, world().train_data(), quick(Phase::audio)), PreconditionError);
}

TEST(TrainPhase, AudioLossFallsAndRunIsDeterministic) {
  const auto data = world().train_data(TrainCondition::nl(), SnrMode::specific(6));
  auto sched = quick(Phase::audio, 6);
  AvsrModel a(small_config(), Modality::A, 3), b(small_config(), Modality::A, 3);
  const auto ra = train_phase(a, data, sched);
  const auto rb = train_phase(b, data, sched);
  ASSERT_EQ(ra.history.size(), 6u);
  EXPECT_LT(ra.history.back().train_loss, ra.history.front().train_loss);
  EXPECT_EQ(ra.history, rb.history);
  EXPECT_FALSE(std::isnan(ra.history.front().val_loss));
  EXPECT_EQ(values_with_prefix(a, ""), values_with_prefix(b, ""));
  EXPECT_EQ(ra.best_epoch, rb.best_epoch);
  // The model is left at the best epoch's values.
  for (const auto& [name, t] : ra.best.params) EXPECT_EQ(a.params().at(name).value, t) << name;
}

TEST(TrainPhase, FusionLeavesStreamsBitIdentical) {
  AvsrModel m(small_config(), Modality::AV, 4);
  const auto audio_before = values_with_prefix(m, "audio.");
  const auto visual_before = values_with_prefix(m, "visual.");
  const auto head_before = values_with_prefix(m, "head.");
  train_phase(m, world().train_data(), quick(Phase::fusion, 1));
  EXPECT_EQ(values_with_prefix(m, "audio."), audio_before);
  EXPECT_EQ(values_with_prefix(m, "visual."), visual_before);
  EXPECT_NE(values_with_prefix(m, "head."), head_before);
}

TEST(TrainPhase, AudioPhaseNeverTouchesOtherPrefixes) {
  AvsrModel m(small_config(), Modality::A, 4);
  EXPECT_TRUE(m.params_with_prefix("visual.").empty());
  const auto before = values_with_prefix(m, "audio.block1.conv.");
  train_phase(m, world().train_data(), quick(Phase::audio, 1));
  EXPECT_NE(values_with_prefix(m, "audio.block1.conv."), before);
}

TEST(TrainPhase, ResumeMatchesUninterruptedRun) {
  const auto data = world().train_data();
  const auto dir = temp_dir("resume");
  auto sched = quick(Phase::audio, 4);
  sched.plateau_patience = 1;
  AvsrModel straight(small_config(), Modality::A, 6);
  const auto full = train_phase(straight, data, sched);

  auto first = sched;
  first.epochs = 2;
  AvsrModel part(small_config(), Modality::A, 6);
  PhaseOptions o1;
  o1.last_checkpoint = dir / "last.ckpt";
  train_phase(part, data, first, o1);

  AvsrModel resumed(small_config(), Modality::A, 99);
  PhaseOptions o2;
  o2.resume_from = dir / "last.ckpt";
  const auto rest = train_phase(resumed, data, sched, o2);
  EXPECT_EQ(rest.history, full.history);
  EXPECT_EQ(rest.best_epoch, full.best_epoch);
  EXPECT_EQ(values_with_prefix(resumed, ""), values_with_prefix(straight, ""));
}

TEST(TrainPhase, OnEpochCanStopAndKeepCurrentValues) {
  AvsrModel m(small_config(), Modality::A, 7);
  PhaseOptions o;
  int calls = 0;
  o.on_epoch = [&](const EpochRecord& r, AvsrModel&) {
    ++calls;
    return r.epoch == 2;
  };
  const auto r = train_phase(m, world().train_data(), quick(Phase::audio, 10), o);
  EXPECT_EQ(calls, 2);
  EXPECT_EQ(r.history.size(), 2u);
  EXPECT_EQ(r.best_epoch, 2);
}

TEST(TrainPhase, EarlyStopAfterPatience) {
  AvsrModel m(small_config(), Modality::A, 8);
  auto s = quick(Phase::audio, 30);
  s.learning_rate = 1e-9;  // validation loss barely moves
  s.early_stop_patience = 1;
  const auto r = train_phase(m, world().train_data(), s);
  EXPECT_LT(r.history.size(), 30u);
  EXPECT_TRUE(r.stopped_early);
}

TEST(TrainPhase, NonFiniteLossAborts) {
  AvsrModel m(small_config(), Modality::A, 9);
  m.params().at("head.fc.bias").value[0] = std::nan("");
  EXPECT_THROW(train_phase(m, world().train_data(), quick(Phase::audio, 1)), TrainingError);
}

// Audio cut to two frames: no transcript fits.
class ShortAudio : public MediaSource {
 public:
  explicit ShortAudio(const MediaSource& base) : base_(base) {}
  AudioSignal audio(const UtteranceMeta& u) const override {
    auto a = base_.audio(u);
    a.samples.resize(2 * kSamplesPerFrame);
    return a;
  }
  FrameSequence video(const UtteranceMeta& u) const override { return base_.video(u); }
  LandmarkTrack landmarks(const UtteranceMeta& u) const override { return base_.landmarks(u); }

 private:
  const MediaSource& base_;
};

TEST(TrainPhase, UnreachableTargetsAreSkippedAndLogged) {
  const ShortAudio media(*world().fixture);
  auto data = world().train_data();
  data.media = &media;
  AvsrModel m(small_config(), Modality::A, 10);
  std::ostringstream log;
  PhaseOptions o;
  o.log = &log;
  EXPECT_THROW(train_phase(m, data, quick(Phase::audio, 1), o), TrainingError);
  EXPECT_NE(log.str().find("skip"), std::string::npos);
}

TEST(Pipeline, RunsAllPhasesAndWritesManifest) {
  const auto dir = temp_dir("pipeline");
  PipelineConfig c;
  c.model = small_config();
  c.seed = 11;
  c.audio = quick(Phase::audio, 1);
  c.visual = quick(Phase::visual, 1);
  c.fusion = quick(Phase::fusion, 1);
  c.finetune = quick(Phase::finetune, 1);
  const auto r = run_full_pipeline(c, world().train_data(), dir);
  for (const auto& p : {r.audio_checkpoint, r.visual_checkpoint, r.fusion_checkpoint, r.av_checkpoint}) {
    EXPECT_TRUE(fs::exists(p)) << p;
  }
  EXPECT_FALSE(fs::exists(dir / "audio.last.ckpt"));
  const auto a = load_checkpoint(r.audio_checkpoint);
  const auto v = load_checkpoint(r.visual_checkpoint);
  const auto f = load_checkpoint(r.fusion_checkpoint);
  const auto av = load_checkpoint(r.av_checkpoint);
  EXPECT_EQ(f.modality, Modality::AV);
  EXPECT_EQ(f.meta.at("train_condition"), "NL");
  bool finetune_moved = false;
  for (const auto& [name, t] : f.params) {
    if (name.rfind("audio.", 0) == 0) EXPECT_EQ(*a.find_param(name), t) << name;
    if (name.rfind("visual.", 0) == 0) EXPECT_EQ(*v.find_param(name), t) << name;
    if (name.rfind("audio.", 0) == 0 && !(*av.find_param(name) == t)) finetune_moved = true;
  }
  EXPECT_TRUE(finetune_moved);
  std::ifstream in(r.manifest);
  const auto m = nlohmann::json::parse(in);
  EXPECT_EQ(m.at("manifest_id"), manifest_id(m));
  EXPECT_EQ(m.at("seed"), 11);
  EXPECT_TRUE(m.at("phases").contains("finetune"));
  EXPECT_TRUE(m.at("rms_stats").contains("mean_rms_lombard"));
  EXPECT_EQ(m.at("pipeline").at("schedules").at("audio").at("optimizer").at("beta2"), 0.999);
}

TEST(Pipeline, MissingPrerequisiteNamesThePhase) {
  const auto dir = temp_dir("missing");
  PipelineConfig c;
  c.model = small_config();
  c.phases = {Phase::fusion};
  try {
    run_full_pipeline(c, world().train_data(), dir);
    FAIL() << "expected an error";
  } catch (const PreconditionError& e) {
    EXPECT_NE(std::string(e.what()).find("audio phase"), std::string::npos) << e.what();
  }
}

TEST(Pipeline, ConfigJsonRoundTrip) {
  PipelineConfig c;
  c.condition = TrainCondition::mix(0.25);
  c.snr = SnrMode::specific(-3);
  c.phases = {Phase::audio, Phase::visual};
  c.audio.epochs = 9;
  const nlohmann::json j = c;
  const auto back = j.get<PipelineConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  const auto preset = nlohmann::json{{"model", "full"}}.get<PipelineConfig>();
  EXPECT_EQ(preset.model.gru_cells, ModelConfig::full().gru_cells);
}

TEST(Pipeline, SnrSpecificAudioGivesOneModelPerLevel) {
  const auto dir = temp_dir("specific");
  PipelineConfig c;
  c.model = small_config();
  c.audio = quick(Phase::audio, 1);
  const auto paths = train_snr_specific_audio(c, world().train_data(), dir);
  ASSERT_EQ(paths.size(), kSnrLevelsDb.size());
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const auto ck = load_checkpoint(paths[i]);
    EXPECT_EQ(ck.modality, Modality::A);
    EXPECT_EQ(ck.meta.at("snr_mode"), "specific:" + std::to_string(kSnrLevelsDb[i]));
  }
  EXPECT_TRUE(fs::exists(dir / "run_manifest.json"));
}

TEST(ManifestId, IgnoresItsOwnFieldAndTracksContent) {
  nlohmann::json a = {{"x", 1}};
  nlohmann::json b = a;
  b["manifest_id"] = "whatever";
  EXPECT_EQ(manifest_id(a), manifest_id(b));
  EXPECT_NE(manifest_id(a), manifest_id({{"x", 2}}));
  EXPECT_EQ(manifest_id(a).size(), 16u);
}

}  // namespace
}  // namespace avsr
