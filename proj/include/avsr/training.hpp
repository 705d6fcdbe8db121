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

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "avsr/checkpoint.hpp"
#include "avsr/dataset.hpp"

namespace avsr {

class TrainingError : public Error {
 public:
  using Error::Error;
};

enum class Phase { audio, visual, fusion, finetune };
std::string to_string(Phase p);
Phase parse_phase(const std::string& s);
// The model variant a phase trains: A, V, AV, AV.
Modality phase_modality(Phase p);
// Name prefixes of the parameters a phase updates.
std::vector<std::string> phase_trainable_prefixes(Phase p);

// Adam with bias correction.
struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainSchedule {
  Phase phase = Phase::audio;
  double learning_rate = 1e-3;
  int batch_size = 64;
  int epochs = 400;
  AdamConfig adam;
  double clip_norm = 5.0;
  // Learning rate is multiplied by lr_decay after plateau_patience epochs
  // without a validation improvement.
  double lr_decay = 0.5;
  int plateau_patience = 5;
  // Stop after this many epochs without improvement; 0 never stops early.
  int early_stop_patience = 0;
  std::uint64_t seed = 1;

  static TrainSchedule standard(Phase phase);
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainSchedule& s);
void from_json(const nlohmann::json& j, TrainSchedule& s);

// How training noise is chosen. `clean` adds no noise.
struct SnrMode {
  enum class Kind { augmented, specific, clean };
  Kind kind = Kind::augmented;
  int level_db = 0;  // specific only

  static SnrMode augmented() { return {Kind::augmented, 0}; }
  static SnrMode clean() { return {Kind::clean, 0}; }
  static SnrMode specific(int level_db);
  // "augmented", "clean" or "specific:-6"
  static SnrMode parse(const std::string& s);
  std::string to_string() const;
  // The fixed validation condition: the level itself, or clean.
  SnrCondition validation_snr() const;
  SnrCondition sample(Rng& rng) const;

  bool operator==(const SnrMode&) const = default;
};

// Everything a phase reads besides the model.
struct TrainData {
  const Corpus* corpus = nullptr;
  const MediaSource* media = nullptr;
  CorpusSplit split;
  TrainCondition condition = TrainCondition::nl();
  SnrMode snr = SnrMode::augmented();
  RmsStats stats;
  std::shared_ptr<const NoiseBank> noise;
  RoiSpec roi = RoiSpec::frontal();
  LandmarkSet reference;
  RoiPipelineOptions roi_pipeline;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;  // mean over reachable items
  double val_loss = 0.0;    // mean over reachable items, NaN without validation data
  double learning_rate = 0.0;
  int skipped = 0;  // unreachable CTC targets
  double grad_norm = 0.0;  // mean pre-clipping global norm over steps

  // Bitwise on the numbers, so NaN equals NaN.
  bool operator==(const EpochRecord& o) const;
};
void to_json(nlohmann::json& j, const EpochRecord& r);

struct PhaseResult {
  Checkpoint best;  // best validation loss (training loss without validation data)
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_metric = 0.0;
  bool stopped_early = false;
};

struct PhaseOptions {
  // Written after every epoch with optimizer state, for resume.
  std::optional<std::filesystem::path> last_checkpoint;
  // Continue from a `last_checkpoint` file of an interrupted run.
  std::optional<std::filesystem::path> resume_from;
  // Called after each epoch; returning true ends the phase.
  std::function<bool(const EpochRecord&, AvsrModel&)> on_epoch;
  std::ostream* log = nullptr;
};

// Trains the parameters of schedule.phase and leaves the model holding the
// best checkpoint's values. Parameters outside the phase are untouched.
PhaseResult train_phase(AvsrModel& model, const TrainData& data, const TrainSchedule& schedule,
                        const PhaseOptions& options = {});

// Mean CTC loss over the items in evaluation mode; NaN for an empty list.
double evaluate_loss(AvsrModel& model, const SampleBuilder& builder, const std::vector<SampleSpec>& items,
                     const SnrCondition& snr, std::uint64_t noise_seed);

// ---------------------------------------------------------------------------
// Pipeline

struct PipelineConfig {
  ModelConfig model = ModelConfig::tiny();
  TrainCondition condition = TrainCondition::nl();
  SnrMode snr = SnrMode::augmented();
  NoiseSpec noise;
  std::uint64_t seed = 1;
  TrainSchedule audio = TrainSchedule::standard(Phase::audio);
  TrainSchedule visual = TrainSchedule::standard(Phase::visual);
  TrainSchedule fusion = TrainSchedule::standard(Phase::fusion);
  TrainSchedule finetune = TrainSchedule::standard(Phase::finetune);
  std::vector<Phase> phases = {Phase::audio, Phase::visual, Phase::fusion, Phase::finetune};
};

void to_json(nlohmann::json& j, const PipelineConfig& c);
void from_json(const nlohmann::json& j, PipelineConfig& c);

struct PipelineResult {
  std::filesystem::path audio_checkpoint;    // A
  std::filesystem::path visual_checkpoint;   // V
  std::filesystem::path fusion_checkpoint;   // AV before fine-tuning
  std::filesystem::path av_checkpoint;       // AV after fine-tuning
  std::filesystem::path manifest;
  nlohmann::json manifest_json;
};

// Runs the requested phases in order, writing <phase>.ckpt files and
// run_manifest.json into out_dir. A phase whose prerequisite checkpoint
// is neither produced earlier nor present in out_dir is an error.
PipelineResult run_full_pipeline(const PipelineConfig& config, const TrainData& data,
                                 const std::filesystem::path& out_dir, std::ostream* log = nullptr);

// One audio-only model per noise level, each trained at that level only.
std::vector<std::filesystem::path> train_snr_specific_audio(const PipelineConfig& config, const TrainData& data,
                                                            const std::filesystem::path& out_dir,
                                                            std::ostream* log = nullptr);

// Stable short identifier of a manifest's content.
std::string manifest_id(const nlohmann::json& manifest);

}  // namespace avsr
