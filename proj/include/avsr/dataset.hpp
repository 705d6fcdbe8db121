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

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "avsr/audio_dsp.hpp"
#include "avsr/avsr_model.hpp"
#include "avsr/corpus.hpp"
#include "avsr/video_pipeline.hpp"

// Turns corpus utterances into model-ready samples: level treatment,
// noise at a requested SNR, mouth ROIs with augmentation, and targets.
namespace avsr {

// Speech a model is trained on. mix(f) is plain speech plus Lombard
// utterances amounting to a fraction f of the plain count.
struct TrainCondition {
  enum class Kind { NL, L, CL, mix };
  Kind kind = Kind::NL;
  double fraction = 0.0;  // mix only

  static TrainCondition nl() { return {Kind::NL, 0.0}; }
  static TrainCondition lombard() { return {Kind::L, 0.0}; }
  static TrainCondition cl() { return {Kind::CL, 0.0}; }
  static TrainCondition mix(double fraction);

  // "NL", "L", "CL", "mix:0.25"
  static TrainCondition parse(const std::string& s);
  std::string to_string() const;
  // As written in result labels: NL, L, CL, (NL), (NL,0.25L), (NL,L).
  std::string label() const;
  static TrainCondition parse_label(const std::string& s);

  bool operator==(const TrainCondition&) const = default;
  auto operator<=>(const TrainCondition&) const = default;
};

// One training or evaluation item: which recording and how to treat it.
struct SampleSpec {
  std::string utt_id;
  SpeechCondition treatment = SpeechCondition::NL;
};

// Training items from split.train for the condition. Lombard recordings
// get the L treatment except under CL.
std::vector<SampleSpec> select_train(const CorpusSplit& split, const Corpus& corpus, const TrainCondition& cond,
                                     Rng& rng);
// Validation items: the same rule over split.val, without subsampling.
std::vector<SampleSpec> select_val(const CorpusSplit& split, const Corpus& corpus, const TrainCondition& cond);
// Test items for an evaluation condition: NL recordings for NL, Lombard
// recordings for L and CL.
std::vector<SampleSpec> select_test(const std::vector<std::string>& ids, const Corpus& corpus,
                                    SpeechCondition test_condition);

struct Sample {
  std::string utt_id;
  SpeechCondition treatment = SpeechCondition::NL;
  SnrCondition snr = SnrCondition::clean();
  Sentence words;
  std::vector<int> target;  // charset indices of the transcript
  int frames = 0;
  ModelInput input;
};

struct SampleOptions {
  bool audio = true;
  bool video = true;
  RoiSpec roi = RoiSpec::frontal();
  RoiPipelineOptions roi_pipeline;
};

// Caches raw audio and uncropped mouth-ROI sequences per utterance. Safe
// for concurrent build() calls.
class SampleBuilder {
 public:
  SampleBuilder(const Corpus& corpus, const MediaSource& media, LandmarkSet reference, RmsStats stats,
                std::shared_ptr<const NoiseBank> noise, SampleOptions options);

  // Noise for noisy conditions comes from `region` of the noise bank;
  // `rng` drives the noise offset and, in train mode, crop and flip.
  Sample build(const SampleSpec& spec, const SnrCondition& snr, AugmentMode mode, NoiseBank::Region region,
               Rng& rng) const;

  const RmsStats& stats() const { return stats_; }
  const SampleOptions& options() const { return options_; }
  const Corpus& corpus() const { return corpus_; }

  // The unprocessed recording, and its box-sized mouth ROIs. ROIs are
  // cached as 8-bit intensities.
  const AudioSignal& raw_audio(const std::string& utt_id) const;
  FrameSequence raw_rois(const std::string& utt_id) const;

 private:
  const Corpus& corpus_;
  const MediaSource& media_;
  LandmarkSet reference_;
  RmsStats stats_;
  std::shared_ptr<const NoiseBank> noise_;
  SampleOptions options_;
  mutable std::mutex mu_;
  mutable std::map<std::string, std::shared_ptr<const AudioSignal>> audio_cache_;
  struct CompactRois {
    int height = 0, width = 0, frames = 0;
    std::vector<std::uint8_t> pixels;
  };
  const CompactRois& compact_rois(const std::string& utt_id) const;
  mutable std::map<std::string, std::shared_ptr<const CompactRois>> roi_cache_;
};

// Corpus-average raw RMS of the Lombard and plain recordings among `ids`.
RmsStats compute_rms_stats(const Corpus& corpus, const MediaSource& media, const std::vector<std::string>& ids);

// Seed for evaluation noise, shared by every model tested on the same
// utterance at the same level.
std::uint64_t eval_noise_seed(const std::string& utt_id, const SnrCondition& snr, std::uint64_t base_seed);

}  // namespace avsr
