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

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "avsr/common.hpp"
#include "avsr/media.hpp"

namespace avsr {

// ---------------------------------------------------------------------------
// Sentence grammar and transcript charset

using Sentence = std::vector<std::string>;

struct GrammarSlot {
  std::string name;
  std::vector<std::string> words;
};

// Six ordered slots: command(4) colour(4) preposition(4) letter(25)
// digit(10) adverb(4).
class SentenceGrammar {
 public:
  static constexpr std::size_t kSlotCount = 6;

  // The standard grid vocabulary.
  static SentenceGrammar grid();
  explicit SentenceGrammar(std::array<GrammarSlot, kSlotCount> slots);

  const std::array<GrammarSlot, kSlotCount>& slots() const { return slots_; }
  std::uint64_t sentence_count() const;

  Sentence sentence_at(const std::array<std::size_t, kSlotCount>& indices) const;
  // Slot indices of a sentence, or nullopt if any word is out of grammar.
  std::optional<std::array<std::size_t, kSlotCount>> parse(const Sentence& words) const;

 private:
  std::array<GrammarSlot, kSlotCount> slots_;
};

Sentence generate_sentence(const SentenceGrammar& grammar, Rng& rng);

// Output units: 0 = CTC blank, 1..26 = 'a'..'z', 27 = space.
struct Charset {
  static constexpr int kBlank = 0;
  static constexpr int kSpace = 27;
  static constexpr int kSize = 28;

  static int index_of(char c);    // throws for characters outside the set
  static char char_of(int index);  // throws for blank or out-of-range
  static std::vector<int> encode(const std::string& text);
  static std::string decode(const std::vector<int>& labels);
};

// Words joined by single spaces. Letters are single characters and digits
// are spelled out, e.g. "place red at l nine now".
std::string transcript(const Sentence& words);
std::vector<std::string> split_words(const std::string& text);

// ---------------------------------------------------------------------------
// Utterances and corpora

enum class Gender { female, male };
enum class Condition { L, NL };
enum class View { frontal, profile };

std::string to_string(Gender g);
std::string to_string(Condition c);
std::string to_string(View v);
Gender parse_gender(const std::string& s);
Condition parse_condition(const std::string& s);
View parse_view(const std::string& s);

struct UtteranceMeta {
  std::string id;
  std::string speaker_id;
  Gender gender = Gender::female;
  Condition condition = Condition::NL;
  View view = View::frontal;
  Sentence words;
  std::string audio_ref;
  std::string video_ref;
  std::string landmarks_ref;

  bool operator==(const UtteranceMeta&) const = default;
};

struct SpeakerInfo {
  std::string id;
  Gender gender;
};

class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(SentenceGrammar grammar) : grammar_(std::move(grammar)) {}

  // Validates the utterance against the grammar and uniqueness invariants.
  void add(UtteranceMeta utt);

  const std::vector<UtteranceMeta>& utterances() const { return utts_; }
  std::size_t size() const { return utts_.size(); }
  const UtteranceMeta& at(const std::string& id) const;
  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  // Speakers in first-appearance order.
  std::vector<SpeakerInfo> speakers() const;
  std::vector<std::string> utterances_of(const std::string& speaker_id) const;
  const SentenceGrammar& grammar() const { return grammar_; }

 private:
  SentenceGrammar grammar_ = SentenceGrammar::grid();
  std::vector<UtteranceMeta> utts_;
  std::unordered_map<std::string, std::size_t> index_;
  std::map<std::string, std::string> sentence_keys_;  // speaker|cond|sentence -> id
};

// One JSON object per line: id, speaker, gender, condition, view, words,
// audio, video, landmarks. Media paths are relative to the manifest.
void write_manifest(const std::filesystem::path& path, const Corpus& corpus);
Corpus read_manifest(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Splits

enum class SplitProtocol { multi_speaker, subject_independent };
std::string to_string(SplitProtocol p);
SplitProtocol parse_protocol(const std::string& s);

struct SplitCounts {
  int train = 0;
  int val = 0;
  int test = 0;
};

struct CorpusSplit {
  SplitProtocol protocol = SplitProtocol::multi_speaker;
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
  // Lombard count / plain count in train.
  double lombard_fraction = 0.0;

  bool operator==(const CorpusSplit&) const = default;
};

// Per speaker, `counts` utterances go to each part. Within a speaker the
// draw is stratified by condition so that parts stay as balanced as the
// counts allow.
CorpusSplit make_multi_speaker_split(const Corpus& corpus, SplitCounts counts, Rng& rng);

// Speaker-disjoint split. With gender_balanced, val and test each hold
// equal numbers of female and male speakers.
CorpusSplit make_subject_independent_split(const Corpus& corpus, SplitCounts speaker_counts,
                                           bool gender_balanced, Rng& rng);

// Keeps every NL training utterance and adds round(fraction * |NL train|)
// randomly chosen Lombard training utterances. val/test are untouched.
CorpusSplit mix_lombard_fraction(const CorpusSplit& split, const Corpus& corpus, double fraction,
                                 Rng& rng);

// Throws if the split's disjointness invariants do not hold.
void validate_split(const CorpusSplit& split, const Corpus& corpus);

void write_split(const std::filesystem::path& path, const CorpusSplit& split);
CorpusSplit read_split(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Media access

class MediaSource {
 public:
  virtual ~MediaSource() = default;
  virtual AudioSignal audio(const UtteranceMeta& utt) const = 0;
  virtual FrameSequence video(const UtteranceMeta& utt) const = 0;
  virtual LandmarkTrack landmarks(const UtteranceMeta& utt) const = 0;
};

// Reads media files named by the manifest, relative to `root`.
class DiskMediaSource : public MediaSource {
 public:
  explicit DiskMediaSource(std::filesystem::path root) : root_(std::move(root)) {}
  AudioSignal audio(const UtteranceMeta& utt) const override;
  FrameSequence video(const UtteranceMeta& utt) const override;
  LandmarkTrack landmarks(const UtteranceMeta& utt) const override;

 private:
  std::filesystem::path root_;
};

// ---------------------------------------------------------------------------
// Synthetic fixture corpus

struct FixtureOptions {
  int frames_per_char = 2;
  // Lombard vowels are held this many extra frames.
  int lombard_vowel_extra_frames = 1;
  int lead_frames = 3;
  int tail_frames = 3;
  // Raw Lombard level relative to plain speech, before any normalization.
  double lombard_gain = 1.8;
  // Upward shift of the tone partials under the Lombard condition.
  double lombard_freq_shift = 1.06;
  // Extra gain on the upper partials under the Lombard condition.
  double lombard_tilt = 2.0;
  // Lombard mouth opening scale (hyper-articulation).
  double lombard_mouth_scale = 1.3;
  View view = View::frontal;
  int frame_height = 300;
  int frame_width = 224;
};

// Generates media on demand from (seed, utterance id); no media is held in
// memory. Every call for the same utterance returns identical data.
class FixtureCorpus : public MediaSource {
 public:
  FixtureCorpus(Corpus corpus, FixtureOptions options, std::uint64_t seed);

  const Corpus& corpus() const { return corpus_; }
  const FixtureOptions& options() const { return options_; }
  std::uint64_t seed() const { return seed_; }

  AudioSignal audio(const UtteranceMeta& utt) const override;
  FrameSequence video(const UtteranceMeta& utt) const override;
  LandmarkTrack landmarks(const UtteranceMeta& utt) const override;

  // The head-pose-free landmark layout the renderer draws from.
  static LandmarkSet reference_landmarks(const FixtureOptions& options);

  // Audio frame count T; the waveform is exactly 640 * T samples.
  int frame_count(const UtteranceMeta& utt) const;

  // Writes manifest.jsonl plus audio/, video/ and landmarks/ under dir.
  void write(const std::filesystem::path& dir) const;

 private:
  struct Timeline;
  Timeline timeline(const UtteranceMeta& utt) const;

  Corpus corpus_;
  FixtureOptions options_;
  std::uint64_t seed_;
};

FixtureCorpus synth_fixture_corpus(int n_speakers, int utt_per_condition,
                                   const SentenceGrammar& grammar, Rng& rng,
                                   FixtureOptions options = {});

}  // namespace avsr
