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
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "avsr/common.hpp"
#include "avsr/media.hpp"

namespace avsr {

inline constexpr double kTargetRms = 0.05;

// Root mean square of the samples. Throws on an empty signal.
double rms(const AudioSignal& signal);
double rms(std::span<const double> samples);

// Corpus-average RMS of the raw Lombard and plain recordings.
struct RmsStats {
  double mean_rms_lombard = 0.0;
  double mean_rms_plain = 0.0;

  void validate() const;
  // Target RMS for Lombard speech: 0.05 * mean_L / mean_NL.
  double lombard_target() const;
};

RmsStats compute_rms_stats(std::span<const double> lombard_rms, std::span<const double> plain_rms);

// The level treatment applied before noise is added. CL is a Lombard
// recording brought to the plain-speech level.
enum class SpeechCondition { NL, CL, L };
std::string to_string(SpeechCondition c);
SpeechCondition parse_speech_condition(const std::string& s);

// Scales the signal to RMS 0.05 (NL, CL) or stats.lombard_target() (L).
// A zero-RMS input cannot be scaled and is rejected.
AudioSignal normalize_condition(const AudioSignal& signal, SpeechCondition condition,
                                const RmsStats& stats);

// ---------------------------------------------------------------------------
// SNR conditions

inline constexpr std::array<int, 8> kSnrLevelsDb = {-15, -12, -9, -6, -3, 0, 3, 6};

class SnrCondition {
 public:
  static SnrCondition clean() { return SnrCondition(std::nullopt); }
  // Throws unless level_db is one of kSnrLevelsDb.
  static SnrCondition noisy(int level_db);
  // "clean" or an integer dB level, e.g. "-6".
  static SnrCondition parse(const std::string& s);

  bool is_clean() const { return !level_.has_value(); }
  int level_db() const;
  std::string label() const;

  bool operator==(const SnrCondition&) const = default;
  auto operator<=>(const SnrCondition&) const = default;

 private:
  explicit SnrCondition(std::optional<int> level) : level_(level) {}
  std::optional<int> level_;
};

// Uniform over the eight noise levels and clean.
SnrCondition sample_snr_condition(Rng& rng);

// Noise gain g such that 20 log10(rms(speech) / rms(g * noise)) = level_db.
double snr_noise_gain(const AudioSignal& speech, std::span<const double> noise, int level_db);

// speech + g * noise[0, len(speech)) for noisy conditions; the speech
// unchanged for clean. Output is not clipped.
AudioSignal mix_at_snr(const AudioSignal& speech, const AudioSignal& noise,
                       const SnrCondition& condition);

// 20 log10(rms(speech) / rms(noise)).
double measure_snr_db(std::span<const double> speech, std::span<const double> noise);

// ---------------------------------------------------------------------------
// Noise synthesis

enum class NoiseKind { speech_shaped, babble, file };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::babble;
  std::filesystem::path path;  // NoiseKind::file only
  int babble_streams = 8;

  // "babble", "speech_shaped" or "file:PATH".
  static NoiseSpec parse(const std::string& s);
  std::string label() const;
};

// Long-term average speech spectrum as one-third-octave band levels in dB.
struct LtassBand {
  double center_hz;
  double level_db;
};
std::span<const LtassBand> ltass_table();

// Power spectral density of the shaping curve in dB per Hz, interpolated
// linearly in dB over log frequency and held flat beyond the table ends.
double ltass_density_db(double freq_hz);

AudioSignal make_noise(const NoiseSpec& spec, std::size_t duration_samples, Rng& rng);

// A long noise recording split into disjoint training and test regions.
class NoiseBank {
 public:
  enum class Region { train, test };

  NoiseBank(const NoiseSpec& spec, std::size_t total_samples, Rng& rng);
  explicit NoiseBank(AudioSignal noise) : noise_(std::move(noise)) {}

  // A contiguous slice of `length` samples from the requested half. Slices
  // wrap around inside the region when it is shorter than `length`.
  AudioSignal segment(Region region, std::size_t length, Rng& rng) const;
  const AudioSignal& signal() const { return noise_; }

 private:
  AudioSignal noise_;
};

}  // namespace avsr
