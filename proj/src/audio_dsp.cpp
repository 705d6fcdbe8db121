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

#include "avsr/audio_dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>

#include <fftw3.h>

namespace avsr {

double rms(std::span<const double> samples) {
  AVSR_REQUIRE(!samples.empty(), "rms of an empty signal");
  long double acc = 0.0L;
  for (double s : samples) acc += static_cast<long double>(s) * s;
  return static_cast<double>(std::sqrt(acc / static_cast<long double>(samples.size())));
}

double rms(const AudioSignal& signal) { return rms(std::span<const double>(signal.samples)); }

void RmsStats::validate() const {
  AVSR_REQUIRE(mean_rms_lombard > 0.0 && mean_rms_plain > 0.0,
               "RMS statistics must be strictly positive (Lombard ", mean_rms_lombard, ", plain ",
               mean_rms_plain, ")");
}

double RmsStats::lombard_target() const {
  validate();
  return kTargetRms * mean_rms_lombard / mean_rms_plain;
}

RmsStats compute_rms_stats(std::span<const double> lombard_rms, std::span<const double> plain_rms) {
  AVSR_REQUIRE(!lombard_rms.empty() && !plain_rms.empty(),
               "RMS statistics need at least one Lombard and one plain utterance");
  auto mean = [](std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  RmsStats stats{mean(lombard_rms), mean(plain_rms)};
  stats.validate();
  return stats;
}

std::string to_string(SpeechCondition c) {
  switch (c) {
    case SpeechCondition::NL: return "NL";
    case SpeechCondition::CL: return "CL";
    case SpeechCondition::L: return "L";
  }
  return "?";
}

SpeechCondition parse_speech_condition(const std::string& s) {
  if (s == "NL") return SpeechCondition::NL;
  if (s == "CL") return SpeechCondition::CL;
  if (s == "L") return SpeechCondition::L;
  throw PreconditionError("unknown speech condition '" + s + "' (expected NL, CL or L)");
}

AudioSignal normalize_condition(const AudioSignal& signal, SpeechCondition condition,
                                const RmsStats& stats) {
  const double current = rms(signal);
  AVSR_REQUIRE(current > 0.0, "cannot normalize a silent (zero-RMS) signal");
  const double target = condition == SpeechCondition::L ? stats.lombard_target() : kTargetRms;
  const double scale = target / current;
  AudioSignal out = signal;
  for (auto& s : out.samples) s *= scale;
  return out;
}

// ---------------------------------------------------------------------------

SnrCondition SnrCondition::noisy(int level_db) {
  AVSR_REQUIRE(std::find(kSnrLevelsDb.begin(), kSnrLevelsDb.end(), level_db) != kSnrLevelsDb.end(),
               "SNR level ", level_db, " dB is not on the -15..6 dB grid (step 3)");
  return SnrCondition(level_db);
}

SnrCondition SnrCondition::parse(const std::string& s) {
  if (s == "clean") return clean();
  std::size_t pos = 0;
  int v = 0;
  try {
    v = std::stoi(s, &pos);
  } catch (const std::exception&) {
    throw PreconditionError("invalid SNR '" + s + "'");
  }
  AVSR_REQUIRE(pos == s.size() || s.substr(pos) == "dB", "invalid SNR '", s, "'");
  return noisy(v);
}

int SnrCondition::level_db() const {
  AVSR_REQUIRE(level_.has_value(), "clean condition has no SNR level");
  return *level_;
}

std::string SnrCondition::label() const { return is_clean() ? "clean" : std::to_string(*level_); }

SnrCondition sample_snr_condition(Rng& rng) {
  const auto k = rng.uniform_int(kSnrLevelsDb.size() + 1);
  return k == kSnrLevelsDb.size() ? SnrCondition::clean() : SnrCondition::noisy(kSnrLevelsDb[k]);
}

double snr_noise_gain(const AudioSignal& speech, std::span<const double> noise, int level_db) {
  const double rs = rms(speech);
  const double rn = rms(noise);
  AVSR_REQUIRE(rs > 0.0, "speech has zero RMS; SNR is undefined");
  AVSR_REQUIRE(rn > 0.0, "noise has zero RMS; SNR is undefined");
  return rs / (rn * std::pow(10.0, level_db / 20.0));
}

AudioSignal mix_at_snr(const AudioSignal& speech, const AudioSignal& noise,
                       const SnrCondition& condition) {
  if (condition.is_clean()) return speech;
  AVSR_REQUIRE(noise.size() >= speech.size(), "noise (", noise.size(),
               " samples) is shorter than speech (", speech.size(), " samples)");
  const std::span<const double> seg(noise.samples.data(), speech.size());
  const double g = snr_noise_gain(speech, seg, condition.level_db());
  AudioSignal out = speech;
  for (std::size_t i = 0; i < out.size(); ++i) out.samples[i] += g * seg[i];
  return out;
}

double measure_snr_db(std::span<const double> speech, std::span<const double> noise) {
  return 20.0 * std::log10(rms(speech) / rms(noise));
}

// ---------------------------------------------------------------------------

NoiseSpec NoiseSpec::parse(const std::string& s) {
  NoiseSpec spec;
  if (s == "babble") {
    spec.kind = NoiseKind::babble;
  } else if (s == "speech_shaped") {
    spec.kind = NoiseKind::speech_shaped;
  } else if (s.starts_with("file:") && s.size() > 5) {
    spec.kind = NoiseKind::file;
    spec.path = s.substr(5);
  } else {
    throw PreconditionError("unknown noise '" + s + "' (expected babble, speech_shaped or file:PATH)");
  }
  return spec;
}

std::string NoiseSpec::label() const {
  switch (kind) {
    case NoiseKind::speech_shaped: return "speech_shaped";
    case NoiseKind::babble: return "babble";
    case NoiseKind::file: return "file:" + path.string();
  }
  return "?";
}

std::span<const LtassBand> ltass_table() {
  // One-third-octave long-term average speech spectrum at 70 dB overall,
  // averaged over talkers (after Byrne et al., 1994).
  static constexpr LtassBand kTable[] = {
      {63, 38.6},   {80, 43.5},   {100, 54.4},  {125, 57.7},  {160, 56.8},  {200, 58.2},
      {250, 59.8},  {315, 60.1},  {400, 59.2},  {500, 58.5},  {630, 56.7},  {800, 53.7},
      {1000, 52.3}, {1250, 48.7}, {1600, 47.3}, {2000, 46.7}, {2500, 45.3}, {3150, 44.6},
      {4000, 45.2}, {5000, 44.9}, {6300, 43.3}, {8000, 42.7},
  };
  return kTable;
}

double ltass_density_db(double freq_hz) {
  const auto table = ltass_table();
  // Third-octave bandwidth is 0.2316 * centre frequency.
  auto density = [](double level_db, double f) { return level_db - 10.0 * std::log10(0.2316 * f); };
  if (freq_hz <= table.front().center_hz) return density(table.front().level_db, table.front().center_hz);
  if (freq_hz >= table.back().center_hz) return density(table.back().level_db, table.back().center_hz);
  for (std::size_t i = 1; i < table.size(); ++i) {
    if (freq_hz <= table[i].center_hz) {
      const double x0 = std::log10(table[i - 1].center_hz), x1 = std::log10(table[i].center_hz);
      const double w = (std::log10(freq_hz) - x0) / (x1 - x0);
      const double level = table[i - 1].level_db + w * (table[i].level_db - table[i - 1].level_db);
      return density(level, freq_hz);
    }
  }
  return density(table.back().level_db, table.back().center_hz);
}

namespace {

constexpr double kNoiseRms = 0.1;

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1024;
  while (p < n) p <<= 1;
  return p;
}

std::vector<double> speech_shaped(std::size_t duration, Rng& rng) {
  const std::size_t n = next_pow2(duration);
  const std::size_t bins = n / 2 + 1;
  auto* spec = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * bins));
  std::vector<double> out(n);
  const fftw_plan plan = fftw_plan_dft_c2r_1d(static_cast<int>(n), spec, out.data(), FFTW_ESTIMATE);
  for (std::size_t k = 0; k < bins; ++k) {
    const double f = static_cast<double>(k) * kSampleRate / static_cast<double>(n);
    const double amp = k == 0 ? 0.0 : std::sqrt(std::pow(10.0, ltass_density_db(f) / 10.0));
    spec[k][0] = amp * rng.normal();
    spec[k][1] = (k == bins - 1) ? 0.0 : amp * rng.normal();
  }
  fftw_execute(plan);
  fftw_destroy_plan(plan);
  fftw_free(spec);
  out.resize(duration);
  const double r = rms(out);
  for (auto& s : out) s *= kNoiseRms / r;
  return out;
}

}  // namespace

AudioSignal make_noise(const NoiseSpec& spec, std::size_t duration_samples, Rng& rng) {
  AVSR_REQUIRE(duration_samples >= 1, "noise duration must be at least one sample");
  switch (spec.kind) {
    case NoiseKind::speech_shaped:
      return AudioSignal(speech_shaped(duration_samples, rng));
    case NoiseKind::babble: {
      AVSR_REQUIRE(spec.babble_streams >= 6, "babble needs at least 6 streams, got ",
                   spec.babble_streams);
      std::vector<double> sum(duration_samples, 0.0);
      for (int k = 0; k < spec.babble_streams; ++k) {
        Rng stream = rng.fork(static_cast<std::uint64_t>(k));
        const auto s = speech_shaped(duration_samples, stream);
        // Slow syllable-rate level fluctuation per talker.
        const double rate = stream.uniform(2.0, 6.0), phase = stream.uniform(0.0, 6.283185307179586);
        for (std::size_t i = 0; i < duration_samples; ++i) {
          const double t = static_cast<double>(i) / kSampleRate;
          sum[i] += s[i] * (1.0 + 0.5 * std::sin(6.283185307179586 * rate * t + phase));
        }
      }
      rng.next_u64();
      const double r = rms(sum);
      for (auto& v : sum) v *= kNoiseRms / r;
      return AudioSignal(std::move(sum));
    }
    case NoiseKind::file: {
      AVSR_REQUIRE(!spec.path.empty(), "file noise needs a source path");
      if (!std::filesystem::exists(spec.path)) {
        throw IoError("noise file " + spec.path.string() + " does not exist");
      }
      const auto src = read_wav(spec.path);
      AVSR_REQUIRE(!src.empty(), "noise file ", spec.path.string(), " is empty");
      const std::size_t offset = rng.uniform_int(src.size());
      std::vector<double> out(duration_samples);
      for (std::size_t i = 0; i < duration_samples; ++i) out[i] = src.samples[(offset + i) % src.size()];
      return AudioSignal(std::move(out));
    }
  }
  throw Error("unreachable noise kind");
}

NoiseBank::NoiseBank(const NoiseSpec& spec, std::size_t total_samples, Rng& rng)
    : noise_(make_noise(spec, total_samples, rng)) {}

AudioSignal NoiseBank::segment(Region region, std::size_t length, Rng& rng) const {
  const std::size_t half = noise_.size() / 2;
  AVSR_REQUIRE(half >= 1, "noise bank is too short to split into regions");
  const std::size_t base = region == Region::train ? 0 : half;
  const std::size_t size = region == Region::train ? half : noise_.size() - half;
  const std::size_t start = rng.uniform_int(size);
  std::vector<double> out(length);
  for (std::size_t i = 0; i < length; ++i) out[i] = noise_.samples[base + (start + i) % size];
  return AudioSignal(std::move(out));
}

}  // namespace avsr
