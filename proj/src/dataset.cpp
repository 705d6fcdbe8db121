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

#include "avsr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace avsr {

// ---------------------------------------------------------------------------
// Train conditions

namespace {

std::string format_fraction(double f) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", f);
  return buf;
}

double parse_fraction(const std::string& s, const std::string& whole) {
  std::size_t used = 0;
  double f = 0;
  try {
    f = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  AVSR_REQUIRE(used == s.size() && !s.empty(), "cannot parse Lombard fraction in '", whole, "'");
  return f;
}

}  // namespace

TrainCondition TrainCondition::mix(double fraction) {
  AVSR_REQUIRE(fraction >= 0.0 && fraction <= 1.0, "Lombard fraction ", fraction, " is outside [0, 1]");
  return {Kind::mix, fraction};
}

TrainCondition TrainCondition::parse(const std::string& s) {
  if (s == "NL") return nl();
  if (s == "L") return lombard();
  if (s == "CL") return cl();
  if (s.rfind("mix:", 0) == 0) return mix(parse_fraction(s.substr(4), s));
  throw PreconditionError("unknown training condition '" + s + "' (expected NL, L, CL or mix:FRACTION)");
}

std::string TrainCondition::to_string() const {
  switch (kind) {
    case Kind::NL: return "NL";
    case Kind::L: return "L";
    case Kind::CL: return "CL";
    case Kind::mix: return "mix:" + format_fraction(fraction);
  }
  return "?";
}

std::string TrainCondition::label() const {
  if (kind != Kind::mix) return to_string();
  if (fraction == 0.0) return "(NL)";
  if (fraction == 1.0) return "(NL,L)";
  return "(NL," + format_fraction(fraction) + "L)";
}

TrainCondition TrainCondition::parse_label(const std::string& s) {
  if (s == "(NL)") return mix(0.0);
  if (s == "(NL,L)") return mix(1.0);
  if (s.rfind("(NL,", 0) == 0 && s.size() > 6 && s.substr(s.size() - 2) == "L)") {
    return mix(parse_fraction(s.substr(4, s.size() - 6), s));
  }
  return parse(s);
}

// ---------------------------------------------------------------------------
// Selection

namespace {

std::vector<SampleSpec> treat(const std::vector<std::string>& ids, const Corpus& corpus, const TrainCondition& cond) {
  std::vector<SampleSpec> out;
  for (const auto& id : ids) {
    const Condition c = corpus.at(id).condition;
    switch (cond.kind) {
      case TrainCondition::Kind::NL:
        if (c == Condition::NL) out.push_back({id, SpeechCondition::NL});
        break;
      case TrainCondition::Kind::L:
        if (c == Condition::L) out.push_back({id, SpeechCondition::L});
        break;
      case TrainCondition::Kind::CL:
        if (c == Condition::L) out.push_back({id, SpeechCondition::CL});
        break;
      case TrainCondition::Kind::mix:
        out.push_back({id, c == Condition::L ? SpeechCondition::L : SpeechCondition::NL});
        break;
    }
  }
  return out;
}

}  // namespace

std::vector<SampleSpec> select_train(const CorpusSplit& split, const Corpus& corpus, const TrainCondition& cond,
                                     Rng& rng) {
  if (cond.kind != TrainCondition::Kind::mix) return treat(split.train, corpus, cond);
  return treat(mix_lombard_fraction(split, corpus, cond.fraction, rng).train, corpus, cond);
}

std::vector<SampleSpec> select_val(const CorpusSplit& split, const Corpus& corpus, const TrainCondition& cond) {
  return treat(split.val, corpus, cond);
}

std::vector<SampleSpec> select_test(const std::vector<std::string>& ids, const Corpus& corpus,
                                    SpeechCondition test_condition) {
  std::vector<SampleSpec> out;
  for (const auto& id : ids) {
    const bool lombard = corpus.at(id).condition == Condition::L;
    if (lombard == (test_condition != SpeechCondition::NL)) out.push_back({id, test_condition});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Samples

SampleBuilder::SampleBuilder(const Corpus& corpus, const MediaSource& media, LandmarkSet reference, RmsStats stats,
                             std::shared_ptr<const NoiseBank> noise, SampleOptions options)
    : corpus_(corpus),
      media_(media),
      reference_(std::move(reference)),
      stats_(stats),
      noise_(std::move(noise)),
      options_(std::move(options)) {
  AVSR_REQUIRE(options_.audio || options_.video, "samples need audio, video or both");
  options_.roi.validate();
}

const AudioSignal& SampleBuilder::raw_audio(const std::string& utt_id) const {
  {
    std::lock_guard lock(mu_);
    if (auto it = audio_cache_.find(utt_id); it != audio_cache_.end()) return *it->second;
  }
  auto a = std::make_shared<const AudioSignal>(media_.audio(corpus_.at(utt_id)));
  AVSR_REQUIRE(a->sample_rate_hz == kSampleRate, "utterance '", utt_id, "' is sampled at ", a->sample_rate_hz, " Hz");
  std::lock_guard lock(mu_);
  return *audio_cache_.emplace(utt_id, std::move(a)).first->second;
}

const SampleBuilder::CompactRois& SampleBuilder::compact_rois(const std::string& utt_id) const {
  {
    std::lock_guard lock(mu_);
    if (auto it = roi_cache_.find(utt_id); it != roi_cache_.end()) return *it->second;
  }
  const auto& meta = corpus_.at(utt_id);
  const TrackLandmarkProvider provider(media_.landmarks(meta));
  const FrameSequence rois =
      extract_roi_sequence(media_.video(meta), provider, reference_, options_.roi, options_.roi_pipeline);
  auto c = std::make_shared<CompactRois>();
  c->height = rois.height();
  c->width = rois.width();
  c->frames = static_cast<int>(rois.size());
  c->pixels.reserve(static_cast<std::size_t>(c->height) * c->width * c->frames);
  for (const auto& f : rois.frames) {
    for (float v : f.pixels) c->pixels.push_back(static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)));
  }
  std::lock_guard lock(mu_);
  return *roi_cache_.emplace(utt_id, std::move(c)).first->second;
}

FrameSequence SampleBuilder::raw_rois(const std::string& utt_id) const {
  const auto& c = compact_rois(utt_id);
  FrameSequence seq;
  const std::size_t n = static_cast<std::size_t>(c.height) * c.width;
  for (int t = 0; t < c.frames; ++t) {
    GrayImage img(c.height, c.width);
    for (std::size_t i = 0; i < n; ++i) img.pixels[i] = c.pixels[t * n + i];
    seq.frames.push_back(std::move(img));
  }
  return seq;
}

Sample SampleBuilder::build(const SampleSpec& spec, const SnrCondition& snr, AugmentMode mode,
                            NoiseBank::Region region, Rng& rng) const {
  const auto& meta = corpus_.at(spec.utt_id);
  AVSR_REQUIRE((meta.condition == Condition::L) == (spec.treatment != SpeechCondition::NL), "utterance '",
               spec.utt_id, "' is ", to_string(meta.condition), " speech and cannot be treated as ",
               to_string(spec.treatment));
  Sample s;
  s.utt_id = spec.utt_id;
  s.treatment = spec.treatment;
  s.snr = snr;
  s.words = meta.words;
  s.target = Charset::encode(transcript(meta.words));

  // Audio and video are cut to their common frame count.
  int frames = std::numeric_limits<int>::max();
  const AudioSignal* raw = nullptr;
  if (options_.audio) {
    raw = &raw_audio(spec.utt_id);
    frames = std::min(frames, static_cast<int>(raw->size() / kSamplesPerFrame));
  }
  const CompactRois* rois = nullptr;
  if (options_.video) {
    rois = &compact_rois(spec.utt_id);
    frames = std::min(frames, rois->frames);
  }
  AVSR_REQUIRE(frames >= 1, "utterance '", spec.utt_id, "' is shorter than one video frame");
  s.frames = frames;

  if (raw) {
    AudioSignal cut(std::vector<double>(raw->samples.begin(), raw->samples.begin() + frames * kSamplesPerFrame));
    AudioSignal speech = normalize_condition(cut, spec.treatment, stats_);
    if (!snr.is_clean()) {
      AVSR_REQUIRE(noise_ != nullptr, "noisy condition ", snr.label(), " requested without a noise bank");
      speech = mix_at_snr(speech, noise_->segment(region, speech.size(), rng), snr);
    }
    s.input.audio = std::move(speech.samples);
  }
  if (rois) {
    const RoiSpec& roi = options_.roi;
    const CropDecision crop = sample_crop(roi, mode, rng);
    FrameSequence seq = raw_rois(spec.utt_id);
    seq.frames.resize(static_cast<std::size_t>(frames));
    seq = normalize_intensity(apply_crop(seq, roi, crop));
    Tensor v({frames, roi.crop_h, roi.crop_w});
    std::size_t k = 0;
    for (const auto& f : seq.frames) {
      for (float p : f.pixels) v[k++] = p;
    }
    s.input.video = std::move(v);
  }
  return s;
}

RmsStats compute_rms_stats(const Corpus& corpus, const MediaSource& media, const std::vector<std::string>& ids) {
  std::vector<double> lombard, plain;
  for (const auto& id : ids) {
    const auto& meta = corpus.at(id);
    (meta.condition == Condition::L ? lombard : plain).push_back(rms(media.audio(meta)));
  }
  AVSR_REQUIRE(!lombard.empty() && !plain.empty(), "RMS statistics need both Lombard and plain recordings; got ",
               lombard.size(), " Lombard and ", plain.size(), " plain");
  return compute_rms_stats(std::span<const double>(lombard), std::span<const double>(plain));
}

std::uint64_t eval_noise_seed(const std::string& utt_id, const SnrCondition& snr, std::uint64_t base_seed) {
  return splitmix64(base_seed ^ hash_string(utt_id + "@" + snr.label()));
}

}  // namespace avsr
