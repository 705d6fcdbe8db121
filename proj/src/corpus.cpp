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

#include "avsr/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_set>

#include <json.hpp>

namespace avsr {

// ---------------------------------------------------------------------------
// Grammar

SentenceGrammar SentenceGrammar::grid() {
  std::vector<std::string> letters;
  for (char c = 'a'; c <= 'z'; ++c) {
    if (c != 'w') letters.emplace_back(1, c);
  }
  return SentenceGrammar({{
      {"command", {"bin", "lay", "place", "set"}},
      {"colour", {"blue", "green", "red", "white"}},
      {"preposition", {"at", "by", "in", "with"}},
      {"letter", letters},
      {"digit", {"zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine"}},
      {"adverb", {"again", "now", "please", "soon"}},
  }});
}

SentenceGrammar::SentenceGrammar(std::array<GrammarSlot, kSlotCount> slots)
    : slots_(std::move(slots)) {
  for (const auto& s : slots_) {
    AVSR_REQUIRE(!s.words.empty(), "grammar slot '", s.name, "' has no words");
    std::set<std::string> uniq(s.words.begin(), s.words.end());
    AVSR_REQUIRE(uniq.size() == s.words.size(), "grammar slot '", s.name, "' has duplicate words");
  }
}

std::uint64_t SentenceGrammar::sentence_count() const {
  std::uint64_t n = 1;
  for (const auto& s : slots_) n *= s.words.size();
  return n;
}

Sentence SentenceGrammar::sentence_at(const std::array<std::size_t, kSlotCount>& indices) const {
  Sentence out;
  for (std::size_t i = 0; i < kSlotCount; ++i) {
    AVSR_REQUIRE(indices[i] < slots_[i].words.size(), "slot index out of range for '",
                 slots_[i].name, "'");
    out.push_back(slots_[i].words[indices[i]]);
  }
  return out;
}

std::optional<std::array<std::size_t, SentenceGrammar::kSlotCount>> SentenceGrammar::parse(
    const Sentence& words) const {
  if (words.size() != kSlotCount) return std::nullopt;
  std::array<std::size_t, kSlotCount> idx{};
  for (std::size_t i = 0; i < kSlotCount; ++i) {
    const auto& inv = slots_[i].words;
    const auto it = std::find(inv.begin(), inv.end(), words[i]);
    if (it == inv.end()) return std::nullopt;
    idx[i] = static_cast<std::size_t>(it - inv.begin());
  }
  return idx;
}

Sentence generate_sentence(const SentenceGrammar& grammar, Rng& rng) {
  std::array<std::size_t, SentenceGrammar::kSlotCount> idx{};
  for (std::size_t i = 0; i < idx.size(); ++i) {
    idx[i] = rng.uniform_int(grammar.slots()[i].words.size());
  }
  return grammar.sentence_at(idx);
}

int Charset::index_of(char c) {
  if (c == ' ') return kSpace;
  if (c >= 'a' && c <= 'z') return c - 'a' + 1;
  throw PreconditionError(detail::concat("character '", c, "' is outside the transcript charset"));
}

char Charset::char_of(int index) {
  if (index == kSpace) return ' ';
  if (index >= 1 && index <= 26) return static_cast<char>('a' + index - 1);
  throw PreconditionError(detail::concat("label ", index, " has no character"));
}

std::vector<int> Charset::encode(const std::string& text) {
  std::vector<int> out;
  out.reserve(text.size());
  for (char c : text) out.push_back(index_of(c));
  return out;
}

std::string Charset::decode(const std::vector<int>& labels) {
  std::string out;
  out.reserve(labels.size());
  for (int l : labels) out.push_back(char_of(l));
  return out;
}

std::string transcript(const Sentence& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// ---------------------------------------------------------------------------
// Enums

std::string to_string(Gender g) { return g == Gender::female ? "female" : "male"; }
std::string to_string(Condition c) { return c == Condition::L ? "L" : "NL"; }
std::string to_string(View v) { return v == View::frontal ? "frontal" : "profile"; }

Gender parse_gender(const std::string& s) {
  if (s == "female" || s == "F" || s == "f") return Gender::female;
  if (s == "male" || s == "M" || s == "m") return Gender::male;
  throw PreconditionError("unknown gender '" + s + "'");
}

Condition parse_condition(const std::string& s) {
  if (s == "L") return Condition::L;
  if (s == "NL") return Condition::NL;
  throw PreconditionError("unknown recording condition '" + s + "' (expected L or NL)");
}

View parse_view(const std::string& s) {
  if (s == "frontal") return View::frontal;
  if (s == "profile") return View::profile;
  throw PreconditionError("unknown view '" + s + "'");
}

std::string to_string(SplitProtocol p) {
  return p == SplitProtocol::multi_speaker ? "multi_speaker" : "subject_independent";
}

SplitProtocol parse_protocol(const std::string& s) {
  if (s == "multi_speaker") return SplitProtocol::multi_speaker;
  if (s == "subject_independent") return SplitProtocol::subject_independent;
  throw PreconditionError("unknown split protocol '" + s + "'");
}

// ---------------------------------------------------------------------------
// Corpus

void Corpus::add(UtteranceMeta utt) {
  AVSR_REQUIRE(!utt.id.empty(), "utterance id is empty");
  AVSR_REQUIRE(!index_.count(utt.id), "duplicate utterance id '", utt.id, "'");
  AVSR_REQUIRE(grammar_.parse(utt.words).has_value(), "utterance '", utt.id,
               "' is not a valid grammar sentence: '", transcript(utt.words), "'");
  for (const auto& other : utts_) {
    if (other.speaker_id == utt.speaker_id) {
      AVSR_REQUIRE(other.gender == utt.gender, "speaker '", utt.speaker_id,
                   "' listed with two genders");
      break;
    }
  }
  const std::string key = utt.speaker_id + "|" + to_string(utt.condition) + "|" + transcript(utt.words);
  const auto [it, inserted] = sentence_keys_.emplace(key, utt.id);
  AVSR_REQUIRE(inserted, "utterances '", it->second, "' and '", utt.id,
               "' share speaker, condition and sentence");
  index_.emplace(utt.id, utts_.size());
  utts_.push_back(std::move(utt));
}

const UtteranceMeta& Corpus::at(const std::string& id) const {
  const auto it = index_.find(id);
  AVSR_REQUIRE(it != index_.end(), "unknown utterance '", id, "'");
  return utts_[it->second];
}

std::vector<SpeakerInfo> Corpus::speakers() const {
  std::vector<SpeakerInfo> out;
  std::unordered_set<std::string> seen;
  for (const auto& u : utts_) {
    if (seen.insert(u.speaker_id).second) out.push_back({u.speaker_id, u.gender});
  }
  return out;
}

std::vector<std::string> Corpus::utterances_of(const std::string& speaker_id) const {
  std::vector<std::string> out;
  for (const auto& u : utts_) {
    if (u.speaker_id == speaker_id) out.push_back(u.id);
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const Corpus& corpus) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  for (const auto& u : corpus.utterances()) {
    nlohmann::ordered_json j;
    j["id"] = u.id;
    j["speaker"] = u.speaker_id;
    j["gender"] = to_string(u.gender);
    j["condition"] = to_string(u.condition);
    j["view"] = to_string(u.view);
    j["words"] = u.words;
    j["audio"] = u.audio_ref;
    j["video"] = u.video_ref;
    j["landmarks"] = u.landmarks_ref;
    os << j.dump() << '\n';
  }
  if (!os) throw IoError("write failed: " + path.string());
}

Corpus read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  Corpus corpus;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      UtteranceMeta u;
      u.id = j.at("id").get<std::string>();
      u.speaker_id = j.at("speaker").get<std::string>();
      u.gender = parse_gender(j.at("gender").get<std::string>());
      u.condition = parse_condition(j.at("condition").get<std::string>());
      u.view = parse_view(j.value("view", std::string("frontal")));
      u.words = j.at("words").get<Sentence>();
      u.audio_ref = j.value("audio", std::string());
      u.video_ref = j.value("video", std::string());
      u.landmarks_ref = j.value("landmarks", std::string());
      corpus.add(std::move(u));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(detail::concat(path.string(), ":", lineno, ": ", e.what()));
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Splits

namespace {

double lombard_ratio(const std::vector<std::string>& ids, const Corpus& corpus) {
  std::size_t l = 0, nl = 0;
  for (const auto& id : ids) {
    (corpus.at(id).condition == Condition::L ? l : nl) += 1;
  }
  return nl == 0 ? 0.0 : static_cast<double>(l) / static_cast<double>(nl);
}

// Restores corpus order so split files are stable and diffable.
void sort_by_corpus_order(std::vector<std::string>& ids, const Corpus& corpus) {
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < corpus.size(); ++i) pos[corpus.utterances()[i].id] = i;
  std::sort(ids.begin(), ids.end(),
            [&](const std::string& a, const std::string& b) { return pos.at(a) < pos.at(b); });
}

}  // namespace

CorpusSplit make_multi_speaker_split(const Corpus& corpus, SplitCounts counts, Rng& rng) {
  AVSR_REQUIRE(counts.train >= 0 && counts.val >= 0 && counts.test >= 0,
               "split counts must be non-negative");
  const int needed = counts.train + counts.val + counts.test;
  CorpusSplit split;
  split.protocol = SplitProtocol::multi_speaker;
  for (const auto& spk : corpus.speakers()) {
    std::vector<std::string> lombard, plain;
    for (const auto& id : corpus.utterances_of(spk.id)) {
      (corpus.at(id).condition == Condition::L ? lombard : plain).push_back(id);
    }
    const auto available = static_cast<int>(lombard.size() + plain.size());
    AVSR_REQUIRE(available >= needed, "speaker '", spk.id, "' has ", available,
                 " utterances but the split needs ", needed);
    rng.shuffle(lombard.begin(), lombard.end());
    rng.shuffle(plain.begin(), plain.end());
    std::vector<std::string> order;
    bool take_lombard = rng.bernoulli(0.5);
    std::size_t li = 0, pi = 0;
    while (li < lombard.size() || pi < plain.size()) {
      const bool from_l = (take_lombard && li < lombard.size()) || pi >= plain.size();
      order.push_back(from_l ? lombard[li++] : plain[pi++]);
      take_lombard = !take_lombard;
    }
    auto it = order.begin();
    split.train.insert(split.train.end(), it, it + counts.train);
    it += counts.train;
    split.val.insert(split.val.end(), it, it + counts.val);
    it += counts.val;
    split.test.insert(split.test.end(), it, it + counts.test);
  }
  sort_by_corpus_order(split.train, corpus);
  sort_by_corpus_order(split.val, corpus);
  sort_by_corpus_order(split.test, corpus);
  split.lombard_fraction = lombard_ratio(split.train, corpus);
  return split;
}

CorpusSplit make_subject_independent_split(const Corpus& corpus, SplitCounts counts,
                                           bool gender_balanced, Rng& rng) {
  AVSR_REQUIRE(counts.train >= 0 && counts.val >= 0 && counts.test >= 0,
               "split counts must be non-negative");
  const auto speakers = corpus.speakers();
  std::vector<std::string> female, male;
  for (const auto& s : speakers) (s.gender == Gender::female ? female : male).push_back(s.id);

  std::vector<std::string> val_spk, test_spk, rest;
  if (gender_balanced) {
    AVSR_REQUIRE(counts.val % 2 == 0 && counts.test % 2 == 0,
                 "gender-balanced split needs even val and test speaker counts, got val=",
                 counts.val, " test=", counts.test);
    const auto need = static_cast<std::size_t>((counts.val + counts.test) / 2);
    AVSR_REQUIRE(female.size() >= need && male.size() >= need,
                 "gender-balanced val/test requires ", need, " female and ", need,
                 " male speakers; available ", female.size(), " female and ", male.size(), " male");
    rng.shuffle(female.begin(), female.end());
    rng.shuffle(male.begin(), male.end());
    const auto hv = static_cast<std::size_t>(counts.val / 2);
    for (std::size_t i = 0; i < hv; ++i) {
      val_spk.push_back(female[i]);
      val_spk.push_back(male[i]);
    }
    for (std::size_t i = hv; i < need; ++i) {
      test_spk.push_back(female[i]);
      test_spk.push_back(male[i]);
    }
    rest.insert(rest.end(), female.begin() + static_cast<std::ptrdiff_t>(need), female.end());
    rest.insert(rest.end(), male.begin() + static_cast<std::ptrdiff_t>(need), male.end());
    rng.shuffle(rest.begin(), rest.end());
  } else {
    for (const auto& s : speakers) rest.push_back(s.id);
    AVSR_REQUIRE(rest.size() >= static_cast<std::size_t>(counts.val + counts.test),
                 "split needs ", counts.val + counts.test, " val/test speakers; corpus has ",
                 rest.size());
    rng.shuffle(rest.begin(), rest.end());
    val_spk.assign(rest.begin(), rest.begin() + counts.val);
    test_spk.assign(rest.begin() + counts.val, rest.begin() + counts.val + counts.test);
    rest.erase(rest.begin(), rest.begin() + counts.val + counts.test);
  }
  AVSR_REQUIRE(rest.size() >= static_cast<std::size_t>(counts.train), "split needs ",
               counts.train, " training speakers; only ", rest.size(), " remain after val/test");
  std::vector<std::string> train_spk(rest.begin(), rest.begin() + counts.train);

  CorpusSplit split;
  split.protocol = SplitProtocol::subject_independent;
  auto fill = [&](const std::vector<std::string>& spk, std::vector<std::string>& out) {
    for (const auto& s : spk) {
      const auto ids = corpus.utterances_of(s);
      out.insert(out.end(), ids.begin(), ids.end());
    }
    sort_by_corpus_order(out, corpus);
  };
  fill(train_spk, split.train);
  fill(val_spk, split.val);
  fill(test_spk, split.test);
  split.lombard_fraction = lombard_ratio(split.train, corpus);
  return split;
}

CorpusSplit mix_lombard_fraction(const CorpusSplit& split, const Corpus& corpus, double fraction,
                                 Rng& rng) {
  AVSR_REQUIRE(fraction >= 0.0 && fraction <= 1.0, "Lombard fraction ", fraction,
               " is outside [0, 1]");
  std::vector<std::string> plain, lombard;
  for (const auto& id : split.train) {
    (corpus.at(id).condition == Condition::L ? lombard : plain).push_back(id);
  }
  const auto wanted = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(plain.size())));
  AVSR_REQUIRE(wanted <= lombard.size(), "Lombard fraction ", fraction, " needs ", wanted,
               " Lombard training utterances; split has ", lombard.size());
  rng.shuffle(lombard.begin(), lombard.end());
  CorpusSplit out = split;
  out.train = plain;
  out.train.insert(out.train.end(), lombard.begin(), lombard.begin() + static_cast<std::ptrdiff_t>(wanted));
  sort_by_corpus_order(out.train, corpus);
  out.lombard_fraction = fraction;
  return out;
}

void validate_split(const CorpusSplit& split, const Corpus& corpus) {
  std::unordered_map<std::string, int> part_of;
  const std::vector<std::string>* parts[] = {&split.train, &split.val, &split.test};
  for (int p = 0; p < 3; ++p) {
    for (const auto& id : *parts[p]) {
      AVSR_REQUIRE(corpus.contains(id), "split references unknown utterance '", id, "'");
      const auto [it, inserted] = part_of.emplace(id, p);
      AVSR_REQUIRE(inserted, "utterance '", id, "' appears in more than one split part");
    }
  }
  if (split.protocol == SplitProtocol::subject_independent) {
    std::unordered_map<std::string, int> spk_part;
    for (int p = 0; p < 3; ++p) {
      for (const auto& id : *parts[p]) {
        const auto& spk = corpus.at(id).speaker_id;
        const auto [it, inserted] = spk_part.emplace(spk, p);
        AVSR_REQUIRE(inserted || it->second == p, "speaker '", spk,
                     "' appears in more than one split part");
      }
    }
  }
}

void write_split(const std::filesystem::path& path, const CorpusSplit& split) {
  nlohmann::ordered_json j;
  j["protocol"] = to_string(split.protocol);
  j["lombard_fraction"] = split.lombard_fraction;
  j["train"] = split.train;
  j["val"] = split.val;
  j["test"] = split.test;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(1) << '\n';
}

CorpusSplit read_split(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    nlohmann::json j;
    is >> j;
    CorpusSplit s;
    s.protocol = parse_protocol(j.at("protocol").get<std::string>());
    s.lombard_fraction = j.value("lombard_fraction", 0.0);
    s.train = j.at("train").get<std::vector<std::string>>();
    s.val = j.at("val").get<std::vector<std::string>>();
    s.test = j.at("test").get<std::vector<std::string>>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Disk media

AudioSignal DiskMediaSource::audio(const UtteranceMeta& utt) const {
  AVSR_REQUIRE(!utt.audio_ref.empty(), "utterance '", utt.id, "' has no audio reference");
  return read_wav(root_ / utt.audio_ref);
}

FrameSequence DiskMediaSource::video(const UtteranceMeta& utt) const {
  AVSR_REQUIRE(!utt.video_ref.empty(), "utterance '", utt.id, "' has no video reference");
  return read_frame_stack(root_ / utt.video_ref);
}

LandmarkTrack DiskMediaSource::landmarks(const UtteranceMeta& utt) const {
  AVSR_REQUIRE(!utt.landmarks_ref.empty(), "utterance '", utt.id, "' has no landmark reference");
  return read_landmark_track(root_ / utt.landmarks_ref);
}

// ---------------------------------------------------------------------------
// Fixture corpus

namespace {

constexpr double kPi = 3.14159265358979323846;

bool is_vowel(int label) {
  if (label == Charset::kSpace || label == Charset::kBlank) return false;
  const char c = Charset::char_of(label);
  return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u';
}

struct ToneSpec {
  double f1, f2, f3;
};

ToneSpec tone_of(int label) {
  const int i = label - 1;  // 0..26
  const double f1 = 300.0 + 70.0 * (i % 9);
  const double f2 = 1100.0 + 500.0 * (i / 9) + 35.0 * (i % 9);
  return {f1, f2, 2.0 * f2};
}

// Mouth opening (vertical, horizontal) in [0, 1] for one output unit.
std::pair<double, double> viseme_of(int label) {
  if (label == Charset::kBlank) return {0.05, 0.5};
  if (label == Charset::kSpace) return {0.1, 0.5};
  switch (Charset::char_of(label)) {
    case 'a': return {1.0, 0.8};
    case 'e': return {0.6, 1.0};
    case 'i': return {0.4, 1.0};
    case 'o': return {0.9, 0.2};
    case 'u': return {0.5, 0.1};
    case 'b':
    case 'm':
    case 'p': return {0.0, 0.5};
    case 'f':
    case 'v': return {0.15, 0.6};
    default: break;
  }
  const int i = label - 1;
  return {0.2 + 0.5 * ((i * 7) % 5) / 4.0, 0.3 + 0.6 * ((i * 3) % 4) / 3.0};
}

struct SpeakerVoice {
  double freq_factor;
  double gain;
};

SpeakerVoice voice_of(std::uint64_t seed, const std::string& speaker) {
  Rng r = Rng(seed).fork("voice:" + speaker);
  return {1.0 + r.uniform(-0.03, 0.03), r.uniform(0.7, 1.3)};
}

// Similarity transform of the reference face into the frame.
struct Pose {
  double scale, cos_r, sin_r, tx, ty, cx, cy;
  Point2 apply(Point2 p) const {
    const double dx = p.x - cx, dy = p.y - cy;
    return {scale * (cos_r * dx - sin_r * dy) + cx + tx, scale * (sin_r * dx + cos_r * dy) + cy + ty};
  }
  Point2 invert(Point2 p) const {
    const double dx = (p.x - cx - tx) / scale, dy = (p.y - cy - ty) / scale;
    return {cos_r * dx + sin_r * dy + cx, -sin_r * dx + cos_r * dy + cy};
  }
};

// Reference geometry; profile faces are the frontal layout scaled down.
struct FaceGeometry {
  double scale, cx, cy;
  Point2 map(double x, double y) const { return {cx + scale * (x - 112.0), cy + scale * (y - 160.0)}; }
};

FaceGeometry geometry_for(const FixtureOptions& o) {
  const double s = o.view == View::frontal ? 1.0 : 0.45;
  return {s, o.frame_width / 2.0, o.frame_height * (160.0 / 300.0)};
}

constexpr int kMouthContourPoints = 8;

double ellipse_value(Point2 q, Point2 c, double ax, double ay) {
  const double dx = (q.x - c.x) / ax, dy = (q.y - c.y) / ay;
  return dx * dx + dy * dy;
}

}  // namespace

struct FixtureCorpus::Timeline {
  std::vector<int> frame_label;  // blank for silence
};

FixtureCorpus::FixtureCorpus(Corpus corpus, FixtureOptions options, std::uint64_t seed)
    : corpus_(std::move(corpus)), options_(options), seed_(seed) {}

FixtureCorpus::Timeline FixtureCorpus::timeline(const UtteranceMeta& utt) const {
  Timeline tl;
  tl.frame_label.assign(options_.lead_frames, Charset::kBlank);
  for (int label : Charset::encode(transcript(utt.words))) {
    int frames = options_.frames_per_char;
    if (utt.condition == Condition::L && is_vowel(label)) frames += options_.lombard_vowel_extra_frames;
    tl.frame_label.insert(tl.frame_label.end(), frames, label);
  }
  tl.frame_label.insert(tl.frame_label.end(), options_.tail_frames, Charset::kBlank);
  return tl;
}

int FixtureCorpus::frame_count(const UtteranceMeta& utt) const {
  return static_cast<int>(timeline(utt).frame_label.size());
}

AudioSignal FixtureCorpus::audio(const UtteranceMeta& utt) const {
  const auto tl = timeline(utt);
  const auto voice = voice_of(seed_, utt.speaker_id);
  const bool lombard = utt.condition == Condition::L;
  const double shift = voice.freq_factor * (lombard ? options_.lombard_freq_shift : 1.0);
  const double tilt = lombard ? options_.lombard_tilt : 1.0;
  const double gain = 0.1 * voice.gain * (lombard ? options_.lombard_gain : 1.0);
  Rng noise = Rng(seed_).fork("audio:" + utt.id);

  const auto n_frames = tl.frame_label.size();
  std::vector<double> out(n_frames * kSamplesPerFrame);
  constexpr int kRamp = 80;
  std::size_t seg_start = 0;
  while (seg_start < n_frames) {
    std::size_t seg_end = seg_start;
    while (seg_end < n_frames && tl.frame_label[seg_end] == tl.frame_label[seg_start]) ++seg_end;
    // Consecutive identical letters (e.g. "ee") are separate segments.
    const int label = tl.frame_label[seg_start];
    const std::size_t per = label == Charset::kBlank ? seg_end - seg_start
                            : static_cast<std::size_t>(options_.frames_per_char +
                                                       (lombard && is_vowel(label) ? options_.lombard_vowel_extra_frames : 0));
    for (std::size_t s0 = seg_start; s0 < seg_end; s0 += per) {
      if (label == Charset::kBlank) break;
      const auto tone = tone_of(label);
      const double phase = noise.uniform(0.0, 2.0 * kPi);
      const std::size_t a = s0 * kSamplesPerFrame;
      const std::size_t b = std::min(seg_end, s0 + per) * kSamplesPerFrame;
      for (std::size_t n = a; n < b; ++n) {
        const double t = static_cast<double>(n) / kSampleRate;
        const auto k = static_cast<double>(n - a), rem = static_cast<double>(b - 1 - n);
        const double env = std::min({1.0, 0.5 - 0.5 * std::cos(kPi * std::min(k, kRamp * 1.0) / kRamp),
                                     0.5 - 0.5 * std::cos(kPi * std::min(rem, kRamp * 1.0) / kRamp)});
        const double w = 2.0 * kPi * shift * t;
        out[n] = gain * env *
                 (std::sin(w * tone.f1 + phase) + 0.6 * tilt * std::sin(w * tone.f2 + 0.7 * phase) +
                  0.25 * tilt * tilt * std::sin(w * tone.f3 + 0.3 * phase));
      }
    }
    seg_start = seg_end;
  }
  for (auto& s : out) s += 1e-3 * gain * noise.normal();
  return AudioSignal(std::move(out));
}

LandmarkSet FixtureCorpus::reference_landmarks(const FixtureOptions& options) {
  const auto g = geometry_for(options);
  LandmarkSet set;
  set.set(LandmarkSet::kLeftEyeOuter, g.map(62, 120));
  set.set(LandmarkSet::kLeftEyeInner, g.map(96, 120));
  set.set(LandmarkSet::kRightEyeInner, g.map(128, 120));
  set.set(LandmarkSet::kRightEyeOuter, g.map(162, 120));
  set.set(LandmarkSet::kNoseTip, g.map(112, 160));
  for (int k = 0; k < kMouthContourPoints; ++k) {
    const double a = 2.0 * kPi * k / kMouthContourPoints;
    set.set(std::string(LandmarkSet::kMouthPrefix) + std::to_string(k),
            g.map(112 + 28 * std::cos(a), 200 + 6 * std::sin(a)));
  }
  return set;
}

namespace {

Pose utterance_pose(std::uint64_t seed, const std::string& id, const FixtureOptions& o) {
  Rng r = Rng(seed).fork("pose:" + id);
  const double rot = r.uniform(-6.0, 6.0) * kPi / 180.0;
  return {r.uniform(0.92, 1.08), std::cos(rot), std::sin(rot), r.uniform(-8.0, 8.0),
          r.uniform(-8.0, 8.0), o.frame_width / 2.0, o.frame_height / 2.0};
}

}  // namespace

LandmarkTrack FixtureCorpus::landmarks(const UtteranceMeta& utt) const {
  const auto tl = timeline(utt);
  const auto g = geometry_for(options_);
  Pose pose = utterance_pose(seed_, utt.id, options_);
  Rng jitter = Rng(seed_).fork("landmarks:" + utt.id);
  Rng motion = Rng(seed_).fork("motion:" + utt.id);
  const double mouth_scale = utt.condition == Condition::L ? options_.lombard_mouth_scale : 1.0;
  LandmarkTrack track;
  for (int label : tl.frame_label) {
    Pose p = pose;
    p.tx += motion.normal() * 0.5;
    p.ty += motion.normal() * 0.5;
    const auto [open, wide] = viseme_of(label);
    const double mh = (2.0 + 16.0 * open * mouth_scale), mw = 24.0 + 10.0 * wide;
    LandmarkSet set;
    auto put = [&](const std::string& name, double x, double y) {
      const auto q = p.apply(g.map(x, y));
      set.set(name, {q.x + 0.3 * jitter.normal(), q.y + 0.3 * jitter.normal()});
    };
    put(LandmarkSet::kLeftEyeOuter, 62, 120);
    put(LandmarkSet::kLeftEyeInner, 96, 120);
    put(LandmarkSet::kRightEyeInner, 128, 120);
    put(LandmarkSet::kRightEyeOuter, 162, 120);
    put(LandmarkSet::kNoseTip, 112, 160);
    for (int k = 0; k < kMouthContourPoints; ++k) {
      const double a = 2.0 * kPi * k / kMouthContourPoints;
      put(std::string(LandmarkSet::kMouthPrefix) + std::to_string(k), 112 + (mw + 4) * std::cos(a),
          200 + (mh + 4) * std::sin(a));
    }
    track.push_back(std::move(set));
  }
  return track;
}

FrameSequence FixtureCorpus::video(const UtteranceMeta& utt) const {
  const auto tl = timeline(utt);
  const auto g = geometry_for(options_);
  Pose pose = utterance_pose(seed_, utt.id, options_);
  Rng motion = Rng(seed_).fork("motion:" + utt.id);
  const double mouth_scale = utt.condition == Condition::L ? options_.lombard_mouth_scale : 1.0;
  const std::uint64_t tex_seed = splitmix64(seed_ ^ hash_string(utt.speaker_id));
  FrameSequence seq;
  const int H = options_.frame_height, W = options_.frame_width;
  for (int label : tl.frame_label) {
    Pose p = pose;
    p.tx += motion.normal() * 0.5;
    p.ty += motion.normal() * 0.5;
    const auto [open, wide] = viseme_of(label);
    const double mh = (2.0 + 16.0 * open * mouth_scale), mw = 24.0 + 10.0 * wide;
    GrayImage img(H, W);
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const Point2 fr = p.invert({static_cast<double>(x), static_cast<double>(y)});
        // Back to unscaled reference coordinates.
        const Point2 q{112.0 + (fr.x - g.cx) / g.scale, 160.0 + (fr.y - g.cy) / g.scale};
        double v = 90.0;
        if (ellipse_value(q, {112, 160}, 95, 130) <= 1.0) v = 170.0;
        if (ellipse_value(q, {79, 120}, 17, 7) <= 1.0 || ellipse_value(q, {145, 120}, 17, 7) <= 1.0) v = 40.0;
        if (ellipse_value(q, {112, 160}, 8, 12) <= 1.0) v = 125.0;
        if (ellipse_value(q, {112, 200}, mw + 5, mh + 5) <= 1.0) v = 110.0;
        if (mh > 0.5 && ellipse_value(q, {112, 200}, mw, mh) <= 1.0) v = 25.0;
        const auto h = splitmix64(tex_seed ^ (static_cast<std::uint64_t>(y) << 20) ^ static_cast<std::uint64_t>(x));
        v += static_cast<double>(h % 7) - 3.0;
        img.at(y, x) = static_cast<float>(v);
      }
    }
    seq.frames.push_back(std::move(img));
  }
  return seq;
}

void FixtureCorpus::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  Corpus out(corpus_.grammar());
  for (auto u : corpus_.utterances()) {
    u.audio_ref = "audio/" + u.id + ".wav";
    u.video_ref = "video/" + u.id + ".avfs";
    u.landmarks_ref = "landmarks/" + u.id + ".json";
    write_wav(dir / u.audio_ref, audio(u));
    write_frame_stack(dir / u.video_ref, video(u));
    write_landmark_track(dir / u.landmarks_ref, landmarks(u));
    out.add(std::move(u));
  }
  write_manifest(dir / "manifest.jsonl", out);
}

FixtureCorpus synth_fixture_corpus(int n_speakers, int utt_per_condition,
                                   const SentenceGrammar& grammar, Rng& rng, FixtureOptions options) {
  AVSR_REQUIRE(n_speakers >= 1, "fixture corpus needs at least one speaker");
  AVSR_REQUIRE(utt_per_condition >= 0, "utterances per condition must be non-negative");
  AVSR_REQUIRE(static_cast<std::uint64_t>(utt_per_condition) <= grammar.sentence_count(),
               "grammar cannot supply ", utt_per_condition, " distinct sentences");
  Corpus corpus(grammar);
  for (int s = 0; s < n_speakers; ++s) {
    char spk[16];
    std::snprintf(spk, sizeof spk, "s%02d", s + 1);
    const Gender gender = s % 2 == 0 ? Gender::female : Gender::male;
    for (Condition cond : {Condition::NL, Condition::L}) {
      std::set<std::string> used;
      for (int i = 0; i < utt_per_condition; ++i) {
        Sentence words;
        do {
          words = generate_sentence(grammar, rng);
        } while (!used.insert(transcript(words)).second);
        char id[48];
        std::snprintf(id, sizeof id, "%s_%s_%03d", spk, cond == Condition::L ? "l" : "nl", i);
        UtteranceMeta u;
        u.id = id;
        u.speaker_id = spk;
        u.gender = gender;
        u.condition = cond;
        u.view = options.view;
        u.words = std::move(words);
        corpus.add(std::move(u));
      }
    }
  }
  return FixtureCorpus(std::move(corpus), options, rng.next_u64());
}

}  // namespace avsr
