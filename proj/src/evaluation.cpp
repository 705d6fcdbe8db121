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

#include "avsr/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "avsr/checkpoint.hpp"

namespace avsr {

// ---------------------------------------------------------------------------
// Word error rate

EditCounts word_edits(std::span<const std::string> ref, std::span<const std::string> hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<int> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> int& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = static_cast<int>(i);
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const int diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      at(i, j) = std::min({diag, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }
  EditCounts e;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      if (ref[i - 1] != hyp[j - 1]) ++e.substitutions;
      --i;
      --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++e.deletions;
      --i;
    } else {
      ++e.insertions;
      --j;
    }
  }
  return e;
}

double wer(std::span<const std::string> reference, std::span<const std::string> hypothesis) {
  AVSR_REQUIRE(!reference.empty(), "WER needs a non-empty reference");
  return static_cast<double>(word_edits(reference, hypothesis).total()) / static_cast<double>(reference.size());
}

double wer(const std::string& reference, const std::string& hypothesis) {
  const auto r = split_words(reference), h = split_words(hypothesis);
  return wer(std::span<const std::string>(r), std::span<const std::string>(h));
}

// ---------------------------------------------------------------------------
// Decoding

Decoder Decoder::beam(int width) {
  AVSR_REQUIRE(width >= 1, "beam width must be at least 1, got ", width);
  return {Kind::beam, width};
}

Decoder Decoder::parse(const std::string& s) {
  if (s == "greedy") return greedy();
  if (s.rfind("beam:", 0) == 0) {
    std::size_t used = 0;
    int w = 0;
    try {
      w = std::stoi(s.substr(5), &used);
    } catch (const std::exception&) {
      used = 0;
    }
    AVSR_REQUIRE(used > 0 && used == s.size() - 5, "cannot parse beam width in '", s, "'");
    return beam(w);
  }
  throw PreconditionError("unknown decoder '" + s + "' (expected greedy or beam:W)");
}

std::string Decoder::to_string() const {
  return kind == Kind::greedy ? "greedy" : "beam:" + std::to_string(beam_width);
}

ctc::LabelSequence Decoder::decode(const ctc::LogProbs& logprobs) const {
  return kind == Kind::greedy ? ctc::greedy_decode(logprobs) : ctc::beam_decode(logprobs, beam_width);
}

// ---------------------------------------------------------------------------
// Recognizers

std::unique_ptr<ModelRecognizer> ModelRecognizer::from_checkpoint(const std::filesystem::path& path) {
  return std::make_unique<ModelRecognizer>(model_from_checkpoint(load_checkpoint(path)));
}

ctc::LogProbs one_hot_path(const std::string& text, double confidence) {
  AVSR_REQUIRE(confidence > 1.0 / Charset::kSize && confidence < 1.0, "confidence must lie in (1/K, 1)");
  const auto labels = Charset::encode(text);
  std::vector<int> path = {Charset::kBlank};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i > 0 && labels[i] == labels[i - 1]) path.push_back(Charset::kBlank);
    path.push_back(labels[i]);
  }
  path.push_back(Charset::kBlank);
  const double rest = std::log((1.0 - confidence) / (Charset::kSize - 1));
  ctc::LogProbs lp = ctc::LogProbs::Constant(static_cast<int>(path.size()), Charset::kSize, rest);
  for (std::size_t t = 0; t < path.size(); ++t) lp(static_cast<int>(t), path[t]) = std::log(confidence);
  return lp;
}

ScriptedRecognizer::ScriptedRecognizer(Modality modality, ErrorRate error_rate, std::uint64_t seed)
    : modality_(modality), error_rate_(std::move(error_rate)), seed_(seed) {
  AVSR_REQUIRE(error_rate_ != nullptr, "scripted recognizer needs an error rate");
}

std::unique_ptr<ScriptedRecognizer> ScriptedRecognizer::oracle(Modality modality) {
  return std::make_unique<ScriptedRecognizer>(modality, [](const Sample&) { return 0.0; }, 0);
}

ctc::LogProbs ScriptedRecognizer::logprobs(const Sample& sample) {
  const double p = std::clamp(error_rate_(sample), 0.0, 1.0);
  Rng rng(splitmix64(seed_ ^ hash_string(sample.utt_id + "@" + sample.snr.label() + "@" + to_string(sample.treatment))));
  const auto& grammar = SentenceGrammar::grid();
  Sentence words = sample.words;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (!rng.bernoulli(p)) continue;
    const auto& inventory = grammar.slots()[i % SentenceGrammar::kSlotCount].words;
    if (inventory.size() < 2) continue;
    std::string w;
    do {
      w = inventory[rng.uniform_int(inventory.size())];
    } while (w == words[i]);
    words[i] = w;
  }
  return one_hot_path(transcript(words));
}

ctc::LogProbs BlankRecognizer::logprobs(const Sample& sample) {
  const int T = std::max(sample.frames, 1);
  ctc::LogProbs lp = ctc::LogProbs::Constant(T, Charset::kSize, std::log(0.01 / (Charset::kSize - 1)));
  lp.col(Charset::kBlank).setConstant(std::log(0.99));
  return lp;
}

// ---------------------------------------------------------------------------
// Single evaluations

double EvalResult::wer() const {
  AVSR_REQUIRE(words > 0, "WER of an evaluation without reference words");
  return static_cast<double>(edits) / words;
}

Evaluator::Evaluator(EvalSource source, View view) : source_(std::move(source)), view_(view) {
  AVSR_REQUIRE(source_.corpus && source_.media, "evaluation needs a corpus and a media source");
}

const SampleBuilder& Evaluator::builder_for(Modality m) {
  auto& slot = uses_video(m) ? with_video_ : audio_only_;
  if (!slot) {
    SampleOptions o;
    o.audio = true;
    o.video = uses_video(m);
    o.roi = RoiSpec::for_view(view_);
    o.roi_pipeline = source_.roi_pipeline;
    slot = std::make_unique<SampleBuilder>(*source_.corpus, *source_.media, source_.reference, source_.stats,
                                           source_.noise, o);
  }
  return *slot;
}

EvalResult Evaluator::evaluate(Recognizer& recognizer, SpeechCondition test, const SnrCondition& snr,
                               const Decoder& decoder) {
  const auto items = select_test(source_.test_ids, *source_.corpus, test);
  AVSR_REQUIRE(!items.empty(), "the test set has no ", test == SpeechCondition::NL ? "plain" : "Lombard",
               " recordings to evaluate the ", to_string(test), " condition");
  return evaluate_items(recognizer, items, snr, decoder);
}

EvalResult Evaluator::evaluate_items(Recognizer& recognizer, const std::vector<SampleSpec>& items,
                                     const SnrCondition& snr, const Decoder& decoder) {
  AVSR_REQUIRE(!items.empty(), "nothing to evaluate");
  const SampleBuilder& builder = builder_for(recognizer.modality());
  EvalResult out;
  for (const auto& item : items) {
    Rng rng(eval_noise_seed(item.utt_id, snr, source_.noise_seed));
    const Sample s = builder.build(item, snr, AugmentMode::test, NoiseBank::Region::test, rng);
    UtteranceResult u;
    u.utt_id = item.utt_id;
    u.reference = transcript(s.words);
    u.hypothesis = Charset::decode(decoder.decode(recognizer.logprobs(s)));
    const auto ref = split_words(u.reference), hyp = split_words(u.hypothesis);
    u.edits = word_edits(ref, hyp);
    u.words = static_cast<int>(ref.size());
    out.edits += u.edits.total();
    out.words += u.words;
    out.utterances.push_back(std::move(u));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cells and tables

std::pair<TrainCondition, SpeechCondition> parse_condition_label(const std::string& label) {
  const auto dash = label.rfind('-');
  AVSR_REQUIRE(dash != std::string::npos && dash > 0 && dash + 1 < label.size(), "condition label '", label,
               "' is not of the form X-Y");
  return {TrainCondition::parse_label(label.substr(0, dash)), parse_speech_condition(label.substr(dash + 1))};
}

std::string CellKey::label() const { return train.label() + "-" + to_string(test); }

std::string CellKey::render() const {
  return to_string(modality) + "/" + to_string(view) + "/" + label() + "/" + snr.label();
}

CellKey CellKey::parse(const std::string& s) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  for (std::string p; std::getline(ss, p, '/');) parts.push_back(p);
  AVSR_REQUIRE(parts.size() == 4, "cell key '", s, "' is not MODALITY/VIEW/X-Y/SNR");
  CellKey k;
  k.modality = parse_modality(parts[0]);
  k.view = parse_view(parts[1]);
  std::tie(k.train, k.test) = parse_condition_label(parts[2]);
  k.snr = SnrCondition::parse(parts[3]);
  return k;
}

void ResultTable::add(ExperimentCell cell) {
  AVSR_REQUIRE(!index_.count(cell.key), "duplicate result cell ", cell.key.render());
  AVSR_REQUIRE(std::isfinite(cell.wer) && cell.wer >= 0.0, "cell ", cell.key.render(), " has invalid WER ", cell.wer);
  AVSR_REQUIRE(cell.n_words >= 0, "cell ", cell.key.render(), " has a negative word count");
  index_.emplace(cell.key, cells_.size());
  cells_.push_back(std::move(cell));
}

const ExperimentCell* ResultTable::find(const CellKey& key) const {
  const auto it = index_.find(key);
  return it == index_.end() ? nullptr : &cells_[it->second];
}

namespace {

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void finish_write(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string percent(double wer) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * wer);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string f; std::getline(ss, f, ',');) out.push_back(f);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void write_results_csv(std::ostream& out, const ResultTable& table) {
  out << kResultColumns << "\n";
  for (const auto& c : table.cells()) {
    AVSR_REQUIRE(c.manifest_id.find_first_of(",\n\r") == std::string::npos, "manifest id of ", c.key.render(),
                 " contains a comma or line break");
    out << to_string(c.key.modality) << ',' << to_string(c.key.view) << ',' << c.key.train.to_string() << ','
        << to_string(c.key.test) << ',' << c.key.snr.label() << ',' << format_double(c.wer) << ',' << c.n_words
        << ',' << c.manifest_id << "\n";
  }
}

void write_results_csv(const std::filesystem::path& path, const ResultTable& table) {
  auto out = open_for_write(path);
  write_results_csv(out, table);
  finish_write(out, path);
}

ResultTable read_results_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  AVSR_REQUIRE(line == kResultColumns, path.string(), ": expected header '", kResultColumns, "', found '", line, "'");
  ResultTable table;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    AVSR_REQUIRE(f.size() == 8, path.string(), ":", lineno, ": expected 8 fields, found ", f.size());
    try {
      ExperimentCell c;
      c.key.modality = parse_modality(f[0]);
      c.key.view = parse_view(f[1]);
      c.key.train = TrainCondition::parse(f[2]);
      c.key.test = parse_speech_condition(f[3]);
      c.key.snr = SnrCondition::parse(f[4]);
      std::size_t used = 0;
      c.wer = std::stod(f[5], &used);
      AVSR_REQUIRE(used == f[5].size(), "bad WER '", f[5], "'");
      c.n_words = std::stoi(f[6], &used);
      AVSR_REQUIRE(used == f[6].size(), "bad word count '", f[6], "'");
      c.manifest_id = f[7];
      table.add(std::move(c));
    } catch (const std::invalid_argument&) {
      throw PreconditionError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    } catch (const PreconditionError& e) {
      throw PreconditionError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// Model providers

std::string ModelKey::describe() const {
  std::string s = to_string(modality) + " " + to_string(view) + " " + train.to_string();
  if (snr_level) s += " snr " + std::to_string(*snr_level);
  return s;
}

namespace {

TrainCondition canonical(const TrainCondition& t) {
  return t.kind == TrainCondition::Kind::mix && t.fraction == 0.0 ? TrainCondition::nl() : t;
}

std::string condition_dir(const TrainCondition& t) {
  const TrainCondition c = canonical(t);
  if (c.kind != TrainCondition::Kind::mix) return c.to_string();
  std::string s = c.to_string();
  s[3] = '-';  // mix:0.25 -> mix-0.25
  return s;
}

}  // namespace

std::filesystem::path CheckpointStore::model_dir(const std::filesystem::path& root, View view,
                                                 const TrainCondition& train) {
  return root / to_string(view) / condition_dir(train);
}

std::filesystem::path CheckpointStore::checkpoint_path(const ModelKey& key) const {
  const auto dir = model_dir(root_, key.view, key.train);
  if (key.snr_level) {
    AVSR_REQUIRE(key.modality == Modality::A, "SNR-specific models are audio-only");
    return dir / "snr_specific" / ("audio_snr" + std::to_string(*key.snr_level) + ".ckpt");
  }
  switch (key.modality) {
    case Modality::A: return dir / "audio.ckpt";
    case Modality::V: return dir / "visual.ckpt";
    case Modality::AV: return dir / "finetune.ckpt";
  }
  return dir;
}

std::optional<std::string> CheckpointStore::missing(const ModelKey& key) const {
  const auto p = checkpoint_path(key);
  if (std::filesystem::exists(p)) return std::nullopt;
  return "no checkpoint at " + p.string();
}

std::unique_ptr<Recognizer> CheckpointStore::load(const ModelKey& key) {
  const auto path = checkpoint_path(key);
  const Checkpoint ckpt = load_checkpoint(path);
  AVSR_REQUIRE(ckpt.modality == key.modality, path.string(), " holds a ", to_string(ckpt.modality),
               " model, expected ", to_string(key.modality));
  if (ckpt.meta.contains("view")) {
    AVSR_REQUIRE(ckpt.meta.at("view") == to_string(key.view), path.string(), " was trained on the ",
                 ckpt.meta.at("view").get<std::string>(), " view, expected ", to_string(key.view));
  }
  if (ckpt.meta.contains("train_condition")) {
    const std::string want = canonical(key.train).to_string();
    AVSR_REQUIRE(ckpt.meta.at("train_condition") == want, path.string(), " was trained on ",
                 ckpt.meta.at("train_condition").get<std::string>(), " speech, expected ", want);
  }
  return std::make_unique<ModelRecognizer>(model_from_checkpoint(ckpt));
}

std::string CheckpointStore::manifest_id(const ModelKey& key) const {
  const auto manifest = checkpoint_path(key).parent_path() / "run_manifest.json";
  std::ifstream in(manifest);
  if (!in) return "";
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.contains("manifest_id")) return "";
  return j.at("manifest_id").get<std::string>();
}

StubProvider::ErrorModel StubProvider::condition_sensitive() {
  return [](const ModelKey& key, const Sample& s) {
    // Lombard exposure of the training data: 0 plain only, 1 Lombard only.
    double exposure = 0.0;
    switch (key.train.kind) {
      case TrainCondition::Kind::NL: exposure = 0.0; break;
      case TrainCondition::Kind::L: case TrainCondition::Kind::CL: exposure = 1.0; break;
      case TrainCondition::Kind::mix: exposure = std::min(1.0, 2.0 * key.train.fraction); break;
    }
    const double lombard_test = s.treatment == SpeechCondition::NL ? 0.0 : 1.0;
    const double mismatch = std::abs(exposure - lombard_test);
    const double noise = s.snr.is_clean() ? 0.0 : (6.0 - s.snr.level_db()) / 21.0;
    switch (key.modality) {
      case Modality::V: return 0.22 + 0.03 * mismatch + (key.view == View::profile ? 0.12 : 0.0);
      case Modality::A: return 0.02 + 0.55 * noise * noise + 0.06 * mismatch;
      case Modality::AV: return 0.015 + 0.25 * noise * noise + 0.04 * mismatch;
    }
    return 0.0;
  };
}

std::unique_ptr<Recognizer> StubProvider::load(const ModelKey& key) {
  auto model = model_;
  return std::make_unique<ScriptedRecognizer>(
      key.modality, [model, key](const Sample& s) { return model(key, s); },
      splitmix64(seed_ ^ hash_string(key.describe())));
}

std::string StubProvider::manifest_id(const ModelKey&) const { return "stub"; }

// ---------------------------------------------------------------------------
// Grids

std::vector<SnrCondition> noisy_levels() {
  std::vector<SnrCondition> out;
  for (int l : kSnrLevelsDb) out.push_back(SnrCondition::noisy(l));
  return out;
}

namespace {

std::pair<TrainCondition, SpeechCondition> pair_of(const char* label) { return parse_condition_label(label); }

}  // namespace

GridConfig GridConfig::full(SplitProtocol protocol) {
  GridConfig c;
  c.protocol = protocol;
  GridBlock video;
  video.modalities = {Modality::V};
  video.conditions = {pair_of("L-L"), pair_of("NL-L"), pair_of("NL-NL")};
  video.snrs = {SnrCondition::clean()};
  video.views = {View::frontal};
  if (protocol == SplitProtocol::subject_independent) video.views.push_back(View::profile);
  GridBlock curves;
  curves.modalities = {Modality::A, Modality::AV};
  curves.conditions = {pair_of("L-L"), pair_of("NL-L"), pair_of("NL-NL"), pair_of("NL-CL")};
  curves.snrs = noisy_levels();
  curves.views = {View::frontal};
  c.blocks = {video, curves};
  return c;
}

GridConfig GridConfig::full_snr_specific() {
  GridConfig c;
  c.protocol = SplitProtocol::multi_speaker;
  c.snr_specific = true;
  GridBlock curves;
  curves.modalities = {Modality::A};
  curves.conditions = {pair_of("L-L"), pair_of("NL-L"), pair_of("NL-NL"), pair_of("NL-CL")};
  curves.snrs = noisy_levels();
  curves.views = {View::frontal};
  c.blocks = {curves};
  return c;
}

void GridConfig::validate() const {
  AVSR_REQUIRE(!blocks.empty(), "grid has no blocks");
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& blk = blocks[b];
    AVSR_REQUIRE(!blk.modalities.empty() && !blk.conditions.empty() && !blk.snrs.empty() && !blk.views.empty(),
                 "grid block ", b + 1, " has an empty dimension");
    if (snr_specific) {
      for (Modality m : blk.modalities) {
        AVSR_REQUIRE(m == Modality::A, "SNR-specific grids are audio-only; block ", b + 1, " asks for ",
                     to_string(m));
      }
      for (const auto& s : blk.snrs) {
        AVSR_REQUIRE(!s.is_clean(), "SNR-specific grids have no clean model; block ", b + 1, " asks for clean");
      }
    }
  }
}

void to_json(nlohmann::json& j, const GridConfig& c) {
  j = nlohmann::json{{"protocol", to_string(c.protocol)},
                     {"snr_specific", c.snr_specific},
                     {"decoder", c.decoder.to_string()},
                     {"blocks", nlohmann::json::array()}};
  for (const auto& b : c.blocks) {
    nlohmann::json jb;
    for (Modality m : b.modalities) jb["modalities"].push_back(to_string(m));
    for (const auto& [tr, te] : b.conditions) jb["conditions"].push_back(tr.label() + "-" + to_string(te));
    for (const auto& s : b.snrs) jb["snrs"].push_back(s.label());
    for (View v : b.views) jb["views"].push_back(to_string(v));
    j["blocks"].push_back(jb);
  }
}

void from_json(const nlohmann::json& j, GridConfig& c) {
  const SplitProtocol protocol = parse_protocol(j.value("protocol", std::string("multi_speaker")));
  const std::string preset = j.value("preset", std::string());
  if (preset == "full") {
    c = GridConfig::full(protocol);
  } else if (preset == "full_snr_specific") {
    c = GridConfig::full_snr_specific();
  } else {
    AVSR_REQUIRE(preset.empty(), "unknown grid preset '", preset, "' (expected full or full_snr_specific)");
    c = GridConfig{};
    c.protocol = protocol;
    c.snr_specific = j.value("snr_specific", false);
    for (const auto& jb : j.at("blocks")) {
      GridBlock b;
      for (const auto& m : jb.at("modalities")) b.modalities.push_back(parse_modality(m.get<std::string>()));
      for (const auto& l : jb.at("conditions")) b.conditions.push_back(parse_condition_label(l.get<std::string>()));
      if (jb.at("snrs").is_string() && jb.at("snrs") == "noisy") {
        b.snrs = noisy_levels();
      } else {
        for (const auto& s : jb.at("snrs")) b.snrs.push_back(SnrCondition::parse(s.get<std::string>()));
      }
      if (jb.contains("views")) {
        for (const auto& v : jb.at("views")) b.views.push_back(parse_view(v.get<std::string>()));
      } else {
        b.views = {View::frontal};
      }
      c.blocks.push_back(std::move(b));
    }
  }
  if (j.contains("decoder")) c.decoder = Decoder::parse(j.at("decoder").get<std::string>());
  c.validate();
}

ResultTable run_experiment_grid(const GridConfig& config, ModelProvider& models, const EvalSources& sources,
                                std::ostream* log) {
  config.validate();
  struct Job {
    CellKey cell;
    ModelKey model;
  };
  std::vector<Job> jobs;
  std::set<CellKey> seen;
  for (const auto& b : config.blocks) {
    for (View v : b.views) {
      for (Modality m : b.modalities) {
        for (const auto& [train, test] : b.conditions) {
          for (const auto& snr : b.snrs) {
            Job job{{m, v, train, test, snr}, {m, v, train, std::nullopt}};
            if (config.snr_specific) job.model.snr_level = snr.level_db();
            if (!seen.insert(job.cell).second) continue;
            jobs.push_back(job);
          }
        }
      }
    }
  }

  std::vector<std::string> problems;
  std::map<ModelKey, std::optional<std::string>> availability;
  for (const auto& job : jobs) {
    if (!sources.count(job.cell.view)) {
      problems.push_back(job.cell.render() + ": no test data for the " + to_string(job.cell.view) + " view");
      continue;
    }
    auto it = availability.find(job.model);
    if (it == availability.end()) it = availability.emplace(job.model, models.missing(job.model)).first;
    if (it->second) problems.push_back(job.cell.render() + ": " + *it->second);
  }
  if (!problems.empty()) {
    std::string msg = "cannot run the grid; " + std::to_string(problems.size()) + " of " +
                      std::to_string(jobs.size()) + " cells lack inputs:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw PreconditionError(msg);
  }

  ResultTable table;
  table.protocol = config.protocol;
  table.snr_mode = config.snr_specific ? "specific" : "augmented";
  table.decoder = config.decoder.to_string();
  std::map<View, std::unique_ptr<Evaluator>> evaluators;
  std::map<ModelKey, std::unique_ptr<Recognizer>> loaded;
  for (const auto& job : jobs) {
    auto& ev = evaluators[job.cell.view];
    if (!ev) ev = std::make_unique<Evaluator>(sources.at(job.cell.view), job.cell.view);
    auto& rec = loaded[job.model];
    if (!rec) rec = models.load(job.model);
    AVSR_REQUIRE(rec->modality() == job.cell.modality, "model for ", job.model.describe(), " is ",
                 to_string(rec->modality()));
    const EvalResult r = ev->evaluate(*rec, job.cell.test, job.cell.snr, config.decoder);
    table.add({job.cell, r.wer(), r.words, models.manifest_id(job.model)});
    if (log) *log << job.cell.render() << " wer " << percent(r.wer()) << "% over " << r.words << " words\n";
  }
  return table;
}

void SweepConfig::validate() const {
  AVSR_REQUIRE(!fractions.empty(), "fraction sweep needs at least one fraction");
  std::set<double> uniq;
  for (double f : fractions) {
    AVSR_REQUIRE(f >= 0.0 && f <= 1.0, "Lombard fraction ", f, " is outside [0, 1]");
    AVSR_REQUIRE(uniq.insert(f).second, "Lombard fraction ", f, " is listed twice");
  }
  AVSR_REQUIRE(!snrs.empty(), "fraction sweep needs at least one SNR");
}

ResultTable run_fraction_sweep(const SweepConfig& config, ModelProvider& models, const EvalSources& sources,
                               std::ostream* log) {
  config.validate();
  GridConfig grid;
  grid.protocol = config.protocol;
  grid.decoder = config.decoder;
  GridBlock b;
  b.modalities = {config.modality};
  for (double f : config.fractions) b.conditions.emplace_back(TrainCondition::mix(f), SpeechCondition::L);
  b.snrs = config.snrs;
  b.views = {config.view};
  grid.blocks = {b};
  return run_experiment_grid(grid, models, sources, log);
}

void train_fraction_models(const PipelineConfig& base, const TrainData& data, const std::vector<double>& fractions,
                           const std::filesystem::path& root, std::ostream* log) {
  for (double f : fractions) {
    const TrainCondition cond = canonical(TrainCondition::mix(f));
    const auto dir = CheckpointStore::model_dir(root, data.roi.view, cond);
    if (std::filesystem::exists(dir / "finetune.ckpt")) {
      if (log) *log << "reuse " << dir.string() << "\n";
      continue;
    }
    PipelineConfig c = base;
    c.condition = cond;
    run_full_pipeline(c, data, dir, log);
  }
}

std::vector<MonotonicityRow> fraction_monotonicity(const ResultTable& table, Modality modality, View view) {
  std::map<SnrCondition, std::vector<std::pair<double, double>>> by_snr;
  for (const auto& c : table.cells()) {
    if (c.key.modality != modality || c.key.view != view || c.key.test != SpeechCondition::L ||
        c.key.train.kind != TrainCondition::Kind::mix) {
      continue;
    }
    by_snr[c.key.snr].emplace_back(c.key.train.fraction, c.wer);
  }
  std::vector<MonotonicityRow> out;
  for (auto& [snr, pts] : by_snr) {
    std::sort(pts.begin(), pts.end());
    MonotonicityRow row;
    row.snr = snr;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      row.fractions.push_back(pts[i].first);
      row.wers.push_back(pts[i].second);
      if (i > 0 && pts[i].second > pts[i - 1].second) row.non_increasing = false;
    }
    out.push_back(std::move(row));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

std::string title_case(View v) { return v == View::frontal ? "Frontal" : "Profile"; }

// Columns in the order the video tables use, then any others.
std::vector<std::string> ordered_labels(const std::set<std::string>& labels) {
  std::vector<std::string> out;
  for (const char* l : {"L-L", "NL-L", "NL-NL", "NL-CL"}) {
    if (labels.count(l)) out.emplace_back(l);
  }
  for (const auto& l : labels) {
    if (std::find(out.begin(), out.end(), l) == out.end()) out.push_back(l);
  }
  return out;
}

struct Series {
  std::string name;
  Modality modality;
  std::string label;
  std::vector<std::pair<int, double>> points;  // (dB, WER)
};

struct Plot {
  std::string file;
  std::string title;
  std::vector<Series> series;
};

std::vector<Plot> plan_plots(const ResultTable& table) {
  // (view, family) -> series keyed by (modality, label)
  std::map<std::pair<View, bool>, std::map<std::pair<Modality, std::string>, Series>> groups;
  for (const auto& c : table.cells()) {
    if (c.key.snr.is_clean()) continue;
    const bool fraction = c.key.train.kind == TrainCondition::Kind::mix;
    auto& s = groups[{c.key.view, fraction}][{c.key.modality, c.key.label()}];
    s.modality = c.key.modality;
    s.label = c.key.label();
    s.name = to_string(c.key.modality) + ": " + c.key.label();
    s.points.emplace_back(c.key.snr.level_db(), c.wer);
  }
  std::vector<Plot> plots;
  for (auto& [gk, series] : groups) {
    const auto [view, fraction] = gk;
    std::set<Modality> mods;
    for (const auto& [sk, s] : series) mods.insert(sk.first);
    std::string modset;
    for (Modality m : mods) modset += (modset.empty() ? "" : "-") + to_string(m);
    Plot p;
    p.file = to_string(table.protocol) + "_" + to_string(view) + "_" + modset + (fraction ? "_fraction" : "") +
             (table.snr_mode == "augmented" ? "" : "_" + table.snr_mode) + ".svg";
    p.title = "WER vs SNR, " + to_string(table.protocol) + ", " + to_string(view) + " (" + modset +
              (fraction ? ", Lombard fraction" : "") + ", " + table.snr_mode + ")";
    std::vector<std::string> order;
    std::set<std::string> labels;
    for (const auto& [sk, s] : series) labels.insert(sk.second);
    for (Modality m : mods) {
      for (const auto& l : ordered_labels(labels)) {
        auto it = series.find({m, l});
        if (it == series.end()) continue;
        std::sort(it->second.points.begin(), it->second.points.end());
        p.series.push_back(it->second);
      }
    }
    plots.push_back(std::move(p));
  }
  return plots;
}

std::string colour_for(const std::string& label, std::size_t index) {
  static const std::map<std::string, std::string> fixed = {
      {"L-L", "#2ca02c"}, {"NL-L", "#d62728"}, {"NL-NL", "#ff7f0e"}, {"NL-CL", "#1f77b4"}};
  static const char* cycle[] = {"#9467bd", "#8c564b", "#e377c2", "#17becf", "#7f7f7f", "#bcbd22"};
  if (auto it = fixed.find(label); it != fixed.end()) return it->second;
  return cycle[index % 6];
}

std::string dash_for(Modality m) {
  switch (m) {
    case Modality::A: return "";
    case Modality::AV: return " stroke-dasharray=\"8 4\"";
    case Modality::V: return " stroke-dasharray=\"2 3\"";
  }
  return "";
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string render_svg(const Plot& p) {
  constexpr double W = 720, H = 440, left = 60, right = 200, top = 40, bottom = 50;
  const double pw = W - left - right, ph = H - top - bottom;
  int xmin = std::numeric_limits<int>::max(), xmax = std::numeric_limits<int>::min();
  double ymax = 0;
  for (const auto& s : p.series) {
    for (const auto& [x, y] : s.points) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymax = std::max(ymax, 100 * y);
    }
  }
  if (xmin == xmax) {
    xmin -= 1;
    xmax += 1;
  }
  const double ytop = std::max(10.0, std::ceil(ymax / 10.0) * 10.0);
  auto X = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto Y = [&](double y) { return top + ph - y / ytop * ph; };
  std::ostringstream o;
  o.setf(std::ios::fixed);
  o.precision(2);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << " " << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << left + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(p.title)
    << "</text>\n";
  std::set<int> xticks;
  for (const auto& s : p.series) {
    for (const auto& pt : s.points) xticks.insert(pt.first);
  }
  for (int x : xticks) {
    o << "<line x1=\"" << X(x) << "\" y1=\"" << top << "\" x2=\"" << X(x) << "\" y2=\"" << top + ph
      << "\" stroke=\"#eeeeee\"/>\n";
    o << "<text x=\"" << X(x) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">" << x << "</text>\n";
  }
  for (int k = 0; k <= 5; ++k) {
    const double y = ytop * k / 5;
    o << "<line x1=\"" << left << "\" y1=\"" << Y(y) << "\" x2=\"" << left + pw << "\" y2=\"" << Y(y)
      << "\" stroke=\"#eeeeee\"/>\n";
    o << "<text x=\"" << left - 8 << "\" y=\"" << Y(y) + 4 << "\" text-anchor=\"end\">" << y << "</text>\n";
  }
  o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  o << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">SNR (dB)</text>\n";
  o << "<text x=\"16\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << top + ph / 2 << ")\">WER (%)</text>\n";
  for (std::size_t i = 0; i < p.series.size(); ++i) {
    const auto& s = p.series[i];
    const std::string colour = colour_for(s.label, i);
    o << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\"" << dash_for(s.modality)
      << " points=\"";
    for (const auto& [x, y] : s.points) o << X(x) << "," << Y(100 * y) << " ";
    o << "\"/>\n";
    for (const auto& [x, y] : s.points) {
      o << "<circle cx=\"" << X(x) << "\" cy=\"" << Y(100 * y) << "\" r=\"3\" fill=\"" << colour << "\"/>\n";
    }
    const double ly = top + 14 + 18 * static_cast<double>(i);
    o << "<line x1=\"" << left + pw + 14 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 44 << "\" y2=\"" << ly
      << "\" stroke=\"" << colour << "\" stroke-width=\"2\"" << dash_for(s.modality) << "/>\n";
    o << "<text x=\"" << left + pw + 50 << "\" y=\"" << ly + 4 << "\">" << xml_escape(s.name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string curve_table_markdown(const Plot& p) {
  std::set<int> xs;
  for (const auto& s : p.series) {
    for (const auto& pt : s.points) xs.insert(pt.first);
  }
  std::ostringstream o;
  o << "| Model | ";
  for (int x : xs) o << x << " dB | ";
  o.seekp(-1, std::ios::cur);
  o << "\n|---|";
  for (std::size_t i = 0; i < xs.size(); ++i) o << "---|";
  o << "\n";
  for (const auto& s : p.series) {
    o << "| " << s.name << " |";
    for (int x : xs) {
      auto it = std::find_if(s.points.begin(), s.points.end(), [x](const auto& pt) { return pt.first == x; });
      o << " " << (it == s.points.end() ? "-" : percent(it->second)) << " |";
    }
    o << "\n";
  }
  return o.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  auto out = open_for_write(path);
  out << text;
  finish_write(out, path);
}

}  // namespace

std::string video_table_markdown(const ResultTable& table) {
  std::map<View, std::map<std::string, double>> rows;
  std::set<std::string> labels;
  for (const auto& c : table.cells()) {
    if (c.key.modality != Modality::V || !c.key.snr.is_clean()) continue;
    rows[c.key.view][c.key.label()] = c.wer;
    labels.insert(c.key.label());
  }
  if (rows.empty()) return "";
  const auto cols = ordered_labels(labels);
  std::ostringstream o;
  o << "| Views |";
  for (const auto& l : cols) o << " " << l << " |";
  o << "\n|---|";
  for (std::size_t i = 0; i < cols.size(); ++i) o << "---|";
  o << "\n";
  for (const auto& [view, vals] : rows) {
    o << "| WER (" << title_case(view) << ") |";
    for (const auto& l : cols) {
      auto it = vals.find(l);
      o << " " << (it == vals.end() ? "-" : percent(it->second)) << " |";
    }
    o << "\n";
  }
  return o.str();
}

ReportFiles emit_report(const ResultTable& table, const std::filesystem::path& out_dir) {
  AVSR_REQUIRE(!table.empty(), "cannot report an empty result table");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  ReportFiles files;
  files.csv = out_dir / "results.csv";
  write_results_csv(files.csv, table);

  const auto plots = plan_plots(table);
  for (const auto& p : plots) {
    files.plots.push_back(out_dir / p.file);
    write_text(files.plots.back(), render_svg(p));
  }

  std::ostringstream md;
  md << "# Results (" << to_string(table.protocol) << ", " << table.snr_mode << " noise training, "
     << table.decoder << " decoding)\n\n";
  if (const auto vt = video_table_markdown(table); !vt.empty()) md << "## Video-only\n\n" << vt << "\n";
  for (const auto& p : plots) md << "## " << p.title << "\n\nWER (%).\n\n" << curve_table_markdown(p) << "\n";
  files.tables = out_dir / "tables.md";
  write_text(files.tables, md.str());

  nlohmann::json summary = {{"protocol", to_string(table.protocol)},
                            {"snr_mode", table.snr_mode},
                            {"decoder", table.decoder},
                            {"wer_pooling", "total edits / total reference words"},
                            {"cells", nlohmann::json::array()},
                            {"plots", nlohmann::json::array()}};
  for (const auto& c : table.cells()) {
    summary["cells"].push_back({{"key", c.key.render()},
                                {"label", c.key.label()},
                                {"wer", c.wer},
                                {"n_words", c.n_words},
                                {"manifest_id", c.manifest_id}});
  }
  for (const auto& p : plots) {
    nlohmann::json jp = {{"file", p.file}, {"title", p.title}, {"series", nlohmann::json::array()}};
    for (const auto& s : p.series) {
      nlohmann::json pts = nlohmann::json::array();
      for (const auto& [x, y] : s.points) pts.push_back({x, y});
      jp["series"].push_back({{"name", s.name}, {"points", pts}});
    }
    summary["plots"].push_back(jp);
  }
  std::set<std::pair<Modality, View>> swept;
  for (const auto& c : table.cells()) {
    if (c.key.train.kind == TrainCondition::Kind::mix) swept.insert({c.key.modality, c.key.view});
  }
  for (const auto& [m, v] : swept) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : fraction_monotonicity(table, m, v)) {
      rows.push_back({{"snr", r.snr.label()}, {"fractions", r.fractions}, {"wers", r.wers},
                      {"non_increasing", r.non_increasing}});
    }
    summary["monotonicity"].push_back({{"modality", to_string(m)}, {"view", to_string(v)}, {"levels", rows}});
  }
  files.summary = out_dir / "summary.json";
  write_text(files.summary, summary.dump(2) + "\n");
  return files;
}

}  // namespace avsr
