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
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "avsr/ctc.hpp"
#include "avsr/training.hpp"

// Word error rates, the train/test condition grid, Lombard-fraction
// sweeps, and report files.
namespace avsr {

// ---------------------------------------------------------------------------
// Word error rate

struct EditCounts {
  int substitutions = 0;
  int deletions = 0;
  int insertions = 0;

  int total() const { return substitutions + deletions + insertions; }
  bool operator==(const EditCounts&) const = default;
};

// Unit-cost Levenshtein alignment over words. Among minimum-cost
// alignments, prefers substitutions, then deletions.
EditCounts word_edits(std::span<const std::string> reference, std::span<const std::string> hypothesis);

// Edits divided by reference length. Throws for an empty reference.
double wer(std::span<const std::string> reference, std::span<const std::string> hypothesis);
double wer(const std::string& reference, const std::string& hypothesis);

// ---------------------------------------------------------------------------
// Decoding

struct Decoder {
  enum class Kind { greedy, beam };
  Kind kind = Kind::greedy;
  int beam_width = 1;

  static Decoder greedy() { return {}; }
  static Decoder beam(int width);
  // "greedy" or "beam:W"
  static Decoder parse(const std::string& s);
  std::string to_string() const;
  ctc::LabelSequence decode(const ctc::LogProbs& logprobs) const;

  bool operator==(const Decoder&) const = default;
};

// ---------------------------------------------------------------------------
// Recognizers

class Recognizer {
 public:
  virtual ~Recognizer() = default;
  // Which streams the samples it reads must carry.
  virtual Modality modality() const = 0;
  // [T, Charset::kSize] per-frame log-probabilities.
  virtual ctc::LogProbs logprobs(const Sample& sample) = 0;
};

// Owns the model, or borrows one that must outlive it.
class ModelRecognizer : public Recognizer {
 public:
  explicit ModelRecognizer(AvsrModel&& model)
      : owned_(std::make_unique<AvsrModel>(std::move(model))), model_(owned_.get()) {}
  explicit ModelRecognizer(AvsrModel& model) : model_(&model) {}
  static std::unique_ptr<ModelRecognizer> from_checkpoint(const std::filesystem::path& path);

  Modality modality() const override { return model_->modality(); }
  ctc::LogProbs logprobs(const Sample& sample) override { return model_->infer(sample.input); }
  AvsrModel& model() { return *model_; }

 private:
  std::unique_ptr<AvsrModel> owned_;
  AvsrModel* model_;
};

// Emits a near one-hot, blank-separated path spelling the reference
// transcript with some words replaced by other words of the same slot.
// Each word is replaced with probability error_rate(sample), drawn from a
// seed of (seed, utterance, level), so repeated runs agree.
class ScriptedRecognizer : public Recognizer {
 public:
  using ErrorRate = std::function<double(const Sample&)>;
  ScriptedRecognizer(Modality modality, ErrorRate error_rate, std::uint64_t seed);

  // Always spells the reference.
  static std::unique_ptr<ScriptedRecognizer> oracle(Modality modality);

  Modality modality() const override { return modality_; }
  ctc::LogProbs logprobs(const Sample& sample) override;

 private:
  Modality modality_;
  ErrorRate error_rate_;
  std::uint64_t seed_;
};

// Puts all mass on the blank at every frame.
class BlankRecognizer : public Recognizer {
 public:
  explicit BlankRecognizer(Modality modality) : modality_(modality) {}
  Modality modality() const override { return modality_; }
  ctc::LogProbs logprobs(const Sample& sample) override;

 private:
  Modality modality_;
};

// Log-probabilities that decode to `text` under greedy and beam search.
ctc::LogProbs one_hot_path(const std::string& text, double confidence = 0.99);

// ---------------------------------------------------------------------------
// Single evaluations

// Test-side data for one camera view.
struct EvalSource {
  const Corpus* corpus = nullptr;
  const MediaSource* media = nullptr;
  std::vector<std::string> test_ids;
  RmsStats stats;
  std::shared_ptr<const NoiseBank> noise;
  LandmarkSet reference;
  RoiPipelineOptions roi_pipeline;
  std::uint64_t noise_seed = 1;
};

struct UtteranceResult {
  std::string utt_id;
  std::string reference;
  std::string hypothesis;
  EditCounts edits;
  int words = 0;
};

struct EvalResult {
  int edits = 0;
  int words = 0;
  std::vector<UtteranceResult> utterances;

  // Pooled: total edits over total reference words.
  double wer() const;
};

// Builds samples for one view and caches decoded media across calls.
// Noisy test signals take noise from the test region of the bank, seeded
// per (utterance, level), so every model sees the same mixtures.
class Evaluator {
 public:
  Evaluator(EvalSource source, View view);

  // Test utterances of the condition: NL recordings for NL, Lombard
  // recordings for L and CL. Throws if there are none.
  EvalResult evaluate(Recognizer& recognizer, SpeechCondition test, const SnrCondition& snr,
                      const Decoder& decoder);
  EvalResult evaluate_items(Recognizer& recognizer, const std::vector<SampleSpec>& items, const SnrCondition& snr,
                            const Decoder& decoder);

  const EvalSource& source() const { return source_; }
  View view() const { return view_; }

 private:
  const SampleBuilder& builder_for(Modality m);

  EvalSource source_;
  View view_;
  std::unique_ptr<SampleBuilder> audio_only_;
  std::unique_ptr<SampleBuilder> with_video_;
};

// ---------------------------------------------------------------------------
// Result tables

struct CellKey {
  Modality modality = Modality::A;
  View view = View::frontal;
  TrainCondition train = TrainCondition::nl();
  SpeechCondition test = SpeechCondition::NL;
  SnrCondition snr = SnrCondition::clean();

  // "X-Y": trained on X, tested on Y, e.g. "NL-L" or "(NL,0.25L)-L".
  std::string label() const;
  // "AV/frontal/NL-L/-6"
  std::string render() const;
  static CellKey parse(const std::string& s);

  bool operator==(const CellKey&) const = default;
  auto operator<=>(const CellKey&) const = default;
};

std::pair<TrainCondition, SpeechCondition> parse_condition_label(const std::string& label);

struct ExperimentCell {
  CellKey key;
  double wer = 0.0;
  int n_words = 0;
  std::string manifest_id;

  bool operator==(const ExperimentCell&) const = default;
};

class ResultTable {
 public:
  SplitProtocol protocol = SplitProtocol::multi_speaker;
  std::string snr_mode = "augmented";
  std::string decoder = "greedy";

  // Throws on a key already present.
  void add(ExperimentCell cell);
  const std::vector<ExperimentCell>& cells() const { return cells_; }
  const ExperimentCell* find(const CellKey& key) const;
  bool empty() const { return cells_.empty(); }
  std::size_t size() const { return cells_.size(); }

 private:
  std::vector<ExperimentCell> cells_;
  std::map<CellKey, std::size_t> index_;
};

// Columns: modality,view,train_cond,test_cond,snr_db,wer,n_words,manifest_id.
inline constexpr const char* kResultColumns = "modality,view,train_cond,test_cond,snr_db,wer,n_words,manifest_id";
void write_results_csv(const std::filesystem::path& path, const ResultTable& table);
void write_results_csv(std::ostream& out, const ResultTable& table);
ResultTable read_results_csv(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Models behind a grid

struct ModelKey {
  Modality modality = Modality::A;
  View view = View::frontal;
  TrainCondition train = TrainCondition::nl();
  std::optional<int> snr_level;  // SNR-specific audio models only

  std::string describe() const;
  auto operator<=>(const ModelKey&) const = default;
};

class ModelProvider {
 public:
  virtual ~ModelProvider() = default;
  // What is missing for the key, or nullopt when it can be loaded.
  virtual std::optional<std::string> missing(const ModelKey& key) const = 0;
  virtual std::unique_ptr<Recognizer> load(const ModelKey& key) = 0;
  virtual std::string manifest_id(const ModelKey& key) const = 0;
};

// Checkpoints as written by the training pipeline:
//   <root>/<view>/<condition>/{audio,visual,finetune}.ckpt, run_manifest.json
//   <root>/<view>/<condition>/snr_specific/audio_snr<level>.ckpt
// An all-plain mixture (fraction 0) resolves to the NL models.
class CheckpointStore : public ModelProvider {
 public:
  explicit CheckpointStore(std::filesystem::path root) : root_(std::move(root)) {}

  static std::filesystem::path model_dir(const std::filesystem::path& root, View view, const TrainCondition& train);
  std::filesystem::path checkpoint_path(const ModelKey& key) const;

  std::optional<std::string> missing(const ModelKey& key) const override;
  std::unique_ptr<Recognizer> load(const ModelKey& key) override;
  std::string manifest_id(const ModelKey& key) const override;

 private:
  std::filesystem::path root_;
};

// Scripted recognizers whose word error rate is given per model and sample.
class StubProvider : public ModelProvider {
 public:
  using ErrorModel = std::function<double(const ModelKey&, const Sample&)>;
  explicit StubProvider(ErrorModel model, std::uint64_t seed = 1) : model_(std::move(model)), seed_(seed) {}

  // Errors fall with SNR; video and fusion help at low SNR; a model tested
  // on speech other than its training condition loses accuracy.
  static ErrorModel condition_sensitive();

  std::optional<std::string> missing(const ModelKey&) const override { return std::nullopt; }
  std::unique_ptr<Recognizer> load(const ModelKey& key) override;
  std::string manifest_id(const ModelKey& key) const override;

 private:
  ErrorModel model_;
  std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Grids and sweeps

std::vector<SnrCondition> noisy_levels();

struct GridBlock {
  std::vector<Modality> modalities;
  std::vector<std::pair<TrainCondition, SpeechCondition>> conditions;
  std::vector<SnrCondition> snrs;
  std::vector<View> views;
};

struct GridConfig {
  SplitProtocol protocol = SplitProtocol::multi_speaker;
  // One audio model per level instead of one augmented model.
  bool snr_specific = false;
  Decoder decoder;
  std::vector<GridBlock> blocks;

  // Video-only L-L, NL-L, NL-NL tables (frontal, plus profile for the
  // subject-independent protocol) and A/AV curves for L-L, NL-L, NL-NL,
  // NL-CL over the eight noise levels.
  static GridConfig full(SplitProtocol protocol);
  // Audio-only curves for NL-L, NL-NL, NL-CL, L-L with SNR-specific models.
  static GridConfig full_snr_specific();
  void validate() const;
};

void to_json(nlohmann::json& j, const GridConfig& c);
void from_json(const nlohmann::json& j, GridConfig& c);

using EvalSources = std::map<View, EvalSource>;

// One cell per combination in every block. All models are checked first;
// if any is missing, the error lists every affected cell.
ResultTable run_experiment_grid(const GridConfig& config, ModelProvider& models, const EvalSources& sources,
                                std::ostream* log = nullptr);

struct SweepConfig {
  std::vector<double> fractions = {0.0, 0.25, 0.5, 1.0};
  Modality modality = Modality::AV;
  View view = View::frontal;
  std::vector<SnrCondition> snrs = noisy_levels();
  SplitProtocol protocol = SplitProtocol::subject_independent;
  Decoder decoder;

  void validate() const;
};

// Models trained on plain speech plus a Lombard fraction, tested on
// Lombard speech: one curve per fraction, labelled (NL)-L ... (NL,L)-L.
ResultTable run_fraction_sweep(const SweepConfig& config, ModelProvider& models, const EvalSources& sources,
                               std::ostream* log = nullptr);

// Trains the pipeline for every fraction whose models are not already in
// the store layout under root. Fraction 0 trains the NL models.
void train_fraction_models(const PipelineConfig& base, const TrainData& data, const std::vector<double>& fractions,
                           const std::filesystem::path& root, std::ostream* log = nullptr);

struct MonotonicityRow {
  SnrCondition snr = SnrCondition::clean();
  std::vector<double> fractions;
  std::vector<double> wers;
  bool non_increasing = true;
};

// Per level, whether WER is non-increasing as the Lombard fraction grows.
std::vector<MonotonicityRow> fraction_monotonicity(const ResultTable& table, Modality modality, View view);

// ---------------------------------------------------------------------------
// Reports

struct ReportFiles {
  std::filesystem::path csv;
  std::filesystem::path summary;
  std::filesystem::path tables;
  std::vector<std::filesystem::path> plots;
};

// results.csv, summary.json, tables.md, and one WER-vs-SNR plot (SVG) per
// view and model family, one series per model and condition pair.
ReportFiles emit_report(const ResultTable& table, const std::filesystem::path& out_dir);

// Video-only clean cells laid out as "Views | L-L | NL-L | NL-NL" with one
// row per view; WER in percent with two decimals. Empty without such cells.
std::string video_table_markdown(const ResultTable& table);

}  // namespace avsr
