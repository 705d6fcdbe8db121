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

// Command-line front end: corpus synthesis and splits, audio and ROI
// preprocessing, training, evaluation, grids, sweeps and reports.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "avsr/evaluation.hpp"

namespace fs = std::filesystem;
using namespace avsr;

namespace {

// Noise bank length for training and evaluation: 60 s, split into a train
// and a test half.
constexpr std::size_t kNoiseBankSamples = 60 * kSampleRate;

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw PreconditionError(path.string() + ": " + e.what());
  }
}

std::vector<SnrCondition> parse_snr_list(const std::string& s) {
  if (s == "noisy") return noisy_levels();
  if (s == "all") {
    auto v = noisy_levels();
    v.push_back(SnrCondition::clean());
    return v;
  }
  std::vector<SnrCondition> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(SnrCondition::parse(item));
  AVSR_REQUIRE(!out.empty(), "empty SNR list");
  return out;
}

// A manifest-described corpus with its split and the statistics and noise
// derived from it.
struct Dataset {
  Corpus corpus;
  std::unique_ptr<DiskMediaSource> media;
  CorpusSplit split;
  RmsStats stats;
  std::shared_ptr<const NoiseBank> noise;
  LandmarkSet reference;
  View view = View::frontal;
};

struct DataArgs {
  std::string manifest;
  std::string split;
  std::string noise = "babble";
  std::string reference;
  std::uint64_t noise_seed = 1;
};

void add_data_options(CLI::App* cmd, DataArgs& a, bool need_split = true) {
  cmd->add_option("--manifest", a.manifest, "Corpus manifest (manifest.jsonl)")->required()->check(CLI::ExistingFile);
  auto* sp = cmd->add_option("--split", a.split, "Split file written by 'split'")->check(CLI::ExistingFile);
  if (need_split) sp->required();
  cmd->add_option("--noise", a.noise, "babble, speech_shaped or file:PATH");
  cmd->add_option("--noise-seed", a.noise_seed, "Seed of the noise bank");
  cmd->add_option("--reference", a.reference,
                  "Landmark file whose first frame is the alignment reference (default: fixture layout)");
}

LandmarkSet reference_landmarks(const std::string& path, View view) {
  if (path.empty()) {
    FixtureOptions fo;
    fo.view = view;
    return FixtureCorpus::reference_landmarks(fo);
  }
  const auto track = read_landmark_track(path);
  AVSR_REQUIRE(!track.empty(), path, " holds no landmark frames");
  return track.front();
}

Dataset load_dataset(const DataArgs& a) {
  Dataset d;
  d.corpus = read_manifest(a.manifest);
  AVSR_REQUIRE(d.corpus.size() > 0, a.manifest, " lists no utterances");
  d.media = std::make_unique<DiskMediaSource>(fs::path(a.manifest).parent_path());
  d.view = d.corpus.utterances().front().view;
  if (!a.split.empty()) {
    d.split = read_split(a.split);
    validate_split(d.split, d.corpus);
    d.stats = compute_rms_stats(d.corpus, *d.media, d.split.train);
  }
  Rng rng = Rng(a.noise_seed).fork("noise");
  d.noise = std::make_shared<NoiseBank>(NoiseSpec::parse(a.noise), kNoiseBankSamples, rng);
  d.reference = reference_landmarks(a.reference, d.view);
  return d;
}

EvalSource eval_source(const Dataset& d, std::uint64_t noise_seed) {
  EvalSource s;
  s.corpus = &d.corpus;
  s.media = d.media.get();
  s.test_ids = d.split.test;
  s.stats = d.stats;
  s.noise = d.noise;
  s.reference = d.reference;
  s.noise_seed = noise_seed;
  return s;
}

TrainData train_data(const Dataset& d, const PipelineConfig& pc) {
  TrainData t;
  t.corpus = &d.corpus;
  t.media = d.media.get();
  t.split = d.split;
  t.condition = pc.condition;
  t.snr = pc.snr;
  t.stats = d.stats;
  t.noise = d.noise;
  t.roi = RoiSpec::for_view(d.view);
  t.reference = d.reference;
  return t;
}

void print_table(const ResultTable& table) { write_results_csv(std::cout, table); }

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  int speakers = 8;
  int per_condition = 10;
  std::string view = "frontal";
  std::uint64_t seed = 1;
};

int run_synth(const SynthArgs& a) {
  Rng rng(a.seed);
  FixtureOptions fo;
  fo.view = parse_view(a.view);
  const auto fixture = synth_fixture_corpus(a.speakers, a.per_condition, SentenceGrammar::grid(), rng, fo);
  fixture.write(a.out);
  std::cout << "wrote " << fixture.corpus().size() << " utterances to " << (fs::path(a.out) / "manifest.jsonl").string()
            << "\n";
  return 0;
}

struct SplitArgs {
  std::string manifest;
  std::string out;
  std::string protocol = "multi_speaker";
  std::vector<int> counts;
  bool gender_balanced = false;
  double lombard_fraction = -1;
  std::uint64_t seed = 1;
};

int run_split(const SplitArgs& a) {
  const Corpus corpus = read_manifest(a.manifest);
  AVSR_REQUIRE(a.counts.size() == 3, "--counts takes train,val,test");
  const SplitCounts counts{a.counts[0], a.counts[1], a.counts[2]};
  Rng rng = Rng(a.seed).fork("split");
  CorpusSplit split = parse_protocol(a.protocol) == SplitProtocol::multi_speaker
                          ? make_multi_speaker_split(corpus, counts, rng)
                          : make_subject_independent_split(corpus, counts, a.gender_balanced, rng);
  if (a.lombard_fraction >= 0) {
    Rng mrng = Rng(a.seed).fork("mix");
    split = mix_lombard_fraction(split, corpus, a.lombard_fraction, mrng);
  }
  write_split(a.out, split);
  std::cout << "train " << split.train.size() << ", val " << split.val.size() << ", test " << split.test.size()
            << " -> " << a.out << "\n";
  return 0;
}

struct AugmentArgs {
  std::string in, out;
  std::string snr = "clean";
  std::string noise = "babble";
  std::string condition = "NL";
  std::uint64_t seed = 1;
  double mean_rms_lombard = 0, mean_rms_plain = 0;
};

int run_augment(const AugmentArgs& a) {
  const AudioSignal speech = read_wav(a.in);
  const auto cond = parse_speech_condition(a.condition);
  RmsStats stats{a.mean_rms_lombard, a.mean_rms_plain};
  if (cond == SpeechCondition::L) {
    AVSR_REQUIRE(stats.mean_rms_lombard > 0 && stats.mean_rms_plain > 0,
                 "the L treatment needs --mean-rms-lombard and --mean-rms-plain");
  } else if (stats.mean_rms_lombard <= 0 || stats.mean_rms_plain <= 0) {
    stats = {1.0, 1.0};  // unused by NL and CL
  }
  const AudioSignal level = normalize_condition(speech, cond, stats);
  const auto snr = SnrCondition::parse(a.snr);
  AudioSignal mixed = level;
  if (!snr.is_clean()) {
    Rng rng(a.seed);
    const AudioSignal noise = make_noise(NoiseSpec::parse(a.noise), level.size(), rng);
    mixed = mix_at_snr(level, noise, snr);
  }
  write_wav(a.out, mixed);
  std::printf("rms %.6f -> %.6f, snr %s -> %s\n", rms(speech), rms(level), snr.label().c_str(), a.out.c_str());
  return 0;
}

struct RoiArgs {
  std::string video, landmarks, out, reference;
  std::string view = "frontal";
  int smoothing = 5;
};

int run_roi(const RoiArgs& a) {
  const auto view = parse_view(a.view);
  const FrameSequence video = read_frame_stack(a.video);
  const TrackLandmarkProvider provider(read_landmark_track(a.landmarks));
  RoiPipelineOptions opt;
  opt.smoothing_width = a.smoothing;
  const auto rois =
      extract_roi_sequence(video, provider, reference_landmarks(a.reference, view), RoiSpec::for_view(view), opt);
  write_frame_stack(a.out, rois);
  std::cout << rois.size() << " frames of " << rois.height() << "x" << rois.width() << " -> " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  DataArgs data;
  std::string phase = "all";
  std::string config;
  std::string condition;
  std::string snr_mode;
  std::string out;
  bool tiny = false;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  bool snr_specific_all = false;
};

int run_train(TrainArgs a) {
  PipelineConfig pc;
  if (!a.config.empty()) pc = read_json(a.config).get<PipelineConfig>();
  if (a.tiny) pc.model = ModelConfig::tiny();
  if (!a.condition.empty()) pc.condition = TrainCondition::parse(a.condition);
  if (!a.snr_mode.empty()) pc.snr = SnrMode::parse(a.snr_mode);
  if (a.seed) pc.seed = *a.seed;
  if (a.epochs) {
    for (auto* s : {&pc.audio, &pc.visual, &pc.fusion, &pc.finetune}) s->epochs = *a.epochs;
  }
  if (a.phase == "all") {
    pc.phases = {Phase::audio, Phase::visual, Phase::fusion, Phase::finetune};
  } else {
    pc.phases = {parse_phase(a.phase)};
  }
  a.data.noise = pc.noise.label();
  const Dataset d = load_dataset(a.data);
  const TrainData td = train_data(d, pc);
  if (a.snr_specific_all) {
    const auto paths = train_snr_specific_audio(pc, td, a.out, &std::cout);
    for (const auto& p : paths) std::cout << p.string() << "\n";
    return 0;
  }
  const auto result = run_full_pipeline(pc, td, a.out, &std::cout);
  std::cout << "manifest " << result.manifest.string() << " (" << manifest_id(result.manifest_json) << ")\n";
  return 0;
}

struct EvaluateArgs {
  DataArgs data;
  std::string checkpoint;
  std::string test_condition = "L";
  std::string snr = "all";
  std::string decoder = "greedy";
  std::string csv;
};

int run_evaluate(const EvaluateArgs& a) {
  const Dataset d = load_dataset(a.data);
  auto rec = ModelRecognizer::from_checkpoint(a.checkpoint);
  Evaluator eval(eval_source(d, a.data.noise_seed), d.view);
  const auto test = parse_speech_condition(a.test_condition);
  const auto decoder = Decoder::parse(a.decoder);
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const auto train = TrainCondition::parse(ck.meta.value("train_condition", std::string("NL")));
  ResultTable table;
  table.protocol = d.split.protocol;
  table.decoder = decoder.to_string();
  for (const auto& snr : parse_snr_list(a.snr)) {
    const auto r = eval.evaluate(*rec, test, snr, decoder);
    table.add({{rec->modality(), d.view, train, test, snr}, r.wer(), r.words, "checkpoint"});
  }
  print_table(table);
  if (!a.csv.empty()) write_results_csv(a.csv, table);
  return 0;
}

struct GridArgs {
  DataArgs data;
  DataArgs profile;
  std::string config;
  std::string models;
  std::string out;
  bool stub = false;
};

int run_grid(const GridArgs& a) {
  GridConfig cfg = GridConfig::full(SplitProtocol::multi_speaker);
  if (!a.config.empty()) cfg = read_json(a.config).get<GridConfig>();
  const Dataset front = load_dataset(a.data);
  std::optional<Dataset> side;
  EvalSources sources = {{front.view, eval_source(front, a.data.noise_seed)}};
  if (!a.profile.manifest.empty()) {
    side = load_dataset(a.profile);
    sources.emplace(side->view, eval_source(*side, a.profile.noise_seed));
  }
  std::unique_ptr<ModelProvider> models;
  if (a.stub) {
    models = std::make_unique<StubProvider>(StubProvider::condition_sensitive());
  } else {
    AVSR_REQUIRE(!a.models.empty(), "--models is required unless --stub is given");
    models = std::make_unique<CheckpointStore>(a.models);
  }
  const auto table = run_experiment_grid(cfg, *models, sources, &std::cerr);
  write_results_csv(a.out, table);
  std::cout << table.size() << " cells -> " << a.out << "\n";
  return 0;
}

struct SweepArgs {
  DataArgs data;
  std::vector<double> fractions = {0.0, 0.25, 0.5, 1.0};
  std::string modality = "AV";
  std::string snr = "noisy";
  std::string decoder = "greedy";
  std::string models;
  std::string train_config;
  std::string out;
  bool stub = false;
};

int run_sweep(const SweepArgs& a) {
  const Dataset d = load_dataset(a.data);
  SweepConfig cfg;
  cfg.fractions = a.fractions;
  cfg.modality = parse_modality(a.modality);
  cfg.view = d.view;
  cfg.snrs = parse_snr_list(a.snr);
  cfg.protocol = d.split.protocol;
  cfg.decoder = Decoder::parse(a.decoder);
  cfg.validate();
  std::unique_ptr<ModelProvider> models;
  if (a.stub) {
    models = std::make_unique<StubProvider>(StubProvider::condition_sensitive());
  } else {
    AVSR_REQUIRE(!a.models.empty(), "--models is required unless --stub is given");
    if (!a.train_config.empty()) {
      const PipelineConfig pc = read_json(a.train_config).get<PipelineConfig>();
      train_fraction_models(pc, train_data(d, pc), a.fractions, a.models, &std::cout);
    }
    models = std::make_unique<CheckpointStore>(a.models);
  }
  const auto table = run_fraction_sweep(cfg, *models, {{d.view, eval_source(d, a.data.noise_seed)}}, &std::cerr);
  write_results_csv(a.out, table);
  for (const auto& row : fraction_monotonicity(table, cfg.modality, cfg.view)) {
    std::cout << row.snr.label() << (row.non_increasing ? ": non-increasing" : ": not monotone") << "\n";
  }
  std::cout << table.size() << " cells -> " << a.out << "\n";
  return 0;
}

struct ReportArgs {
  std::vector<std::string> in;
  std::string out;
};

int run_report(const ReportArgs& a) {
  ResultTable merged;
  for (const auto& path : a.in) {
    const auto t = read_results_csv(path);
    for (const auto& c : t.cells()) merged.add(c);
  }
  const auto files = emit_report(merged, a.out);
  std::cout << files.csv.string() << "\n" << files.tables.string() << "\n" << files.summary.string() << "\n";
  for (const auto& p : files.plots) std::cout << p.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  retain_freed_memory();
  CLI::App app{"Audio-visual speech recognition toolkit with Lombard-speech experiments"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Write a synthetic fixture corpus (media and manifest)");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--speakers", synth.speakers, "Number of speakers");
  c_synth->add_option("--per-condition", synth.per_condition, "Utterances per speaker and condition");
  c_synth->add_option("--view", synth.view, "frontal or profile");
  c_synth->add_option("--seed", synth.seed, "Seed");

  SplitArgs split;
  auto* c_split = app.add_subcommand("split", "Split a corpus into train, validation and test parts");
  c_split->add_option("--manifest", split.manifest, "Corpus manifest")->required()->check(CLI::ExistingFile);
  c_split->add_option("--out", split.out, "Split file to write")->required();
  c_split->add_option("--protocol", split.protocol, "multi_speaker or subject_independent");
  c_split->add_option("--counts", split.counts,
                      "train,val,test: utterances per speaker (multi_speaker) or speakers (subject_independent)")
      ->delimiter(',')
      ->required();
  c_split->add_flag("--gender-balanced", split.gender_balanced, "Balance genders in val and test");
  c_split->add_option("--lombard-fraction", split.lombard_fraction,
                      "Keep plain training speech and add this fraction of Lombard utterances");
  c_split->add_option("--seed", split.seed, "Seed");

  AugmentArgs aug;
  auto* c_aug = app.add_subcommand("augment", "Apply a level treatment and additive noise to a waveform");
  c_aug->add_option("--in", aug.in, "Input WAV (16 kHz, 16-bit mono)")->required()->check(CLI::ExistingFile);
  c_aug->add_option("--out", aug.out, "Output WAV")->required();
  c_aug->add_option("--snr", aug.snr, "clean or -15,-12,...,6");
  c_aug->add_option("--noise", aug.noise, "babble, speech_shaped or file:PATH");
  c_aug->add_option("--condition", aug.condition, "NL, L or CL");
  c_aug->add_option("--mean-rms-lombard", aug.mean_rms_lombard, "Corpus mean RMS of Lombard recordings");
  c_aug->add_option("--mean-rms-plain", aug.mean_rms_plain, "Corpus mean RMS of plain recordings");
  c_aug->add_option("--seed", aug.seed, "Seed");

  RoiArgs roi;
  auto* c_roi = app.add_subcommand("roi", "Extract the mouth ROI sequence from a frame stack");
  c_roi->add_option("--video", roi.video, "Frame stack")->required()->check(CLI::ExistingFile);
  c_roi->add_option("--landmarks", roi.landmarks, "Landmark track JSON")->required()->check(CLI::ExistingFile);
  c_roi->add_option("--out", roi.out, "Frame stack to write")->required();
  c_roi->add_option("--view", roi.view, "frontal or profile");
  c_roi->add_option("--reference", roi.reference, "Reference landmark file (default: fixture layout)");
  c_roi->add_option("--smoothing", roi.smoothing, "Median smoothing width in frames (odd)");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train one phase or the whole pipeline");
  add_data_options(c_train, train.data);
  c_train->add_option("--phase", train.phase, "audio, visual, fusion, finetune or all");
  c_train->add_option("--config", train.config, "Pipeline config JSON")->check(CLI::ExistingFile);
  c_train->add_option("--condition", train.condition, "NL, L, CL or mix:FRACTION");
  c_train->add_option("--snr-mode", train.snr_mode, "augmented, clean or specific:DB");
  c_train->add_flag("--tiny", train.tiny, "Use the CPU-scale model");
  c_train->add_option("--seed", train.seed, "Seed");
  c_train->add_option("--epochs", train.epochs, "Override the epoch count of every phase");
  c_train->add_flag("--snr-specific-all", train.snr_specific_all, "Train one audio model per noise level");
  c_train->add_option("--out", train.out, "Output directory for checkpoints")->required();

  EvaluateArgs ev;
  auto* c_eval = app.add_subcommand("evaluate", "Word error rate of a checkpoint on the test part");
  add_data_options(c_eval, ev.data);
  c_eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--test-condition", ev.test_condition, "L, NL or CL");
  c_eval->add_option("--snr", ev.snr, "Comma-separated levels, clean, noisy or all");
  c_eval->add_option("--decoder", ev.decoder, "greedy or beam:W");
  c_eval->add_option("--csv", ev.csv, "Also write the results CSV here");

  GridArgs grid;
  auto* c_grid = app.add_subcommand("grid", "Evaluate the train/test condition grid");
  add_data_options(c_grid, grid.data);
  c_grid->add_option("--config", grid.config, "Grid config JSON (default: full preset)")->check(CLI::ExistingFile);
  c_grid->add_option("--models", grid.models, "Checkpoint store root");
  c_grid->add_flag("--stub", grid.stub, "Use scripted stand-in models");
  c_grid->add_option("--profile-manifest", grid.profile.manifest, "Profile-view corpus manifest");
  c_grid->add_option("--profile-split", grid.profile.split, "Profile-view split file");
  c_grid->add_option("--out", grid.out, "Results CSV")->required();

  SweepArgs sweep;
  auto* c_sweep = app.add_subcommand("sweep", "Lombard-fraction sweep tested on Lombard speech");
  add_data_options(c_sweep, sweep.data);
  c_sweep->add_option("--fractions", sweep.fractions, "Lombard fractions")->delimiter(',');
  c_sweep->add_option("--modality", sweep.modality, "A, V or AV");
  c_sweep->add_option("--snr", sweep.snr, "Comma-separated levels, clean, noisy or all");
  c_sweep->add_option("--decoder", sweep.decoder, "greedy or beam:W");
  c_sweep->add_option("--models", sweep.models, "Checkpoint store root");
  c_sweep->add_option("--train-config", sweep.train_config, "Train missing fraction models with this config");
  c_sweep->add_flag("--stub", sweep.stub, "Use scripted stand-in models");
  c_sweep->add_option("--out", sweep.out, "Results CSV")->required();

  ReportArgs report;
  auto* c_report = app.add_subcommand("report", "Plots, tables and a summary from results CSVs");
  c_report->add_option("--in", report.in, "Results CSV files")->required()->check(CLI::ExistingFile);
  c_report->add_option("--out", report.out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (grid.profile.manifest.empty() != grid.profile.split.empty()) {
      throw PreconditionError("--profile-manifest and --profile-split go together");
    }
    grid.profile.noise = grid.data.noise;
    grid.profile.noise_seed = grid.data.noise_seed;
    if (*c_synth) return run_synth(synth);
    if (*c_split) return run_split(split);
    if (*c_aug) return run_augment(aug);
    if (*c_roi) return run_roi(roi);
    if (*c_train) return run_train(train);
    if (*c_eval) return run_evaluate(ev);
    if (*c_grid) return run_grid(grid);
    if (*c_sweep) return run_sweep(sweep);
    if (*c_report) return run_report(report);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
