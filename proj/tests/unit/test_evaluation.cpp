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

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "avsr/evaluation.hpp"
#include "support/world.hpp"

namespace avsr {
namespace {

namespace fs = std::filesystem;
using Words = std::vector<std::string>;

fs::path temp_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("avsr_eval_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Brute force: the cheapest monotone matching between reference and
// hypothesis positions. Matched pairs cost 0 if equal and 1 otherwise,
// every unmatched word costs 1.
int brute_force_edits(const Words& r, const Words& h) {
  const int n = static_cast<int>(r.size()), m = static_cast<int>(h.size());
  int best = n + m;
  for (unsigned rs = 0; rs < (1u << n); ++rs) {
    const int k = __builtin_popcount(rs);
    for (unsigned hs = 0; hs < (1u << m); ++hs) {
      if (__builtin_popcount(hs) != k) continue;
      std::vector<int> ri, hi;
      for (int i = 0; i < n; ++i) {
        if (rs >> i & 1) ri.push_back(i);
      }
      for (int j = 0; j < m; ++j) {
        if (hs >> j & 1) hi.push_back(j);
      }
      int cost = (n - k) + (m - k);
      for (int t = 0; t < k; ++t) cost += r[ri[t]] != h[hi[t]];
      best = std::min(best, cost);
    }
  }
  return best;
}

Words random_words(Rng& rng, int max_len, int min_len = 0) {
  static const Words vocab = {"bin", "lay", "red", "at", "f", "two"};
  Words w(min_len + rng.uniform_int(max_len - min_len + 1));
  for (auto& x : w) x = vocab[rng.uniform_int(vocab.size())];
  return w;
}

TEST(Wer, Examples) {
  EXPECT_EQ(wer("place red at l nine now", "place red at l nine now"), 0.0);
  EXPECT_NEAR(wer("place red at l nine now", "place red at l five now"), 1.0 / 6, 1e-15);
  EXPECT_NEAR(wer("place red at l nine now", "place red at l five now"), 0.1667, 1e-4);
  EXPECT_EQ(wer("place red at l nine now", ""), 1.0);
  EXPECT_NEAR(wer("bin blue at f nine now", "bin blue at l nine now"), 1.0 / 6, 1e-15);
  EXPECT_THROW(wer("", "bin"), PreconditionError);
}

TEST(Wer, MatchesBruteForceOnRandomPairs) {
  Rng rng(31);
  for (int i = 0; i < 10000; ++i) {
    const Words r = random_words(rng, 6, 1), h = random_words(rng, 6);
    const EditCounts e = word_edits(r, h);
    ASSERT_EQ(e.total(), brute_force_edits(r, h));
    ASSERT_EQ(e.deletions - e.insertions, static_cast<int>(r.size()) - static_cast<int>(h.size()));
    ASSERT_EQ(wer(r, h), static_cast<double>(brute_force_edits(r, h)) / r.size());
  }
}

TEST(Wer, ExceedsOneOnlyThroughInsertions) {
  Rng rng(32);
  int above_one = 0;
  for (int i = 0; i < 5000; ++i) {
    const Words r = random_words(rng, 3, 1), h = random_words(rng, 8, 4);
    const EditCounts e = word_edits(r, h);
    const double w = wer(r, h);
    EXPECT_GE(w, 0.0);
    if (w > 1.0) {
      ++above_one;
      EXPECT_GT(e.insertions, 0);
    }
    EXPECT_LE(e.substitutions + e.deletions, static_cast<int>(r.size()));
  }
  EXPECT_GT(above_one, 0);
  const Words ref = {"bin", "red"};
  EXPECT_EQ(wer(ref, Words{"bin", "red", "at", "at", "at"}), 1.5);
}

TEST(Decoder, ParseAndRender) {
  EXPECT_EQ(Decoder::parse("greedy"), Decoder::greedy());
  EXPECT_EQ(Decoder::parse("beam:8"), Decoder::beam(8));
  EXPECT_EQ(Decoder::parse("beam:8").to_string(), "beam:8");
  EXPECT_THROW(Decoder::parse("beam:0"), PreconditionError);
  EXPECT_THROW(Decoder::parse("beam:x"), PreconditionError);
  EXPECT_THROW(Decoder::parse("viterbi"), PreconditionError);
}

TEST(OneHotPath, DecodesToTextIncludingRepeats) {
  for (const std::string text : {"bin green by a zero soon", "set white with e three please", ""}) {
    const auto lp = one_hot_path(text);
    EXPECT_EQ(Charset::decode(Decoder::greedy().decode(lp)), text);
    EXPECT_EQ(Charset::decode(Decoder::beam(4).decode(lp)), text);
  }
}

TEST(CellKey, LabelsAndRoundTrip) {
  CellKey k{Modality::AV, View::frontal, TrainCondition::mix(0.25), SpeechCondition::L, SnrCondition::noisy(-6)};
  EXPECT_EQ(k.label(), "(NL,0.25L)-L");
  EXPECT_EQ(k.render(), "AV/frontal/(NL,0.25L)-L/-6");
  for (Modality m : {Modality::A, Modality::V, Modality::AV}) {
    for (View v : {View::frontal, View::profile}) {
      for (auto tr : {TrainCondition::nl(), TrainCondition::lombard(), TrainCondition::mix(0), TrainCondition::mix(0.5),
                      TrainCondition::mix(1)}) {
        for (auto te : {SpeechCondition::NL, SpeechCondition::L, SpeechCondition::CL}) {
          for (auto snr : {SnrCondition::clean(), SnrCondition::noisy(-15), SnrCondition::noisy(6)}) {
            const CellKey c{m, v, tr, te, snr};
            EXPECT_EQ(CellKey::parse(c.render()), c) << c.render();
            EXPECT_EQ(parse_condition_label(c.label()), std::make_pair(tr, te));
          }
        }
      }
    }
  }
  EXPECT_EQ((CellKey{Modality::A, View::frontal, TrainCondition::nl(), SpeechCondition::CL}).label(), "NL-CL");
  EXPECT_EQ((CellKey{Modality::A, View::frontal, TrainCondition::mix(1), SpeechCondition::L}).label(), "(NL,L)-L");
  EXPECT_EQ((CellKey{Modality::A, View::frontal, TrainCondition::mix(0), SpeechCondition::L}).label(), "(NL)-L");
  EXPECT_THROW(CellKey::parse("AV/frontal/NL-L"), PreconditionError);
  EXPECT_THROW(parse_condition_label("NLL"), PreconditionError);
}

ResultTable sample_table() {
  ResultTable t;
  t.add({{Modality::V, View::frontal, TrainCondition::lombard(), SpeechCondition::L}, 0.1 + 0.2, 120, "abc"});
  t.add({{Modality::AV, View::profile, TrainCondition::mix(0.25), SpeechCondition::L, SnrCondition::noisy(-9)},
         1.0 / 3, 60, "def"});
  t.add({{Modality::A, View::frontal, TrainCondition::nl(), SpeechCondition::CL, SnrCondition::noisy(6)}, 0.0, 6, ""});
  return t;
}

TEST(ResultTable, RejectsDuplicateKeys) {
  ResultTable t = sample_table();
  EXPECT_THROW(t.add(t.cells()[1]), PreconditionError);
  EXPECT_EQ(t.size(), 3u);
  EXPECT_EQ(t.find(t.cells()[1].key)->manifest_id, "def");
}

TEST(ResultCsv, RoundTripIsExact) {
  const auto dir = temp_dir("csv");
  const ResultTable t = sample_table();
  write_results_csv(dir / "r.csv", t);
  const ResultTable back = read_results_csv(dir / "r.csv");
  EXPECT_EQ(back.cells(), t.cells());
  EXPECT_EQ(slurp(dir / "r.csv").substr(0, std::string(kResultColumns).size()), kResultColumns);
}

TEST(ResultCsv, Errors) {
  const auto dir = temp_dir("csv_err");
  EXPECT_THROW(read_results_csv(dir / "absent.csv"), IoError);
  std::ofstream(dir / "bad.csv") << "modality,view\nA,frontal\n";
  EXPECT_THROW(read_results_csv(dir / "bad.csv"), PreconditionError);
  std::ofstream(dir / "short.csv") << kResultColumns << "\nA,frontal,NL,NL,clean,0.5\n";
  try {
    read_results_csv(dir / "short.csv");
    FAIL();
  } catch (const PreconditionError& e) {
    EXPECT_NE(std::string(e.what()).find("short.csv:2"), std::string::npos);
  }
}

// Samples seen by a recognizer, for checking what evaluation feeds it.
class Recording : public Recognizer {
 public:
  explicit Recording(Modality m) : m_(m) {}
  Modality modality() const override { return m_; }
  ctc::LogProbs logprobs(const Sample& s) override {
    seen.push_back(s);
    return one_hot_path(transcript(s.words));
  }
  std::vector<Sample> seen;

 private:
  Modality m_;
};

class EvaluatorTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { world_ = new testing::World(testing::make_world(2, 4, {2, 1, 1})); }
  static void TearDownTestSuite() {
    delete world_;
    world_ = nullptr;
  }
  static testing::World* world_;
};
testing::World* EvaluatorTest::world_ = nullptr;

TEST_F(EvaluatorTest, OracleScoresZeroAndBlankScoresOne) {
  Evaluator ev(testing::eval_source(*world_), View::frontal);
  auto oracle = ScriptedRecognizer::oracle(Modality::A);
  BlankRecognizer blank(Modality::A);
  for (auto cond : {SpeechCondition::NL, SpeechCondition::L, SpeechCondition::CL}) {
    const auto r0 = ev.evaluate(*oracle, cond, SnrCondition::noisy(-3), Decoder::greedy());
    EXPECT_EQ(r0.wer(), 0.0);
    EXPECT_EQ(r0.words, 6 * static_cast<int>(r0.utterances.size()));
    EXPECT_EQ(ev.evaluate(blank, cond, SnrCondition::clean(), Decoder::beam(3)).wer(), 1.0);
  }
}

TEST_F(EvaluatorTest, PooledOverWords) {
  Evaluator ev(testing::eval_source(*world_), View::frontal);
  ScriptedRecognizer noisy(Modality::A, [](const Sample&) { return 0.4; }, 9);
  const auto r = ev.evaluate(noisy, SpeechCondition::NL, SnrCondition::clean(), Decoder::greedy());
  int edits = 0, words = 0;
  for (const auto& u : r.utterances) {
    EXPECT_EQ(u.edits.total(), word_edits(split_words(u.reference), split_words(u.hypothesis)).total());
    edits += u.edits.total();
    words += u.words;
  }
  EXPECT_EQ(r.wer(), static_cast<double>(edits) / words);
  EXPECT_GT(r.wer(), 0.0);
  const auto again = ev.evaluate(noisy, SpeechCondition::NL, SnrCondition::clean(), Decoder::greedy());
  EXPECT_EQ(again.wer(), r.wer());
}

TEST_F(EvaluatorTest, EveryModelHearsTheSameTestMixture) {
  Evaluator ev(testing::eval_source(*world_), View::frontal);
  Recording a(Modality::A), b(Modality::A);
  ev.evaluate(a, SpeechCondition::L, SnrCondition::noisy(-6), Decoder::greedy());
  Evaluator other(testing::eval_source(*world_), View::frontal);
  other.evaluate(b, SpeechCondition::L, SnrCondition::noisy(-6), Decoder::greedy());
  ASSERT_EQ(a.seen.size(), b.seen.size());
  for (std::size_t i = 0; i < a.seen.size(); ++i) EXPECT_EQ(a.seen[i].input.audio, b.seen[i].input.audio);

  // The noise comes from the held-out region, not the training one.
  const SampleBuilder builder(world_->corpus(), *world_->fixture, world_->reference, world_->stats, world_->noise,
                              {true, false});
  const auto& s = a.seen.front();
  Rng rng(eval_noise_seed(s.utt_id, s.snr, 1));
  const Sample train_side =
      builder.build({s.utt_id, s.treatment}, s.snr, AugmentMode::test, NoiseBank::Region::train, rng);
  EXPECT_NE(train_side.input.audio, s.input.audio);
}

TEST_F(EvaluatorTest, TestConditionsSelectRecordingsAndTreatments) {
  Evaluator ev(testing::eval_source(*world_), View::frontal);
  Recording rec(Modality::A);
  ev.evaluate(rec, SpeechCondition::CL, SnrCondition::clean(), Decoder::greedy());
  ASSERT_FALSE(rec.seen.empty());
  for (const auto& s : rec.seen) {
    EXPECT_EQ(world_->corpus().at(s.utt_id).condition, Condition::L);
    EXPECT_EQ(s.treatment, SpeechCondition::CL);
    EXPECT_NEAR(rms(AudioSignal(s.input.audio)), 0.05, 1e-9);
    EXPECT_FALSE(s.input.video.size() > 0);
  }
  Recording v(Modality::V);
  ev.evaluate(v, SpeechCondition::NL, SnrCondition::clean(), Decoder::greedy());
  EXPECT_EQ(v.seen.front().input.video.shape()[1], 190);
}

TEST_F(EvaluatorTest, AbsentConditionIsAnError) {
  EvalSource src = testing::eval_source(*world_);
  std::vector<std::string> plain;
  for (const auto& id : src.test_ids) {
    if (world_->corpus().at(id).condition == Condition::NL) plain.push_back(id);
  }
  src.test_ids = plain;
  Evaluator ev(src, View::frontal);
  auto oracle = ScriptedRecognizer::oracle(Modality::A);
  EXPECT_NO_THROW(ev.evaluate(*oracle, SpeechCondition::NL, SnrCondition::clean(), Decoder::greedy()));
  EXPECT_THROW(ev.evaluate(*oracle, SpeechCondition::L, SnrCondition::clean(), Decoder::greedy()), PreconditionError);
}

EvalSources frontal_sources(const testing::World& w) { return {{View::frontal, testing::eval_source(w)}}; }

TEST_F(EvaluatorTest, FullGridShapes) {
  StubProvider stubs(StubProvider::condition_sensitive());
  const auto table = run_experiment_grid(GridConfig::full(SplitProtocol::multi_speaker), stubs,
                                         frontal_sources(*world_));
  EXPECT_EQ(table.size(), 3u + 2 * 4 * 8);
  std::set<std::string> video, curves;
  std::set<int> levels;
  for (const auto& c : table.cells()) {
    if (c.key.modality == Modality::V) {
      video.insert(c.key.label());
      EXPECT_TRUE(c.key.snr.is_clean());
    } else {
      curves.insert(c.key.label());
      levels.insert(c.key.snr.level_db());
    }
    EXPECT_EQ(c.manifest_id, "stub");
    EXPECT_GT(c.n_words, 0);
  }
  EXPECT_EQ(video, (std::set<std::string>{"L-L", "NL-L", "NL-NL"}));
  EXPECT_EQ(curves, (std::set<std::string>{"L-L", "NL-L", "NL-NL", "NL-CL"}));
  EXPECT_EQ(levels, (std::set<int>{-15, -12, -9, -6, -3, 0, 3, 6}));

  const auto again = run_experiment_grid(GridConfig::full(SplitProtocol::multi_speaker), stubs,
                                         frontal_sources(*world_));
  EXPECT_EQ(again.cells(), table.cells());
}

TEST_F(EvaluatorTest, SubjectIndependentVideoTableHasSixCells) {
  const auto profile_world = testing::make_world(2, 3, {2, 2, 2}, 7, FixtureOptions{.view = View::profile});
  GridConfig cfg = GridConfig::full(SplitProtocol::subject_independent);
  cfg.blocks.resize(1);  // video only
  EvalSources sources = frontal_sources(*world_);
  sources.emplace(View::profile, testing::eval_source(profile_world));
  StubProvider stubs(StubProvider::condition_sensitive());
  const auto table = run_experiment_grid(cfg, stubs, sources);
  EXPECT_EQ(table.size(), 6u);
  std::set<View> views;
  for (const auto& c : table.cells()) views.insert(c.key.view);
  EXPECT_EQ(views.size(), 2u);
  EXPECT_EQ(table.protocol, SplitProtocol::subject_independent);
}

TEST_F(EvaluatorTest, MissingCheckpointsAreAllListed) {
  const auto dir = temp_dir("missing");
  CheckpointStore store(dir);
  GridConfig cfg = GridConfig::full(SplitProtocol::multi_speaker);
  try {
    run_experiment_grid(cfg, store, frontal_sources(*world_));
    FAIL();
  } catch (const PreconditionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("67 of 67 cells"), std::string::npos) << msg;
    EXPECT_NE(msg.find("AV/frontal/NL-CL/-15"), std::string::npos);
    EXPECT_NE(msg.find("V/frontal/L-L/clean"), std::string::npos);
    EXPECT_NE(msg.find("finetune.ckpt"), std::string::npos);
  }
  // Profile cells without profile test data are also reported.
  cfg = GridConfig::full(SplitProtocol::subject_independent);
  StubProvider stubs(StubProvider::condition_sensitive());
  EXPECT_THROW(run_experiment_grid(cfg, stubs, frontal_sources(*world_)), PreconditionError);
}

TEST_F(EvaluatorTest, CheckpointStoreRunsTrainedModels) {
  const auto root = temp_dir("store");
  PipelineConfig pc;
  pc.model.gru_cells = 4;
  pc.model.gru_layers = 1;
  pc.phases = {Phase::audio};
  pc.audio.epochs = 1;
  pc.audio.batch_size = 2;
  const auto data = world_->train_data();
  const auto out = run_full_pipeline(pc, data, CheckpointStore::model_dir(root, View::frontal, TrainCondition::nl()));
  CheckpointStore store(root);
  const ModelKey key{Modality::A, View::frontal, TrainCondition::nl()};
  EXPECT_EQ(store.checkpoint_path(key), out.audio_checkpoint);
  EXPECT_EQ(store.checkpoint_path({Modality::A, View::frontal, TrainCondition::mix(0)}), out.audio_checkpoint);
  EXPECT_FALSE(store.missing(key).has_value());
  EXPECT_EQ(store.manifest_id(key), out.manifest_json.at("manifest_id"));

  GridConfig cfg;
  cfg.blocks = {{{Modality::A}, {parse_condition_label("NL-L"), parse_condition_label("NL-NL")},
                 {SnrCondition::clean(), SnrCondition::noisy(0)}, {View::frontal}}};
  const auto t1 = run_experiment_grid(cfg, store, frontal_sources(*world_));
  const auto t2 = run_experiment_grid(cfg, store, frontal_sources(*world_));
  ASSERT_EQ(t1.size(), 4u);
  EXPECT_EQ(t1.cells(), t2.cells());
  EXPECT_EQ(t1.cells()[0].manifest_id, out.manifest_json.at("manifest_id"));

  // A file of the wrong modality under a model name is rejected on load.
  fs::copy_file(out.audio_checkpoint, CheckpointStore::model_dir(root, View::frontal, TrainCondition::nl()) /
                                          "visual.ckpt");
  EXPECT_THROW(store.load({Modality::V, View::frontal, TrainCondition::nl()}), PreconditionError);
  // So is a checkpoint filed under another training condition.
  const auto ldir = CheckpointStore::model_dir(root, View::frontal, TrainCondition::lombard());
  fs::create_directories(ldir);
  fs::copy_file(out.audio_checkpoint, ldir / "audio.ckpt");
  EXPECT_THROW(store.load({Modality::A, View::frontal, TrainCondition::lombard()}), PreconditionError);
}

TEST_F(EvaluatorTest, SnrSpecificGridUsesOneModelPerLevel) {
  std::multiset<int> requested;
  StubProvider stubs([&](const ModelKey& k, const Sample& s) {
    EXPECT_TRUE(k.snr_level.has_value());
    EXPECT_EQ(*k.snr_level, s.snr.level_db());
    requested.insert(*k.snr_level);
    return 0.1;
  });
  const auto table = run_experiment_grid(GridConfig::full_snr_specific(), stubs, frontal_sources(*world_));
  EXPECT_EQ(table.size(), 4u * 8);
  EXPECT_EQ(table.snr_mode, "specific");
  EXPECT_EQ(std::set<int>(requested.begin(), requested.end()).size(), 8u);
  GridConfig bad = GridConfig::full_snr_specific();
  bad.blocks[0].snrs.push_back(SnrCondition::clean());
  EXPECT_THROW(bad.validate(), PreconditionError);
}

TEST_F(EvaluatorTest, FractionSweepLabels) {
  StubProvider stubs(StubProvider::condition_sensitive());
  const auto table = run_fraction_sweep(SweepConfig{}, stubs, frontal_sources(*world_));
  EXPECT_EQ(table.size(), 4u * 8);
  std::set<std::string> labels;
  for (const auto& c : table.cells()) labels.insert(c.key.label());
  EXPECT_EQ(labels, (std::set<std::string>{"(NL)-L", "(NL,0.25L)-L", "(NL,0.5L)-L", "(NL,L)-L"}));
  const auto rows = fraction_monotonicity(table, Modality::AV, View::frontal);
  ASSERT_EQ(rows.size(), 8u);
  for (const auto& r : rows) EXPECT_EQ(r.fractions, (std::vector<double>{0, 0.25, 0.5, 1}));
  SweepConfig bad;
  bad.fractions = {0.5, 1.5};
  EXPECT_THROW(bad.validate(), PreconditionError);
  bad.fractions = {0.5, 0.5};
  EXPECT_THROW(bad.validate(), PreconditionError);
}

TEST(Monotonicity, FlagsEachLevel) {
  ResultTable t;
  auto add = [&](double f, int snr, double w) {
    t.add({{Modality::AV, View::frontal, TrainCondition::mix(f), SpeechCondition::L, SnrCondition::noisy(snr)}, w, 6,
           ""});
  };
  add(0, -15, 0.5);
  add(0.25, -15, 0.4);
  add(1, -15, 0.4);
  add(0, 0, 0.2);
  add(0.25, 0, 0.25);
  add(1, 0, 0.1);
  const auto rows = fraction_monotonicity(t, Modality::AV, View::frontal);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].snr, SnrCondition::noisy(-15));
  EXPECT_TRUE(rows[0].non_increasing);
  EXPECT_FALSE(rows[1].non_increasing);
  EXPECT_EQ(rows[1].wers, (std::vector<double>{0.2, 0.25, 0.1}));
}

TEST(GridConfigJson, PresetsAndExplicitBlocks) {
  GridConfig g = nlohmann::json::parse(R"({"preset": "full", "protocol": "subject_independent",
                                           "decoder": "beam:4"})");
  EXPECT_EQ(g.blocks.size(), 2u);
  EXPECT_EQ(g.blocks[0].views.size(), 2u);
  EXPECT_EQ(g.decoder, Decoder::beam(4));
  const nlohmann::json j = g;
  const GridConfig back = j;
  EXPECT_EQ(nlohmann::json(back), j);
  GridConfig e = nlohmann::json::parse(R"({"blocks": [{"modalities": ["A"], "conditions": ["(NL,0.5L)-L"],
                                           "snrs": "noisy"}]})");
  EXPECT_EQ(e.blocks[0].snrs.size(), 8u);
  EXPECT_EQ(e.blocks[0].conditions[0].first, TrainCondition::mix(0.5));
  EXPECT_THROW((void)nlohmann::json::parse(R"({"preset": "table9"})").get<GridConfig>(), PreconditionError);
}

TEST(Report, ReproducesVideoTableLayouts) {
  const fs::path data = fs::path(AVSR_SOURCE_DIR) / "data" / "reference";
  const auto t1 = read_results_csv(data / "table1_multi_speaker_video.csv");
  EXPECT_EQ(video_table_markdown(t1),
            "| Views | L-L | NL-L | NL-NL |\n"
            "|---|---|---|---|\n"
            "| WER (Frontal) | 23.57 | 26.05 | 25.59 |\n");
  const auto t2 = read_results_csv(data / "table2_subject_independent_video.csv");
  EXPECT_EQ(video_table_markdown(t2),
            "| Views | L-L | NL-L | NL-NL |\n"
            "|---|---|---|---|\n"
            "| WER (Frontal) | 25.00 | 27.84 | 27.66 |\n"
            "| WER (Profile) | 39.45 | 47.61 | 47.47 |\n");
  const auto dir = temp_dir("report_ref");
  const auto files = emit_report(t1, dir);
  EXPECT_TRUE(files.plots.empty());
  EXPECT_NE(slurp(files.tables).find(video_table_markdown(t1)), std::string::npos);
}

TEST_F(EvaluatorTest, ReportFilesRoundTrip) {
  StubProvider stubs(StubProvider::condition_sensitive());
  ResultTable table = run_experiment_grid(GridConfig::full(SplitProtocol::multi_speaker), stubs,
                                          frontal_sources(*world_));
  const auto dir = temp_dir("report");
  const auto files = emit_report(table, dir);
  EXPECT_EQ(read_results_csv(files.csv).cells(), table.cells());
  ASSERT_EQ(files.plots.size(), 1u);
  EXPECT_EQ(files.plots[0].filename(), "multi_speaker_frontal_A-AV.svg");
  const std::string svg = slurp(files.plots[0]);
  std::size_t lines = 0;
  for (auto p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) ++lines;
  EXPECT_EQ(lines, 8u);
  EXPECT_NE(svg.find("AV: NL-CL"), std::string::npos);
  const auto summary = nlohmann::json::parse(slurp(files.summary));
  EXPECT_EQ(summary.at("cells").size(), table.size());
  EXPECT_EQ(summary.at("plots")[0].at("series")[0].at("points").size(), 8u);
  const std::string md = slurp(files.tables);
  EXPECT_NE(md.find("| Views | L-L | NL-L | NL-NL |"), std::string::npos);
  EXPECT_NE(md.find("| Model | -15 dB |"), std::string::npos);

  EXPECT_THROW(emit_report(ResultTable{}, dir), PreconditionError);
  std::ofstream(dir / "blocker") << "x";
  EXPECT_THROW(emit_report(table, dir / "blocker" / "sub"), IoError);
}

}  // namespace
}  // namespace avsr
