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

#include "avsr/training.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <unordered_map>

namespace avsr {

using nn::Parameter;
using nn::Tape;

std::string to_string(Phase p) {
  switch (p) {
    case Phase::audio: return "audio";
    case Phase::visual: return "visual";
    case Phase::fusion: return "fusion";
    case Phase::finetune: return "finetune";
  }
  return "?";
}

Phase parse_phase(const std::string& s) {
  if (s == "audio") return Phase::audio;
  if (s == "visual") return Phase::visual;
  if (s == "fusion") return Phase::fusion;
  if (s == "finetune") return Phase::finetune;
  throw PreconditionError("unknown phase '" + s + "' (expected audio, visual, fusion or finetune)");
}

Modality phase_modality(Phase p) {
  switch (p) {
    case Phase::audio: return Modality::A;
    case Phase::visual: return Modality::V;
    default: return Modality::AV;
  }
}

std::vector<std::string> phase_trainable_prefixes(Phase p) {
  switch (p) {
    case Phase::audio: return {"audio.", "head."};
    case Phase::visual: return {"visual.", "head."};
    case Phase::fusion: return {"head."};
    case Phase::finetune: return {"audio.", "visual.", "head."};
  }
  return {};
}

// ---------------------------------------------------------------------------
// Schedules

TrainSchedule TrainSchedule::standard(Phase phase) {
  TrainSchedule s;
  s.phase = phase;
  switch (phase) {
    case Phase::audio:
      s.learning_rate = 1e-3, s.batch_size = 64, s.epochs = 400;
      break;
    case Phase::visual:
      s.learning_rate = 3e-4, s.batch_size = 10, s.epochs = 120;
      break;
    case Phase::fusion:
      s.learning_rate = 3e-4, s.batch_size = 10, s.epochs = 100, s.early_stop_patience = 10;
      break;
    case Phase::finetune:
      s.learning_rate = 3e-4, s.batch_size = 10, s.epochs = 40;
      break;
  }
  return s;
}

void TrainSchedule::validate() const {
  AVSR_REQUIRE(learning_rate > 0 && std::isfinite(learning_rate), "learning rate must be positive");
  AVSR_REQUIRE(batch_size >= 1, "batch size must be at least 1");
  AVSR_REQUIRE(epochs >= 1, "epochs must be at least 1");
  AVSR_REQUIRE(clip_norm > 0, "clip norm must be positive");
  AVSR_REQUIRE(lr_decay > 0 && lr_decay <= 1, "lr_decay must be in (0, 1]");
  AVSR_REQUIRE(plateau_patience >= 1 && early_stop_patience >= 0, "patience values must be non-negative");
  AVSR_REQUIRE(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.eps > 0,
               "invalid Adam hyperparameters");
}

void to_json(nlohmann::json& j, const TrainSchedule& s) {
  j = {{"phase", to_string(s.phase)},
       {"learning_rate", s.learning_rate},
       {"batch_size", s.batch_size},
       {"epochs", s.epochs},
       {"optimizer", {{"name", "adam"}, {"beta1", s.adam.beta1}, {"beta2", s.adam.beta2}, {"eps", s.adam.eps}}},
       {"clip_norm", s.clip_norm},
       {"lr_decay", s.lr_decay},
       {"plateau_patience", s.plateau_patience},
       {"early_stop_patience", s.early_stop_patience},
       {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, TrainSchedule& s) {
  TrainSchedule out = TrainSchedule::standard(parse_phase(j.at("phase").get<std::string>()));
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("learning_rate", out.learning_rate);
  get("batch_size", out.batch_size);
  get("epochs", out.epochs);
  get("clip_norm", out.clip_norm);
  get("lr_decay", out.lr_decay);
  get("plateau_patience", out.plateau_patience);
  get("early_stop_patience", out.early_stop_patience);
  get("seed", out.seed);
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    if (o.contains("name")) {
      AVSR_REQUIRE(o.at("name") == "adam", "unsupported optimizer ", o.at("name").dump());
    }
    out.adam.beta1 = o.value("beta1", out.adam.beta1);
    out.adam.beta2 = o.value("beta2", out.adam.beta2);
    out.adam.eps = o.value("eps", out.adam.eps);
  }
  out.validate();
  s = out;
}

SnrMode SnrMode::specific(int level_db) {
  SnrCondition::noisy(level_db);  // validates the level
  return {Kind::specific, level_db};
}

SnrMode SnrMode::parse(const std::string& s) {
  if (s == "augmented") return augmented();
  if (s == "clean") return clean();
  if (s.rfind("specific:", 0) == 0) return specific(SnrCondition::parse(s.substr(9)).level_db());
  throw PreconditionError("unknown SNR mode '" + s + "' (expected augmented, clean or specific:DB)");
}

std::string SnrMode::to_string() const {
  switch (kind) {
    case Kind::augmented: return "augmented";
    case Kind::clean: return "clean";
    case Kind::specific: break;
  }
  return "specific:" + std::to_string(level_db);
}

SnrCondition SnrMode::validation_snr() const {
  return kind == Kind::specific ? SnrCondition::noisy(level_db) : SnrCondition::clean();
}

SnrCondition SnrMode::sample(Rng& rng) const {
  switch (kind) {
    case Kind::augmented: return sample_snr_condition(rng);
    case Kind::clean: return SnrCondition::clean();
    case Kind::specific: break;
  }
  return SnrCondition::noisy(level_db);
}

bool EpochRecord::operator==(const EpochRecord& o) const {
  auto same = [](double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; };
  return epoch == o.epoch && skipped == o.skipped && same(train_loss, o.train_loss) && same(val_loss, o.val_loss) &&
         same(learning_rate, o.learning_rate) && same(grad_norm, o.grad_norm);
}

void to_json(nlohmann::json& j, const EpochRecord& r) {
  j = {{"epoch", r.epoch},
       {"train_loss", r.train_loss},
       {"val_loss", std::isnan(r.val_loss) ? nlohmann::json(nullptr) : nlohmann::json(r.val_loss)},
       {"learning_rate", r.learning_rate},
       {"skipped", r.skipped},
       {"grad_norm", r.grad_norm}};
}

namespace {

EpochRecord epoch_from_json(const nlohmann::json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch");
  r.train_loss = j.at("train_loss");
  r.val_loss = j.at("val_loss").is_null() ? std::numeric_limits<double>::quiet_NaN() : j.at("val_loss").get<double>();
  r.learning_rate = j.at("learning_rate");
  r.skipped = j.at("skipped");
  r.grad_norm = j.at("grad_norm");
  return r;
}

ForwardOptions phase_forward_options(Phase p) {
  const ComponentMode on{true, true}, off{false, false};
  switch (p) {
    case Phase::audio: return {on, off, on};
    case Phase::visual: return {off, on, on};
    case Phase::fusion: return {off, off, on};
    case Phase::finetune: return {on, on, on};
  }
  return {};
}

SampleOptions sample_options_for(Modality m, const TrainData& data) {
  SampleOptions o;
  o.audio = uses_audio(m);
  o.video = uses_video(m);
  o.roi = data.roi;
  o.roi_pipeline = data.roi_pipeline;
  return o;
}

struct AdamState {
  Tensor m, v;
};

}  // namespace

// ---------------------------------------------------------------------------
// Loss evaluation

double evaluate_loss(AvsrModel& model, const SampleBuilder& builder, const std::vector<SampleSpec>& items,
                     const SnrCondition& snr, std::uint64_t noise_seed) {
  double total = 0;
  int n = 0;
  for (const auto& item : items) {
    Rng rng(eval_noise_seed(item.utt_id, snr, noise_seed));
    const Sample s = builder.build(item, snr, AugmentMode::test, NoiseBank::Region::train, rng);
    Tape tape;
    const auto r = model.forward(tape, s.input, ForwardOptions::eval());
    ctc::LossResult res;
    nn::ctc_loss(tape, r.logprobs, s.target, &res);
    if (!res.reachable) continue;
    total += res.loss;
    ++n;
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : total / n;
}

// ---------------------------------------------------------------------------
// One phase

PhaseResult train_phase(AvsrModel& model, const TrainData& data, const TrainSchedule& schedule,
                        const PhaseOptions& options) {
  schedule.validate();
  AVSR_REQUIRE(data.corpus && data.media, "training data needs a corpus and a media source");
  AVSR_REQUIRE(model.modality() == phase_modality(schedule.phase), "the ", to_string(schedule.phase),
               " phase trains a ", to_string(phase_modality(schedule.phase)), " model, got ",
               to_string(model.modality()));
  if (uses_video(model.modality())) {
    AVSR_REQUIRE(model.config().roi_height == data.roi.crop_h && model.config().roi_width == data.roi.crop_w,
                 "model expects ", model.config().roi_height, "x", model.config().roi_width, " ROIs but the ",
                 to_string(data.roi.view), " crop is ", data.roi.crop_h, "x", data.roi.crop_w);
  }
  std::ostream* log = options.log;

  std::vector<Parameter*> trainable;
  for (const auto& prefix : phase_trainable_prefixes(schedule.phase)) {
    for (auto* p : model.params_with_prefix(prefix)) {
      if (!p->is_buffer) trainable.push_back(p);
    }
  }
  const ForwardOptions fwd = phase_forward_options(schedule.phase);
  const SampleBuilder builder(*data.corpus, *data.media, data.reference, data.stats, data.noise,
                              sample_options_for(model.modality(), data));
  const Rng base(schedule.seed);
  Rng select_rng = base.fork("select");
  const auto train_items = select_train(data.split, *data.corpus, data.condition, select_rng);
  const auto val_items = select_val(data.split, *data.corpus, data.condition);
  AVSR_REQUIRE(!train_items.empty(), "no training utterances for condition ", data.condition.to_string());

  std::unordered_map<const Parameter*, AdamState> adam;
  for (auto* p : trainable) adam[p] = {Tensor(p->value.shape()), Tensor(p->value.shape())};
  long long step = 0;
  double lr = schedule.learning_rate;
  PhaseResult result;
  result.best_metric = std::numeric_limits<double>::infinity();
  int since_best = 0, since_decay = 0, start_epoch = 1;

  if (options.resume_from) {
    const Checkpoint last = load_checkpoint(*options.resume_from);
    AVSR_REQUIRE(last.meta.value("phase", "") == to_string(schedule.phase), "resume checkpoint ",
                 options.resume_from->string(), " is not from the ", to_string(schedule.phase), " phase");
    load_parameters(model, last);
    for (auto* p : trainable) {
      const Tensor* m = last.find_extra("adam.m." + p->name);
      const Tensor* v = last.find_extra("adam.v." + p->name);
      AVSR_REQUIRE(m && v, "resume checkpoint lacks optimizer state for ", p->name);
      adam[p] = {*m, *v};
    }
    const auto& st = last.meta.at("train_state");
    step = st.at("step");
    lr = st.at("learning_rate");
    since_best = st.at("since_best");
    since_decay = st.at("since_decay");
    start_epoch = st.at("epoch").get<int>() + 1;
    result.best_epoch = st.at("best_epoch");
    result.best_metric = st.at("best_metric");
    for (const auto& e : last.meta.at("history")) result.history.push_back(epoch_from_json(e));
    result.best = snapshot(model);
    for (auto& [name, t] : result.best.params) {
      if (const Tensor* b = last.find_extra("best." + name)) t = *b;
    }
  }

  std::unordered_map<const Parameter*, Tensor> accum;
  auto reset_accum = [&] {
    for (auto* p : trainable) accum[p] = Tensor(p->value.shape());
  };
  reset_accum();

  for (int epoch = start_epoch; epoch <= schedule.epochs; ++epoch) {
    const Rng erng = base.fork(static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> order(train_items.size());
    std::iota(order.begin(), order.end(), 0);
    Rng order_rng = erng.fork("order");
    order_rng.shuffle(order.begin(), order.end());

    double loss_sum = 0, norm_sum = 0;
    int reachable = 0, skipped = 0, in_batch = 0, steps = 0;
    auto apply_step = [&] {
      if (in_batch == 0) return;
      double sq = 0;
      for (auto* p : trainable) {
        auto g = accum[p].vec();
        g /= in_batch;
        sq += g.squaredNorm();
      }
      const double norm = std::sqrt(sq);
      if (!std::isfinite(norm)) {
        throw TrainingError("non-finite gradient norm in the " + to_string(schedule.phase) + " phase at epoch " +
                            std::to_string(epoch));
      }
      const double scale = norm > schedule.clip_norm ? schedule.clip_norm / norm : 1.0;
      ++step;
      const double c1 = 1.0 - std::pow(schedule.adam.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(schedule.adam.beta2, static_cast<double>(step));
      for (auto* p : trainable) {
        auto g = accum[p].vec();
        auto& st = adam[p];
        auto m = st.m.vec();
        auto v = st.v.vec();
        m = schedule.adam.beta1 * m + (1 - schedule.adam.beta1) * scale * g;
        v = schedule.adam.beta2 * v + (1 - schedule.adam.beta2) * (scale * g).cwiseAbs2();
        p->value.vec().array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + schedule.adam.eps);
      }
      norm_sum += norm;
      ++steps;
      in_batch = 0;
      reset_accum();
    };

    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      const std::size_t idx = order[pos];
      const auto& item = train_items[idx];
      // Per-utterance stream: the run does not depend on visiting order.
      Rng irng = erng.fork(static_cast<std::uint64_t>(idx));
      const SnrCondition snr = data.snr.sample(irng);
      const Sample s = builder.build(item, snr, AugmentMode::train, NoiseBank::Region::train, irng);
      Tape tape;
      const auto r = model.forward(tape, s.input, fwd);
      ctc::LossResult res;
      const auto loss = nn::ctc_loss(tape, r.logprobs, s.target, &res);
      if (!res.reachable) {
        ++skipped;
        if (log) {
          *log << "skip " << item.utt_id << ": " << s.target.size() << "-symbol target cannot fit in " << s.frames
               << " frames\n";
        }
        continue;
      }
      if (!std::isfinite(res.loss)) {
        throw TrainingError("non-finite loss (" + std::to_string(res.loss) + ") on " + item.utt_id + " in the " +
                            to_string(schedule.phase) + " phase at epoch " + std::to_string(epoch));
      }
      tape.backward(loss);
      for (const auto& [p, g] : tape.parameter_gradients()) {
        auto it = accum.find(p);
        if (it != accum.end()) it->second.vec() += g.vec();
      }
      nn::apply_running_stats(tape.running_stat_updates());
      loss_sum += res.loss;
      ++reachable;
      if (++in_batch == schedule.batch_size) apply_step();
    }
    apply_step();

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = reachable ? loss_sum / reachable : std::numeric_limits<double>::quiet_NaN();
    rec.learning_rate = lr;
    rec.skipped = skipped;
    rec.grad_norm = steps ? norm_sum / steps : 0.0;
    rec.val_loss = evaluate_loss(model, builder, val_items, data.snr.validation_snr(), schedule.seed);
    if (reachable == 0) {
      throw TrainingError("every training target was unreachable in the " + to_string(schedule.phase) + " phase");
    }
    if (!std::isfinite(rec.train_loss)) {
      throw TrainingError("training loss diverged in the " + to_string(schedule.phase) + " phase at epoch " +
                          std::to_string(epoch));
    }
    result.history.push_back(rec);
    if (log) {
      char buf[200];
      std::snprintf(buf, sizeof buf, "[%s] epoch %d train %.4f val %.4f lr %.2e skipped %d\n",
                    to_string(schedule.phase).c_str(), epoch, rec.train_loss, rec.val_loss, lr, skipped);
      *log << buf << std::flush;
    }

    const double metric = std::isnan(rec.val_loss) ? rec.train_loss : rec.val_loss;
    if (metric < result.best_metric) {
      result.best_metric = metric;
      result.best_epoch = epoch;
      result.best = snapshot(model);
      since_best = since_decay = 0;
    } else {
      ++since_best;
      if (++since_decay >= schedule.plateau_patience) {
        lr *= schedule.lr_decay;
        since_decay = 0;
      }
    }

    if (options.last_checkpoint) {
      Checkpoint last = snapshot(model);
      last.meta["phase"] = to_string(schedule.phase);
      last.meta["train_state"] = {{"epoch", epoch},          {"step", step},
                                  {"learning_rate", lr},     {"since_best", since_best},
                                  {"since_decay", since_decay}, {"best_epoch", result.best_epoch},
                                  {"best_metric", result.best_metric}};
      last.meta["history"] = result.history;
      for (auto* p : trainable) {
        last.extra.emplace_back("adam.m." + p->name, adam[p].m);
        last.extra.emplace_back("adam.v." + p->name, adam[p].v);
      }
      for (const auto& [name, t] : result.best.params) last.extra.emplace_back("best." + name, t);
      save_checkpoint(*options.last_checkpoint, last);
    }

    if (options.on_epoch && options.on_epoch(rec, model)) {
      // The caller judged the current parameters good enough; keep them.
      result.best = snapshot(model);
      result.best_epoch = epoch;
      result.best_metric = metric;
      break;
    }
    if (schedule.early_stop_patience > 0 && since_best >= schedule.early_stop_patience) {
      result.stopped_early = true;
      break;
    }
  }
  load_parameters(model, result.best);
  result.best.meta["phase"] = to_string(schedule.phase);
  result.best.meta["best_epoch"] = result.best_epoch;
  result.best.meta["best_metric"] = result.best_metric;
  return result;
}

// ---------------------------------------------------------------------------
// Pipeline

void to_json(nlohmann::json& j, const PipelineConfig& c) {
  std::vector<std::string> phases;
  for (auto p : c.phases) phases.push_back(to_string(p));
  j = {{"model", c.model},
       {"condition", c.condition.to_string()},
       {"snr_mode", c.snr.to_string()},
       {"noise", c.noise.label()},
       {"seed", c.seed},
       {"schedules", {{"audio", c.audio}, {"visual", c.visual}, {"fusion", c.fusion}, {"finetune", c.finetune}}},
       {"phases", phases}};
}

void from_json(const nlohmann::json& j, PipelineConfig& c) {
  PipelineConfig out;
  if (j.contains("model")) {
    const auto& m = j.at("model");
    if (m.is_string()) {
      const auto name = m.get<std::string>();
      AVSR_REQUIRE(name == "tiny" || name == "full", "unknown model preset '", name, "'");
      out.model = name == "tiny" ? ModelConfig::tiny() : ModelConfig::full();
    } else {
      out.model = m.get<ModelConfig>();
    }
  }
  if (j.contains("condition")) out.condition = TrainCondition::parse(j.at("condition").get<std::string>());
  if (j.contains("snr_mode")) out.snr = SnrMode::parse(j.at("snr_mode").get<std::string>());
  if (j.contains("noise")) out.noise = NoiseSpec::parse(j.at("noise").get<std::string>());
  out.seed = j.value("seed", out.seed);
  if (j.contains("schedules")) {
    const auto& s = j.at("schedules");
    auto get = [&](const char* key, TrainSchedule& field) {
      if (!s.contains(key)) return;
      nlohmann::json sj = s.at(key);
      sj["phase"] = key;
      field = sj.get<TrainSchedule>();
    };
    get("audio", out.audio);
    get("visual", out.visual);
    get("fusion", out.fusion);
    get("finetune", out.finetune);
  }
  if (j.contains("phases")) {
    out.phases.clear();
    for (const auto& p : j.at("phases")) out.phases.push_back(parse_phase(p.get<std::string>()));
  }
  c = std::move(out);
}

std::string manifest_id(const nlohmann::json& manifest) {
  nlohmann::json copy = manifest;
  copy.erase("manifest_id");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_string(copy.dump())));
  return buf;
}

namespace {

const TrainSchedule& schedule_for(const PipelineConfig& c, Phase p) {
  switch (p) {
    case Phase::audio: return c.audio;
    case Phase::visual: return c.visual;
    case Phase::fusion: return c.fusion;
    case Phase::finetune: return c.finetune;
  }
  return c.audio;
}

ModelConfig model_config_for(const PipelineConfig& c, const TrainData& data) {
  ModelConfig m = c.model;
  m.roi_height = data.roi.crop_h;
  m.roi_width = data.roi.crop_w;
  m.validate();
  return m;
}

nlohmann::json phase_summary(const PhaseResult& r, const TrainSchedule& s) {
  return {{"schedule", s},
          {"epochs_run", r.history.size()},
          {"best_epoch", r.best_epoch},
          {"best_metric", r.best_metric},
          {"stopped_early", r.stopped_early},
          {"final_train_loss", r.history.empty() ? 0.0 : r.history.back().train_loss}};
}

nlohmann::json checkpoint_meta(const TrainData& data, Phase phase, const std::string& snr_mode) {
  return {{"phase", to_string(phase)},
          {"modality", to_string(phase_modality(phase))},
          {"train_condition", data.condition.to_string()},
          {"snr_mode", snr_mode},
          {"view", to_string(data.roi.view)},
          {"protocol", to_string(data.split.protocol)}};
}

nlohmann::json base_manifest(const PipelineConfig& config, const TrainData& data) {
  return {{"pipeline", config},
          {"model_config", model_config_for(config, data)},
          {"seed", config.seed},
          {"train_condition", data.condition.to_string()},
          {"snr_mode", data.snr.to_string()},
          {"rms_stats", {{"mean_rms_lombard", data.stats.mean_rms_lombard},
                         {"mean_rms_plain", data.stats.mean_rms_plain},
                         {"source", "training set"}}},
          {"split", {{"protocol", to_string(data.split.protocol)},
                     {"train", data.split.train.size()},
                     {"val", data.split.val.size()},
                     {"test", data.split.test.size()},
                     {"lombard_fraction", data.split.lombard_fraction},
                     {"digest", manifest_id({{"train", data.split.train}, {"val", data.split.val},
                                             {"test", data.split.test}})}}},
          {"view", to_string(data.roi.view)},
          {"noise", config.noise.label()},
          {"bn_momentum", 0.1},
          {"validation", {{"snr", data.snr.validation_snr().label()}, {"augmentation", "center crop, no flip"}}}};
}

std::uint64_t phase_seed(std::uint64_t seed, Phase p) { return splitmix64(seed ^ hash_string(to_string(p))); }

}  // namespace

PipelineResult run_full_pipeline(const PipelineConfig& config, const TrainData& data,
                                 const std::filesystem::path& out_dir, std::ostream* log) {
  std::filesystem::create_directories(out_dir);
  TrainData d = data;
  d.snr = config.snr;
  d.condition = config.condition;
  const ModelConfig mc = model_config_for(config, d);
  PipelineResult out;
  out.audio_checkpoint = out_dir / "audio.ckpt";
  out.visual_checkpoint = out_dir / "visual.ckpt";
  out.fusion_checkpoint = out_dir / "fusion.ckpt";
  out.av_checkpoint = out_dir / "finetune.ckpt";
  nlohmann::json manifest = base_manifest(config, d);
  auto& phases_json = manifest["phases"] = nlohmann::json::object();

  auto require = [&](const std::filesystem::path& p, Phase needed, Phase by) {
    if (!std::filesystem::exists(p)) {
      throw PreconditionError("the " + to_string(by) + " phase needs the " + to_string(needed) +
                              " checkpoint " + p.string() + "; run the " + to_string(needed) + " phase first");
    }
  };

  for (Phase phase : config.phases) {
    TrainSchedule sched = schedule_for(config, phase);
    sched.phase = phase;
    sched.seed = phase_seed(config.seed, phase);
    AvsrModel model(mc, phase_modality(phase), config.seed);
    std::filesystem::path dest;
    switch (phase) {
      case Phase::audio: dest = out.audio_checkpoint; break;
      case Phase::visual: dest = out.visual_checkpoint; break;
      case Phase::fusion: {
        require(out.audio_checkpoint, Phase::audio, phase);
        require(out.visual_checkpoint, Phase::visual, phase);
        load_parameters(model, load_checkpoint(out.audio_checkpoint), "audio.");
        load_parameters(model, load_checkpoint(out.visual_checkpoint), "visual.");
        dest = out.fusion_checkpoint;
        break;
      }
      case Phase::finetune: {
        require(out.fusion_checkpoint, Phase::fusion, phase);
        load_parameters(model, load_checkpoint(out.fusion_checkpoint));
        dest = out.av_checkpoint;
        break;
      }
    }
    if (log) *log << "phase " << to_string(phase) << " -> " << dest.string() << "\n";
    PhaseOptions opts;
    opts.log = log;
    opts.last_checkpoint = out_dir / (to_string(phase) + ".last.ckpt");
    PhaseResult r = train_phase(model, d, sched, opts);
    r.best.meta.update(checkpoint_meta(d, phase, d.snr.to_string()));
    r.best.meta["history"] = r.history;
    save_checkpoint(dest, r.best);
    std::filesystem::remove(*opts.last_checkpoint);
    phases_json[to_string(phase)] = phase_summary(r, sched);
    phases_json[to_string(phase)]["checkpoint"] = dest.filename().string();
  }
  manifest["manifest_id"] = manifest_id(manifest);
  out.manifest = out_dir / "run_manifest.json";
  std::ofstream(out.manifest) << manifest.dump(2) << "\n";
  out.manifest_json = std::move(manifest);
  return out;
}

std::vector<std::filesystem::path> train_snr_specific_audio(const PipelineConfig& config, const TrainData& data,
                                                            const std::filesystem::path& out_dir, std::ostream* log) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> paths;
  nlohmann::json manifest = base_manifest(config, data);
  manifest["snr_mode"] = "specific";
  auto& models = manifest["models"] = nlohmann::json::array();
  const ModelConfig mc = model_config_for(config, data);
  for (int level : kSnrLevelsDb) {
    TrainData d = data;
    d.condition = config.condition;
    d.snr = SnrMode::specific(level);
    TrainSchedule sched = config.audio;
    sched.phase = Phase::audio;
    sched.seed = phase_seed(config.seed ^ static_cast<std::uint64_t>(level + 100), Phase::audio);
    AvsrModel model(mc, Modality::A, config.seed);
    PhaseOptions opts;
    opts.log = log;
    PhaseResult r = train_phase(model, d, sched, opts);
    r.best.meta.update(checkpoint_meta(d, Phase::audio, d.snr.to_string()));
    r.best.meta["history"] = r.history;
    const auto path = out_dir / ("audio_snr" + std::to_string(level) + ".ckpt");
    save_checkpoint(path, r.best);
    paths.push_back(path);
    auto summary = phase_summary(r, sched);
    summary["snr_db"] = level;
    summary["checkpoint"] = path.filename().string();
    models.push_back(summary);
  }
  manifest["manifest_id"] = manifest_id(manifest);
  std::ofstream(out_dir / "run_manifest.json") << manifest.dump(2) << "\n";
  return paths;
}

}  // namespace avsr
