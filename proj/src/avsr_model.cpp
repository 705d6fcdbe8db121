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

#include "avsr/avsr_model.hpp"

#include <cmath>

namespace avsr {

using nn::Tape;

std::string to_string(Modality m) {
  switch (m) {
    case Modality::A: return "A";
    case Modality::V: return "V";
    case Modality::AV: return "AV";
  }
  return "?";
}

Modality parse_modality(const std::string& s) {
  if (s == "A") return Modality::A;
  if (s == "V") return Modality::V;
  if (s == "AV") return Modality::AV;
  throw PreconditionError("unknown modality '" + s + "' (expected A, V or AV)");
}

bool uses_audio(Modality m) { return m != Modality::V; }
bool uses_video(Modality m) { return m != Modality::A; }

// ---------------------------------------------------------------------------
// Config

ModelConfig ModelConfig::full() { return ModelConfig{}; }

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.name = "tiny";
  c.gru_cells = 16;
  c.audio_channels = {8, 16};
  c.audio_kernels = {80, 10};
  c.audio_strides = {4, 10};
  c.visual_downsample = 4;
  c.visual_front_channels = 4;
  c.visual_stage_widths = {4, 8, 8, 16};
  c.visual_blocks_per_stage = 1;
  return c;
}

int ModelConfig::audio_rate_divisor() const {
  int d = 1;
  for (int s : audio_strides) d *= s;
  return d;
}

int ModelConfig::audio_pool_window() const { return kSamplesPerFrame / audio_rate_divisor(); }

void ModelConfig::validate() const {
  AVSR_REQUIRE(charset_size >= 2, "charset_size must be at least 2");
  AVSR_REQUIRE(gru_cells >= 1 && gru_layers >= 1, "GRU cells and layers must be positive");
  AVSR_REQUIRE(!audio_channels.empty() && audio_channels.size() == audio_kernels.size() &&
                   audio_channels.size() == audio_strides.size(),
               "audio block lists must be non-empty and of equal length");
  for (std::size_t i = 0; i < audio_channels.size(); ++i) {
    AVSR_REQUIRE(audio_channels[i] >= 1 && audio_kernels[i] >= 1 && audio_strides[i] >= 1,
                 "audio block ", i + 1, " has a non-positive size");
  }
  AVSR_REQUIRE(kSamplesPerFrame % audio_rate_divisor() == 0, "audio strides (product ",
               audio_rate_divisor(), ") must divide the ", kSamplesPerFrame, " samples of a video frame");
  AVSR_REQUIRE(visual_downsample >= 1, "visual_downsample must be positive");
  AVSR_REQUIRE(visual_temporal_kernel >= 1 && visual_temporal_kernel % 2 == 1,
               "visual temporal kernel must be odd so padding preserves length");
  AVSR_REQUIRE(visual_input_height() >= 1 && visual_input_width() >= 1, "ROI smaller than downsample factor");
  AVSR_REQUIRE(visual_front_channels >= 1 && !visual_stage_widths.empty() && visual_blocks_per_stage >= 1,
               "visual widths must be positive");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"name", c.name},
       {"charset_size", c.charset_size},
       {"gru_cells", c.gru_cells},
       {"gru_layers", c.gru_layers},
       {"audio_channels", c.audio_channels},
       {"audio_kernels", c.audio_kernels},
       {"audio_strides", c.audio_strides},
       {"roi_height", c.roi_height},
       {"roi_width", c.roi_width},
       {"visual_downsample", c.visual_downsample},
       {"visual_temporal_kernel", c.visual_temporal_kernel},
       {"visual_front_channels", c.visual_front_channels},
       {"visual_stage_widths", c.visual_stage_widths},
       {"visual_blocks_per_stage", c.visual_blocks_per_stage}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  // Keys absent from j keep the base configuration's value, so a config
  // file may override only a few fields of "full" or "tiny".
  ModelConfig base = j.value("name", std::string("full")) == "tiny" ? ModelConfig::tiny() : ModelConfig::full();
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  base.name = j.value("name", base.name);
  get("charset_size", base.charset_size);
  get("gru_cells", base.gru_cells);
  get("gru_layers", base.gru_layers);
  get("audio_channels", base.audio_channels);
  get("audio_kernels", base.audio_kernels);
  get("audio_strides", base.audio_strides);
  get("roi_height", base.roi_height);
  get("roi_width", base.roi_width);
  get("visual_downsample", base.visual_downsample);
  get("visual_temporal_kernel", base.visual_temporal_kernel);
  get("visual_front_channels", base.visual_front_channels);
  get("visual_stage_widths", base.visual_stage_widths);
  get("visual_blocks_per_stage", base.visual_blocks_per_stage);
  base.validate();
  c = std::move(base);
}

// ---------------------------------------------------------------------------
// Construction

namespace {

std::string block_name(int stage, int block) {
  return "visual.layer" + std::to_string(stage + 1) + "." + std::to_string(block);
}

}  // namespace

nn::Parameter& AvsrModel::add_param(const std::string& name, std::vector<int> shape, double bound,
                                    std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng = Rng(seed).fork(name);
  for (auto& v : t.values()) v = rng.uniform(-bound, bound);
  return params_.add(name, std::move(t));
}

void AvsrModel::add_bn(const std::string& name, int channels) {
  params_.add(name + ".weight", Tensor({channels}, 1.0));
  params_.add(name + ".bias", Tensor({channels}, 0.0));
  params_.add(name + ".running_mean", Tensor({channels}, 0.0), true);
  params_.add(name + ".running_var", Tensor({channels}, 1.0), true);
}

void AvsrModel::add_conv(const std::string& name, int cout, int cin, int kt, int kh, int kw, bool bias,
                         std::uint64_t seed) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cin) * kt * kh * kw);
  add_param(name + ".weight", {cout, cin, kt, kh, kw}, bound, seed);
  if (bias) add_param(name + ".bias", {cout}, bound, seed);
}

void AvsrModel::add_bgru(const std::string& name, int input_dim, int layers, std::uint64_t seed) {
  const int H = config_.gru_cells;
  const double bound = 1.0 / std::sqrt(static_cast<double>(H));
  for (int l = 0; l < layers; ++l) {
    const int d = l == 0 ? input_dim : 2 * H;
    for (const char* dir : {"fwd", "bwd"}) {
      const std::string p = name + ".gru" + std::to_string(l) + "." + dir;
      add_param(p + ".w_ih", {3 * H, d}, bound, seed);
      add_param(p + ".w_hh", {3 * H, H}, bound, seed);
      add_param(p + ".b_ih", {3 * H}, bound, seed);
      add_param(p + ".b_hh", {3 * H}, bound, seed);
    }
  }
}

AvsrModel::AvsrModel(ModelConfig config, Modality modality, std::uint64_t seed)
    : config_(std::move(config)), modality_(modality) {
  config_.validate();
  if (uses_audio(modality_)) {
    int cin = 1;
    for (std::size_t i = 0; i < config_.audio_channels.size(); ++i) {
      const std::string n = "audio.block" + std::to_string(i + 1);
      add_conv(n + ".conv", config_.audio_channels[i], cin, config_.audio_kernels[i], 1, 1, true, seed);
      add_bn(n + ".bn", config_.audio_channels[i]);
      cin = config_.audio_channels[i];
    }
    add_bgru("audio", cin, config_.gru_layers, seed);
  }
  if (uses_video(modality_)) {
    const int c0 = config_.visual_front_channels;
    add_conv("visual.front.conv", c0, 1, config_.visual_temporal_kernel, 7, 7, false, seed);
    add_bn("visual.front.bn", c0);
    int cin = c0;
    for (std::size_t s = 0; s < config_.visual_stage_widths.size(); ++s) {
      const int w = config_.visual_stage_widths[s];
      for (int b = 0; b < config_.visual_blocks_per_stage; ++b) {
        const std::string n = block_name(static_cast<int>(s), b);
        const bool strided = s > 0 && b == 0;
        add_conv(n + ".conv1", w, cin, 1, 3, 3, false, seed);
        add_bn(n + ".bn1", w);
        add_conv(n + ".conv2", w, w, 1, 3, 3, false, seed);
        add_bn(n + ".bn2", w);
        if (strided || cin != w) {
          add_conv(n + ".shortcut.conv", w, cin, 1, 1, 1, false, seed);
          add_bn(n + ".shortcut.bn", w);
        }
        cin = w;
      }
    }
    add_bgru("visual", cin, config_.gru_layers, seed);
  }
  const int head_in = (uses_audio(modality_) ? config_.feature_dim() : 0) +
                      (uses_video(modality_) ? config_.feature_dim() : 0);
  add_bgru("head", head_in, config_.gru_layers, seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(config_.feature_dim()));
  add_param("head.fc.weight", {config_.charset_size, config_.feature_dim()}, bound, seed);
  add_param("head.fc.bias", {config_.charset_size}, bound, seed);
}

std::vector<nn::Parameter*> AvsrModel::params_with_prefix(const std::string& prefix) {
  std::vector<nn::Parameter*> out;
  for (auto* p : params_.all()) {
    if (p->name.rfind(prefix, 0) == 0) out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward

Tape::Id AvsrModel::param(Tape& tape, const std::string& name, ComponentMode mode) {
  return tape.parameter(params_.at(name), mode.trainable);
}

Tape::Id AvsrModel::bn(Tape& tape, Tape::Id x, const std::string& name, ComponentMode mode) {
  return nn::batch_norm(tape, x, param(tape, name + ".weight", mode), param(tape, name + ".bias", mode),
                        params_.at(name + ".running_mean"), params_.at(name + ".running_var"), mode.train_bn);
}

Tape::Id AvsrModel::bgru(Tape& tape, Tape::Id x, const std::string& name, ComponentMode mode) {
  for (int l = 0; l < config_.gru_layers; ++l) {
    Tape::Id out[2];
    int k = 0;
    for (const char* dir : {"fwd", "bwd"}) {
      const std::string p = name + ".gru" + std::to_string(l) + "." + dir;
      const nn::GruWeights w{param(tape, p + ".w_ih", mode), param(tape, p + ".w_hh", mode),
                             param(tape, p + ".b_ih", mode), param(tape, p + ".b_hh", mode)};
      out[k] = nn::gru(tape, x, w, k == 1);
      ++k;
    }
    x = nn::concat_cols(tape, out[0], out[1]);
  }
  return x;
}

Tape::Id AvsrModel::audio_stream(Tape& tape, const std::vector<double>& wave, ComponentMode mode) {
  AVSR_REQUIRE(uses_audio(modality_), "model of modality ", to_string(modality_), " has no audio stream");
  const int frames = static_cast<int>(wave.size() / kSamplesPerFrame);
  AVSR_REQUIRE(frames >= 1, "audio input has ", wave.size(), " samples; at least ", kSamplesPerFrame,
               " (one video frame) are required");
  const int n = frames * kSamplesPerFrame;
  Tape::Id x = tape.constant(Tensor({1, n, 1, 1}, std::vector<double>(wave.begin(), wave.begin() + n)));
  for (std::size_t i = 0; i < config_.audio_channels.size(); ++i) {
    const std::string name = "audio.block" + std::to_string(i + 1);
    nn::ConvGeometry g;
    g.kt = config_.audio_kernels[i];
    g.st = config_.audio_strides[i];
    // out = in / stride exactly, given stride divides in.
    g.pt = (g.kt - g.st + 1) / 2;
    x = nn::conv(tape, x, param(tape, name + ".conv.weight", mode), param(tape, name + ".conv.bias", mode), g);
    x = nn::relu(tape, x);
    x = bn(tape, x, name + ".bn", mode);
  }
  x = nn::channels_last(tape, x);
  x = bgru(tape, x, "audio", mode);
  return nn::avg_pool_rows(tape, x, config_.audio_pool_window());
}

Tensor downsample_frames(const Tensor& video, int factor) {
  AVSR_REQUIRE(video.rank() == 3, "video must be [T,H,W], got ", video.shape_string());
  AVSR_REQUIRE(factor >= 1, "downsample factor must be positive");
  if (factor == 1) return video;
  const int T = video.dim(0), H = video.dim(1), W = video.dim(2);
  const int Ho = H / factor, Wo = W / factor;
  AVSR_REQUIRE(Ho >= 1 && Wo >= 1, "frame ", H, "x", W, " is smaller than the downsample factor ", factor);
  Tensor out({T, Ho, Wo});
  const double inv = 1.0 / (factor * factor);
  for (int t = 0; t < T; ++t) {
    const double* in = video.data() + static_cast<std::ptrdiff_t>(t) * H * W;
    for (int r = 0; r < Ho; ++r) {
      for (int c = 0; c < Wo; ++c) {
        double s = 0;
        for (int dr = 0; dr < factor; ++dr) {
          for (int dc = 0; dc < factor; ++dc) s += in[(r * factor + dr) * W + c * factor + dc];
        }
        out[(static_cast<std::size_t>(t) * Ho + r) * Wo + c] = s * inv;
      }
    }
  }
  return out;
}

Tape::Id AvsrModel::visual_trunk(Tape& tape, const Tensor& video, ComponentMode mode) {
  AVSR_REQUIRE(uses_video(modality_), "model of modality ", to_string(modality_), " has no visual stream");
  AVSR_REQUIRE(video.rank() == 3 && video.dim(0) >= 1, "video must be [T,H,W] with T >= 1, got ",
               video.shape_string());
  AVSR_REQUIRE(video.dim(1) == config_.roi_height && video.dim(2) == config_.roi_width, "ROI frames are ",
               video.dim(1), "x", video.dim(2), " but the model expects ", config_.roi_height, "x",
               config_.roi_width);
  Tensor small = downsample_frames(video, config_.visual_downsample);
  const int T = small.dim(0);
  Tape::Id x = tape.constant(small.reshaped({1, T, small.dim(1), small.dim(2)}));

  nn::ConvGeometry front;
  front.kt = config_.visual_temporal_kernel;
  front.kh = front.kw = 7;
  front.sh = front.sw = 2;
  front.pt = config_.visual_temporal_kernel / 2;
  front.ph = front.pw = 3;
  x = nn::conv(tape, x, param(tape, "visual.front.conv.weight", mode), Tape::kNone, front);
  x = bn(tape, x, "visual.front.bn", mode);
  x = nn::relu(tape, x);
  x = nn::max_pool2d(tape, x, 3, 2, 1);

  int cin = config_.visual_front_channels;
  for (std::size_t s = 0; s < config_.visual_stage_widths.size(); ++s) {
    const int w = config_.visual_stage_widths[s];
    for (int b = 0; b < config_.visual_blocks_per_stage; ++b) {
      const std::string n = block_name(static_cast<int>(s), b);
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      nn::ConvGeometry g3;
      g3.kh = g3.kw = 3;
      g3.ph = g3.pw = 1;
      g3.sh = g3.sw = stride;
      Tape::Id y = nn::conv(tape, x, param(tape, n + ".conv1.weight", mode), Tape::kNone, g3);
      y = nn::relu(tape, bn(tape, y, n + ".bn1", mode));
      g3.sh = g3.sw = 1;
      y = nn::conv(tape, y, param(tape, n + ".conv2.weight", mode), Tape::kNone, g3);
      y = bn(tape, y, n + ".bn2", mode);
      Tape::Id shortcut = x;
      if (stride != 1 || cin != w) {
        nn::ConvGeometry g1;
        g1.sh = g1.sw = stride;
        shortcut = nn::conv(tape, x, param(tape, n + ".shortcut.conv.weight", mode), Tape::kNone, g1);
        shortcut = bn(tape, shortcut, n + ".shortcut.bn", mode);
      }
      x = nn::relu(tape, nn::add(tape, y, shortcut));
      cin = w;
    }
  }
  return nn::spatial_mean(tape, x);
}

Tape::Id AvsrModel::visual_stream(Tape& tape, const Tensor& video, ComponentMode mode) {
  return bgru(tape, visual_trunk(tape, video, mode), "visual", mode);
}

Tape::Id AvsrModel::fusion_head(Tape& tape, Tape::Id audio, Tape::Id visual, ComponentMode mode) {
  AVSR_REQUIRE((audio != Tape::kNone) == uses_audio(modality_) && (visual != Tape::kNone) == uses_video(modality_),
               "fusion head of a ", to_string(modality_), " model got the wrong set of streams");
  Tape::Id x;
  if (audio != Tape::kNone && visual != Tape::kNone) {
    const int ta = tape.value(audio).dim(0), tv = tape.value(visual).dim(0);
    AVSR_REQUIRE(ta == tv, "audio features have ", ta, " frames but visual features have ", tv);
    x = nn::concat_cols(tape, audio, visual);
  } else {
    x = audio != Tape::kNone ? audio : visual;
  }
  x = bgru(tape, x, "head", mode);
  x = nn::linear(tape, x, param(tape, "head.fc.weight", mode), param(tape, "head.fc.bias", mode));
  return nn::log_softmax(tape, x);
}

ForwardResult AvsrModel::forward(Tape& tape, const ModelInput& input, const ForwardOptions& options) {
  ForwardResult r;
  if (uses_audio(modality_)) r.audio_features = audio_stream(tape, input.audio, options.audio);
  if (uses_video(modality_)) r.visual_features = visual_stream(tape, input.video, options.visual);
  r.logprobs = fusion_head(tape, r.audio_features, r.visual_features, options.head);
  return r;
}

RowMatrix AvsrModel::infer(const ModelInput& input) {
  Tape tape;
  const auto r = forward(tape, input, ForwardOptions::eval());
  return tape.value(r.logprobs).matrix();
}

}  // namespace avsr
