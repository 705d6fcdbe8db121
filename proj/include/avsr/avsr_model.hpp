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

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "avsr/nn.hpp"
#include "avsr/tensor.hpp"

namespace avsr {

enum class Modality { A, V, AV };
std::string to_string(Modality m);
Modality parse_modality(const std::string& s);
bool uses_audio(Modality m);
bool uses_video(Modality m);

struct ModelConfig {
  std::string name = "full";
  int charset_size = 28;
  int gru_cells = 128;  // per direction; stream features are 2x this
  int gru_layers = 2;   // in each stream and in the fusion head

  // Audio stream: one entry per convolutional block. Kernels and strides
  // are in samples at 16 kHz.
  std::vector<int> audio_channels = {64, 128, 128, 256, 256};
  std::vector<int> audio_kernels = {80, 3, 3, 3, 3};
  std::vector<int> audio_strides = {4, 2, 2, 2, 2};

  // Visual stream.
  int roi_height = 190;
  int roi_width = 130;
  int visual_downsample = 1;  // area-average factor applied to ROIs first
  int visual_temporal_kernel = 5;
  int visual_front_channels = 64;
  std::vector<int> visual_stage_widths = {64, 128, 256, 512};
  int visual_blocks_per_stage = 2;

  static ModelConfig full();
  // CPU-scale variant: narrow layers, two audio blocks, 16-cell GRUs.
  static ModelConfig tiny();

  int feature_dim() const { return 2 * gru_cells; }
  int audio_rate_divisor() const;  // product of audio strides
  int audio_pool_window() const;   // 640 / audio_rate_divisor()
  int visual_input_height() const { return roi_height / visual_downsample; }
  int visual_input_width() const { return roi_width / visual_downsample; }
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Input for one utterance. `video` is [T, roi_height, roi_width] of
// normalized intensities; `audio` holds the waveform samples.
struct ModelInput {
  std::vector<double> audio;
  Tensor video;
};

// Per-component behaviour of a forward pass.
struct ComponentMode {
  bool trainable = false;  // collect parameter gradients
  bool train_bn = false;   // batch statistics instead of running ones
};

struct ForwardOptions {
  ComponentMode audio;
  ComponentMode visual;
  ComponentMode head;

  static ForwardOptions eval() { return {}; }
  static ForwardOptions train_all() { return {{true, true}, {true, true}, {true, true}}; }
};

struct ForwardResult {
  nn::Tape::Id logprobs = nn::Tape::kNone;
  nn::Tape::Id audio_features = nn::Tape::kNone;
  nn::Tape::Id visual_features = nn::Tape::kNone;
};

class AvsrModel {
 public:
  AvsrModel(ModelConfig config, Modality modality, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  Modality modality() const { return modality_; }
  nn::ParameterStore& params() { return params_; }
  const nn::ParameterStore& params() const { return params_; }
  // Parameters whose names start with prefix, e.g. "audio." or "head.".
  std::vector<nn::Parameter*> params_with_prefix(const std::string& prefix);

  // [T, feature_dim] with T = floor(N / 640). Throws for N < 640.
  nn::Tape::Id audio_stream(nn::Tape& tape, const std::vector<double>& wave, ComponentMode mode);
  // Spatiotemporal front end and ResNet, before the recurrent layers:
  // [T, C] per-frame vectors.
  nn::Tape::Id visual_trunk(nn::Tape& tape, const Tensor& video, ComponentMode mode);
  // [T, feature_dim].
  nn::Tape::Id visual_stream(nn::Tape& tape, const Tensor& video, ComponentMode mode);
  // Concatenates whichever streams are given (kNone for absent) and
  // returns [T, charset_size] log-probabilities.
  nn::Tape::Id fusion_head(nn::Tape& tape, nn::Tape::Id audio, nn::Tape::Id visual, ComponentMode mode);

  ForwardResult forward(nn::Tape& tape, const ModelInput& input, const ForwardOptions& options);

  // Evaluation-mode log-probabilities. Read-only; safe to call
  // concurrently.
  RowMatrix infer(const ModelInput& input);

 private:
  nn::Parameter& add_param(const std::string& name, std::vector<int> shape, double bound, std::uint64_t seed);
  void add_bn(const std::string& name, int channels);
  void add_bgru(const std::string& name, int input_dim, int layers, std::uint64_t seed);
  void add_conv(const std::string& name, int cout, int cin, int kt, int kh, int kw, bool bias, std::uint64_t seed);

  nn::Tape::Id bn(nn::Tape& tape, nn::Tape::Id x, const std::string& name, ComponentMode mode);
  nn::Tape::Id bgru(nn::Tape& tape, nn::Tape::Id x, const std::string& name, ComponentMode mode);
  nn::Tape::Id param(nn::Tape& tape, const std::string& name, ComponentMode mode);

  ModelConfig config_;
  Modality modality_;
  nn::ParameterStore params_;
};

// Area-average downsampling of each frame of [T,H,W] by an integer factor;
// trailing rows and columns that do not fill a block are dropped.
Tensor downsample_frames(const Tensor& video, int factor);

}  // namespace avsr
