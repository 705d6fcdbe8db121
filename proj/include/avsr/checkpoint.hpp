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
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "avsr/avsr_model.hpp"

// Single-file parameter archive. Layout (all integers little-endian):
//
//   8 bytes   "AVSRCKPT"
//   u32       format version
//   u64       header length in bytes
//   header    UTF-8 JSON: config, modality, meta, and a tensor table
//             [{"name","group","shape","offset","count"}] with offsets in
//             bytes from the start of the data block
//   data      float64 values, row-major, tensors back to back
//
// See docs/checkpoint_format.md.
namespace avsr {

inline constexpr char kCheckpointMagic[8] = {'A', 'V', 'S', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

struct Checkpoint {
  ModelConfig config;
  Modality modality = Modality::AV;
  nlohmann::json meta = nlohmann::json::object();
  NamedTensors params;  // model parameters and buffers
  NamedTensors extra;   // e.g. optimizer moments, keyed by the caller

  const Tensor* find_param(const std::string& name) const;
  const Tensor* find_extra(const std::string& name) const;
};

Checkpoint snapshot(const AvsrModel& model, nlohmann::json meta = nlohmann::json::object());

// Builds a model of the checkpoint's config and modality holding its values.
AvsrModel model_from_checkpoint(const Checkpoint& ckpt);

// Copies every checkpoint parameter whose name starts with `prefix` into
// the model. Throws if one of the model's matching parameters is missing
// or has a different shape. Returns the number of tensors copied.
std::size_t load_parameters(AvsrModel& model, const Checkpoint& ckpt, const std::string& prefix = "");

// Writes to a temporary sibling and renames, so readers never see a
// partial file.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace avsr
