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

#include "avsr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace avsr {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

const Tensor* find_in(const NamedTensors& list, const std::string& name) {
  for (const auto& [n, t] : list) {
    if (n == name) return &t;
  }
  return nullptr;
}

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("truncated checkpoint " + path.string());
  return v;
}

}  // namespace

const Tensor* Checkpoint::find_param(const std::string& name) const { return find_in(params, name); }
const Tensor* Checkpoint::find_extra(const std::string& name) const { return find_in(extra, name); }

Checkpoint snapshot(const AvsrModel& model, nlohmann::json meta) {
  Checkpoint c;
  c.config = model.config();
  c.modality = model.modality();
  c.meta = std::move(meta);
  for (const auto* p : model.params().all()) c.params.emplace_back(p->name, p->value);
  return c;
}

AvsrModel model_from_checkpoint(const Checkpoint& ckpt) {
  AvsrModel model(ckpt.config, ckpt.modality, 0);
  for (auto* p : model.params().all()) {
    const Tensor* t = ckpt.find_param(p->name);
    AVSR_REQUIRE(t != nullptr, "checkpoint lacks parameter '", p->name, "'");
    AVSR_REQUIRE(t->same_shape(p->value), "checkpoint parameter '", p->name, "' has shape ", t->shape_string(),
                 ", model expects ", p->value.shape_string());
    p->value = *t;
  }
  return model;
}

std::size_t load_parameters(AvsrModel& model, const Checkpoint& ckpt, const std::string& prefix) {
  std::size_t n = 0;
  for (auto* p : model.params_with_prefix(prefix)) {
    const Tensor* t = ckpt.find_param(p->name);
    AVSR_REQUIRE(t != nullptr, "checkpoint lacks parameter '", p->name, "'");
    AVSR_REQUIRE(t->same_shape(p->value), "checkpoint parameter '", p->name, "' has shape ", t->shape_string(),
                 ", model expects ", p->value.shape_string());
    p->value = *t;
    ++n;
  }
  return n;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["config"] = ckpt.config;
  header["modality"] = to_string(ckpt.modality);
  header["meta"] = ckpt.meta;
  auto& table = header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  auto add_rows = [&](const NamedTensors& list, const char* group) {
    for (const auto& [name, t] : list) {
      table.push_back({{"name", name}, {"group", group}, {"shape", t.shape()}, {"offset", offset}, {"count", t.size()}});
      offset += t.size() * sizeof(double);
    }
  };
  add_rows(ckpt.params, "param");
  add_rows(ckpt.extra, "extra");
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint " + tmp.string());
    os.write(kCheckpointMagic, sizeof kCheckpointMagic);
    put<std::uint32_t>(os, kCheckpointVersion);
    put<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto* list : {&ckpt.params, &ckpt.extra}) {
      for (const auto& [name, t] : *list) {
        os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
      }
    }
    if (!os) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw IoError(path.string() + " is not a checkpoint file");
  }
  const auto version = get<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint " + path.string() + " has unsupported format version " + std::to_string(version));
  }
  const auto len = get<std::uint64_t>(is, path);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw IoError("truncated checkpoint header in " + path.string());
  const auto header = nlohmann::json::parse(text);
  const auto data_start = is.tellg();

  Checkpoint c;
  c.config = header.at("config").get<ModelConfig>();
  c.modality = parse_modality(header.at("modality").get<std::string>());
  c.meta = header.value("meta", nlohmann::json::object());
  for (const auto& row : header.at("tensors")) {
    Tensor t(row.at("shape").get<std::vector<int>>());
    if (t.size() != row.at("count").get<std::size_t>()) throw IoError("inconsistent tensor table in " + path.string());
    is.seekg(data_start + static_cast<std::streamoff>(row.at("offset").get<std::uint64_t>()));
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!is) throw IoError("truncated tensor data in " + path.string());
    auto& list = row.at("group").get<std::string>() == "extra" ? c.extra : c.params;
    list.emplace_back(row.at("name").get<std::string>(), std::move(t));
  }
  return c;
}

}  // namespace avsr
