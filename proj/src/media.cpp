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

#include "avsr/media.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace avsr {

void FrameSequence::validate() const {
  AVSR_REQUIRE(!frames.empty(), "frame sequence is empty");
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const auto& f = frames[t];
    AVSR_REQUIRE(f.height == frames[0].height && f.width == frames[0].width,
                 "frame ", t, " is ", f.height, "x", f.width, ", expected ",
                 frames[0].height, "x", frames[0].width);
    AVSR_REQUIRE(f.pixels.size() == static_cast<std::size_t>(f.height) * f.width,
                 "frame ", t, " pixel buffer size mismatch");
  }
}

const std::vector<std::string>& LandmarkSet::stable_point_names() {
  static const std::vector<std::string> names = {kLeftEyeOuter, kLeftEyeInner, kRightEyeInner,
                                                 kRightEyeOuter, kNoseTip};
  return names;
}

void LandmarkSet::set(const std::string& name, Point2 p) {
  for (auto& [n, q] : points_) {
    if (n == name) {
      q = p;
      return;
    }
  }
  points_.emplace_back(name, p);
}

bool LandmarkSet::contains(const std::string& name) const {
  return std::any_of(points_.begin(), points_.end(),
                     [&](const auto& kv) { return kv.first == name; });
}

const Point2& LandmarkSet::at(const std::string& name) const {
  for (const auto& [n, q] : points_) {
    if (n == name) return q;
  }
  throw PreconditionError("landmark '" + name + "' missing");
}

bool LandmarkSet::has_stable_points() const {
  const auto& names = stable_point_names();
  return std::all_of(names.begin(), names.end(), [&](const auto& n) { return contains(n); });
}

std::vector<Point2> LandmarkSet::stable_points() const {
  std::vector<Point2> out;
  for (const auto& n : stable_point_names()) out.push_back(at(n));
  return out;
}

std::vector<Point2> LandmarkSet::mouth_points() const {
  std::vector<Point2> out;
  for (const auto& [n, q] : points_) {
    if (std::string_view(n).starts_with(kMouthPrefix)) out.push_back(q);
  }
  return out;
}

bool LandmarkSet::inside(int height, int width) const {
  return std::all_of(points_.begin(), points_.end(), [&](const auto& kv) {
    const auto& p = kv.second;
    return p.x >= 0.0 && p.y >= 0.0 && p.x <= width - 1 && p.y <= height - 1;
  });
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<unsigned char, 4> b = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                          static_cast<unsigned char>(v >> 16),
                                          static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b.data()), 4);
}

void put_u16(std::ostream& os, std::uint16_t v) {
  const std::array<unsigned char, 2> b = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b.data()), 2);
}

std::uint32_t get_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  is.read(reinterpret_cast<char*>(b.data()), 4);
  if (!is) throw IoError("unexpected end of file");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint16_t get_u16(std::istream& is) {
  std::array<unsigned char, 2> b{};
  is.read(reinterpret_cast<char*>(b.data()), 2);
  if (!is) throw IoError("unexpected end of file");
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return is;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  return os;
}

}  // namespace

AudioSignal read_wav(const std::filesystem::path& path) {
  auto is = open_in(path);
  char tag[4];
  is.read(tag, 4);
  if (!is || std::memcmp(tag, "RIFF", 4) != 0) throw IoError(path.string() + ": not a RIFF file");
  get_u32(is);
  is.read(tag, 4);
  if (std::memcmp(tag, "WAVE", 4) != 0) throw IoError(path.string() + ": not a WAVE file");
  int channels = 0, rate = 0, bits = 0;
  bool have_fmt = false;
  while (is.read(tag, 4)) {
    const std::uint32_t size = get_u32(is);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      const auto format = get_u16(is);
      channels = get_u16(is);
      rate = static_cast<int>(get_u32(is));
      get_u32(is);
      get_u16(is);
      bits = get_u16(is);
      if (size > 16) is.ignore(size - 16);
      if (format != 1) throw IoError(path.string() + ": only PCM WAV is supported");
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!have_fmt) throw IoError(path.string() + ": data chunk before fmt chunk");
      if (channels != 1 || bits != 16) throw IoError(path.string() + ": expected 16-bit mono");
      if (rate != kSampleRate) {
        throw IoError(path.string() + ": sample rate " + std::to_string(rate) + ", expected 16000");
      }
      std::vector<double> samples(size / 2);
      for (auto& s : samples) {
        s = static_cast<std::int16_t>(get_u16(is)) / 32768.0;
      }
      return AudioSignal(std::move(samples), rate);
    } else {
      is.ignore(size + (size & 1));
    }
  }
  throw IoError(path.string() + ": no data chunk");
}

void write_wav(const std::filesystem::path& path, const AudioSignal& signal) {
  auto os = open_out(path);
  const auto data_bytes = static_cast<std::uint32_t>(signal.size() * 2);
  os.write("RIFF", 4);
  put_u32(os, 36 + data_bytes);
  os.write("WAVEfmt ", 8);
  put_u32(os, 16);
  put_u16(os, 1);
  put_u16(os, 1);
  put_u32(os, static_cast<std::uint32_t>(signal.sample_rate_hz));
  put_u32(os, static_cast<std::uint32_t>(signal.sample_rate_hz * 2));
  put_u16(os, 2);
  put_u16(os, 16);
  os.write("data", 4);
  put_u32(os, data_bytes);
  for (double s : signal.samples) {
    const double c = std::clamp(s, -1.0, 32767.0 / 32768.0);
    put_u16(os, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32768.0))));
  }
  if (!os) throw IoError("write failed: " + path.string());
}

FrameSequence read_frame_stack(const std::filesystem::path& path) {
  auto is = open_in(path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kFrameStackMagic, 4) != 0) {
    throw IoError(path.string() + ": bad frame stack magic");
  }
  const auto h = static_cast<int>(get_u32(is));
  const auto w = static_cast<int>(get_u32(is));
  const auto n = get_u32(is);
  FrameSequence seq;
  std::vector<unsigned char> buf(static_cast<std::size_t>(h) * w);
  for (std::uint32_t t = 0; t < n; ++t) {
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!is) throw IoError(path.string() + ": truncated frame " + std::to_string(t));
    GrayImage img(h, w);
    std::copy(buf.begin(), buf.end(), img.pixels.begin());
    seq.frames.push_back(std::move(img));
  }
  return seq;
}

void write_frame_stack(const std::filesystem::path& path, const FrameSequence& frames) {
  auto os = open_out(path);
  os.write(kFrameStackMagic, 4);
  put_u32(os, static_cast<std::uint32_t>(frames.height()));
  put_u32(os, static_cast<std::uint32_t>(frames.width()));
  put_u32(os, static_cast<std::uint32_t>(frames.size()));
  std::vector<unsigned char> buf;
  for (const auto& f : frames.frames) {
    buf.resize(f.pixels.size());
    std::transform(f.pixels.begin(), f.pixels.end(), buf.begin(), [](float v) {
      return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 255.0f)));
    });
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  if (!os) throw IoError("write failed: " + path.string());
}

LandmarkTrack read_landmark_track(const std::filesystem::path& path) {
  auto is = open_in(path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  LandmarkTrack track;
  for (const auto& frame : j.at("frames")) {
    LandmarkSet set;
    for (const auto& [name, xy] : frame.items()) {
      set.set(name, Point2{xy.at(0).get<double>(), xy.at(1).get<double>()});
    }
    track.push_back(std::move(set));
  }
  return track;
}

void write_landmark_track(const std::filesystem::path& path, const LandmarkTrack& track) {
  nlohmann::ordered_json j;
  j["frames"] = nlohmann::ordered_json::array();
  for (const auto& set : track) {
    nlohmann::ordered_json frame = nlohmann::ordered_json::object();
    for (const auto& [name, p] : set.points()) frame[name] = {p.x, p.y};
    j["frames"].push_back(std::move(frame));
  }
  auto os = open_out(path);
  os << j.dump() << '\n';
}

}  // namespace avsr
