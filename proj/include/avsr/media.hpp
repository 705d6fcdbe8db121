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

#include "avsr/common.hpp"

namespace avsr {

// Mono waveform. Samples are nominally in [-1, 1]; mixing may exceed that
// range and values are only clamped when written to disk.
struct AudioSignal {
  std::vector<double> samples;
  int sample_rate_hz = kSampleRate;

  AudioSignal() = default;
  explicit AudioSignal(std::vector<double> s, int rate = kSampleRate)
      : samples(std::move(s)), sample_rate_hz(rate) {}

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

// Grayscale image with intensities in [0, 255], row-major.
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  GrayImage() = default;
  GrayImage(int h, int w, float fill = 0.0f)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}

  float& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * width + c]; }
  float at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * width + c]; }
  // Zero outside the image.
  float at_or_zero(int r, int c) const {
    return (r < 0 || c < 0 || r >= height || c >= width) ? 0.0f : at(r, c);
  }
  bool operator==(const GrayImage&) const = default;
};

struct FrameSequence {
  std::vector<GrayImage> frames;
  int fps = kVideoFps;

  std::size_t size() const { return frames.size(); }
  bool empty() const { return frames.empty(); }
  int height() const { return frames.empty() ? 0 : frames.front().height; }
  int width() const { return frames.empty() ? 0 : frames.front().width; }
  // Throws unless T >= 1 and all frames share dimensions.
  void validate() const;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point2&) const = default;
};

// Named landmark coordinates in pixels for one frame.
class LandmarkSet {
 public:
  static constexpr const char* kLeftEyeOuter = "left_eye_outer";
  static constexpr const char* kLeftEyeInner = "left_eye_inner";
  static constexpr const char* kRightEyeInner = "right_eye_inner";
  static constexpr const char* kRightEyeOuter = "right_eye_outer";
  static constexpr const char* kNoseTip = "nose_tip";
  static constexpr std::string_view kMouthPrefix = "mouth_";

  // The five alignment anchors, in a fixed order.
  static const std::vector<std::string>& stable_point_names();

  void set(const std::string& name, Point2 p);
  bool contains(const std::string& name) const;
  const Point2& at(const std::string& name) const;
  const std::vector<std::pair<std::string, Point2>>& points() const { return points_; }

  bool has_stable_points() const;
  std::vector<Point2> stable_points() const;
  // Points whose name starts with "mouth_".
  std::vector<Point2> mouth_points() const;
  bool inside(int height, int width) const;

  bool operator==(const LandmarkSet&) const = default;

 private:
  std::vector<std::pair<std::string, Point2>> points_;
};

using LandmarkTrack = std::vector<LandmarkSet>;

// 16-bit PCM mono WAV. Reading rejects other formats and sample rates.
AudioSignal read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const AudioSignal& signal);

// Raw grayscale frame stack: "AVFS", then little-endian uint32 height,
// width and frame count, then uint8 pixels frame-major, row-major.
inline constexpr char kFrameStackMagic[4] = {'A', 'V', 'F', 'S'};
FrameSequence read_frame_stack(const std::filesystem::path& path);
void write_frame_stack(const std::filesystem::path& path, const FrameSequence& frames);

// {"frames": [{"name": [x, y], ...}, ...]}
LandmarkTrack read_landmark_track(const std::filesystem::path& path);
void write_landmark_track(const std::filesystem::path& path, const LandmarkTrack& track);

}  // namespace avsr
