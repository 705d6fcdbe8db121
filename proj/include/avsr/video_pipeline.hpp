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

#include <span>
#include <vector>

#include "avsr/common.hpp"
#include "avsr/corpus.hpp"
#include "avsr/media.hpp"

namespace avsr {

// Mouth box and training-crop dimensions for one camera view.
struct RoiSpec {
  View view = View::frontal;
  int box_w = 140;
  int box_h = 200;
  int crop_w = 130;
  int crop_h = 190;

  static RoiSpec frontal() { return {View::frontal, 140, 200, 130, 190}; }
  static RoiSpec profile() { return {View::profile, 80, 60, 75, 55}; }
  static RoiSpec for_view(View v) { return v == View::frontal ? frontal() : profile(); }
  void validate() const;
};

// x' = a x + b y + tx,  y' = c x + d y + ty
struct AffineTransform {
  double a = 1, b = 0, c = 0, d = 1, tx = 0, ty = 0;

  Point2 apply(Point2 p) const { return {a * p.x + b * p.y + tx, c * p.x + d * p.y + ty}; }
  AffineTransform inverse() const;
  // sqrt(|det|): the isotropic scale factor.
  double scale() const;
};

// Least-squares affine map taking src[i] onto dst[i]. Throws when the
// source points are collinear (or fewer than three).
AffineTransform estimate_affine(std::span<const Point2> src, std::span<const Point2> dst);

LandmarkSet transform_landmarks(const LandmarkSet& set, const AffineTransform& t);

struct AlignedFrame {
  GrayImage frame;
  AffineTransform transform;  // input pixel coordinates -> aligned coordinates
};

// Warps the frame so its five stable points land on the reference's, by
// bilinear resampling. Pixels mapping outside the input are zero.
AlignedFrame align_face(const GrayImage& frame, const LandmarkSet& landmarks,
                        const LandmarkSet& reference);

// box_h x box_w patch centred on the rounded mouth-point centroid; zero
// outside the frame.
GrayImage extract_mouth_roi(const GrayImage& frame, const LandmarkSet& landmarks, const RoiSpec& spec);

enum class AugmentMode { train, test };

struct CropDecision {
  int x = 0;
  int y = 0;
  bool flip = false;
};

// Train: one random crop offset and one flip draw (p = 0.5) for the whole
// utterance. Test: the centre crop, never flipped.
CropDecision sample_crop(const RoiSpec& spec, AugmentMode mode, Rng& rng);
FrameSequence apply_crop(const FrameSequence& rois, const RoiSpec& spec, const CropDecision& crop);
FrameSequence augment_rois(const FrameSequence& rois, const RoiSpec& spec, AugmentMode mode, Rng& rng);

FrameSequence flip_horizontal(const FrameSequence& seq);

// Zero mean, unit variance over the whole utterance.
FrameSequence normalize_intensity(const FrameSequence& seq);

// Per-coordinate running median over `width` frames (odd), clamped at the
// sequence ends. Width 1 returns the track unchanged.
LandmarkTrack smooth_landmarks(const LandmarkTrack& track, int width = 5);

// Source of per-frame landmarks. Implementations must tolerate concurrent
// calls or be used one per worker.
class LandmarkProvider {
 public:
  virtual ~LandmarkProvider() = default;
  virtual LandmarkSet detect(const GrayImage& frame, std::size_t frame_index) const = 0;
};

// Replays a precomputed track, e.g. one written by an external detector.
class TrackLandmarkProvider : public LandmarkProvider {
 public:
  explicit TrackLandmarkProvider(LandmarkTrack track) : track_(std::move(track)) {}
  LandmarkSet detect(const GrayImage& frame, std::size_t frame_index) const override;

 private:
  LandmarkTrack track_;
};

struct RoiPipelineOptions {
  int smoothing_width = 5;
};

// Detect -> smooth -> align -> extract, for every frame. Output frames are
// spec.box_h x spec.box_w.
FrameSequence extract_roi_sequence(const FrameSequence& video, const LandmarkProvider& provider,
                                   const LandmarkSet& reference, const RoiSpec& spec,
                                   const RoiPipelineOptions& options = {});

}  // namespace avsr
