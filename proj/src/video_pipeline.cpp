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

#include "avsr/video_pipeline.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

namespace avsr {

void RoiSpec::validate() const {
  AVSR_REQUIRE(crop_w < box_w && crop_h < box_h, "crop ", crop_w, "x", crop_h,
               " must be strictly smaller than box ", box_w, "x", box_h);
  AVSR_REQUIRE(crop_w > 0 && crop_h > 0, "crop dimensions must be positive");
}

AffineTransform AffineTransform::inverse() const {
  const double det = a * d - b * c;
  AVSR_REQUIRE(std::abs(det) > 1e-300, "affine transform is singular");
  AffineTransform inv;
  inv.a = d / det;
  inv.b = -b / det;
  inv.c = -c / det;
  inv.d = a / det;
  inv.tx = -(inv.a * tx + inv.b * ty);
  inv.ty = -(inv.c * tx + inv.d * ty);
  return inv;
}

double AffineTransform::scale() const { return std::sqrt(std::abs(a * d - b * c)); }

AffineTransform estimate_affine(std::span<const Point2> src, std::span<const Point2> dst) {
  AVSR_REQUIRE(src.size() == dst.size(), "point sets differ in size (", src.size(), " vs ",
               dst.size(), ")");
  AVSR_REQUIRE(src.size() >= 3, "affine estimation needs at least 3 points");
  const auto n = static_cast<Eigen::Index>(src.size());
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& p : src) mean += Eigen::Vector2d(p.x, p.y);
  mean /= static_cast<double>(n);
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto& p : src) {
    const Eigen::Vector2d v = Eigen::Vector2d(p.x, p.y) - mean;
    cov += v * v.transpose();
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
  const double lo = eig.eigenvalues()(0), hi = eig.eigenvalues()(1);
  AVSR_REQUIRE(hi > 0.0 && lo > 1e-9 * hi, "stable points are collinear; affine alignment is degenerate");

  Eigen::MatrixXd A(n, 3);
  Eigen::MatrixXd B(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    A.row(i) << src[i].x, src[i].y, 1.0;
    B.row(i) << dst[i].x, dst[i].y;
  }
  const Eigen::MatrixXd X = A.colPivHouseholderQr().solve(B);
  AffineTransform t;
  t.a = X(0, 0);
  t.b = X(1, 0);
  t.tx = X(2, 0);
  t.c = X(0, 1);
  t.d = X(1, 1);
  t.ty = X(2, 1);
  return t;
}

LandmarkSet transform_landmarks(const LandmarkSet& set, const AffineTransform& t) {
  LandmarkSet out;
  for (const auto& [name, p] : set.points()) out.set(name, t.apply(p));
  return out;
}

namespace {

float bilinear(const GrayImage& img, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
  const double wx = x - fx, wy = y - fy;
  const double v = (1 - wy) * ((1 - wx) * img.at_or_zero(y0, x0) + wx * img.at_or_zero(y0, x0 + 1)) +
                   wy * ((1 - wx) * img.at_or_zero(y0 + 1, x0) + wx * img.at_or_zero(y0 + 1, x0 + 1));
  return static_cast<float>(v);
}

bool is_identity(const AffineTransform& t) {
  constexpr double eps = 1e-12;
  return std::abs(t.a - 1) < eps && std::abs(t.d - 1) < eps && std::abs(t.b) < eps &&
         std::abs(t.c) < eps && std::abs(t.tx) < eps && std::abs(t.ty) < eps;
}

}  // namespace

AlignedFrame align_face(const GrayImage& frame, const LandmarkSet& landmarks,
                        const LandmarkSet& reference) {
  AVSR_REQUIRE(landmarks.has_stable_points(), "frame landmarks lack the five stable points");
  AVSR_REQUIRE(reference.has_stable_points(), "reference landmarks lack the five stable points");
  const auto src = landmarks.stable_points();
  const auto dst = reference.stable_points();
  AlignedFrame out;
  out.transform = estimate_affine(src, dst);
  if (is_identity(out.transform)) {
    out.frame = frame;
    return out;
  }
  const auto inv = out.transform.inverse();
  out.frame = GrayImage(frame.height, frame.width);
  for (int y = 0; y < frame.height; ++y) {
    for (int x = 0; x < frame.width; ++x) {
      const auto p = inv.apply({static_cast<double>(x), static_cast<double>(y)});
      out.frame.at(y, x) = bilinear(frame, p.x, p.y);
    }
  }
  return out;
}

GrayImage extract_mouth_roi(const GrayImage& frame, const LandmarkSet& landmarks, const RoiSpec& spec) {
  const auto mouth = landmarks.mouth_points();
  AVSR_REQUIRE(!mouth.empty(), "landmarks contain no mouth points");
  double cx = 0, cy = 0;
  for (const auto& p : mouth) {
    cx += p.x;
    cy += p.y;
  }
  cx /= static_cast<double>(mouth.size());
  cy /= static_cast<double>(mouth.size());
  const int top = static_cast<int>(std::lround(cy)) - spec.box_h / 2;
  const int left = static_cast<int>(std::lround(cx)) - spec.box_w / 2;
  GrayImage roi(spec.box_h, spec.box_w);
  for (int r = 0; r < spec.box_h; ++r) {
    for (int c = 0; c < spec.box_w; ++c) roi.at(r, c) = frame.at_or_zero(top + r, left + c);
  }
  return roi;
}

CropDecision sample_crop(const RoiSpec& spec, AugmentMode mode, Rng& rng) {
  spec.validate();
  const int dx = spec.box_w - spec.crop_w, dy = spec.box_h - spec.crop_h;
  if (mode == AugmentMode::test) return {dx / 2, dy / 2, false};
  CropDecision c;
  c.x = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(dx) + 1));
  c.y = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(dy) + 1));
  c.flip = rng.bernoulli(0.5);
  return c;
}

FrameSequence apply_crop(const FrameSequence& rois, const RoiSpec& spec, const CropDecision& crop) {
  rois.validate();
  AVSR_REQUIRE(rois.height() == spec.box_h && rois.width() == spec.box_w, "ROI frames are ",
               rois.height(), "x", rois.width(), " (rows x cols), expected ", spec.box_h, "x",
               spec.box_w, " for the ", to_string(spec.view), " view");
  AVSR_REQUIRE(crop.x >= 0 && crop.y >= 0 && crop.x + spec.crop_w <= spec.box_w &&
                   crop.y + spec.crop_h <= spec.box_h,
               "crop offset (", crop.x, ",", crop.y, ") is outside the box");
  FrameSequence out;
  out.fps = rois.fps;
  for (const auto& f : rois.frames) {
    GrayImage img(spec.crop_h, spec.crop_w);
    for (int r = 0; r < spec.crop_h; ++r) {
      for (int c = 0; c < spec.crop_w; ++c) {
        const int src_c = crop.flip ? crop.x + spec.crop_w - 1 - c : crop.x + c;
        img.at(r, c) = f.at(crop.y + r, src_c);
      }
    }
    out.frames.push_back(std::move(img));
  }
  return out;
}

FrameSequence augment_rois(const FrameSequence& rois, const RoiSpec& spec, AugmentMode mode, Rng& rng) {
  return apply_crop(rois, spec, sample_crop(spec, mode, rng));
}

FrameSequence flip_horizontal(const FrameSequence& seq) {
  FrameSequence out = seq;
  for (auto& f : out.frames) {
    for (int r = 0; r < f.height; ++r) {
      auto* row = f.pixels.data() + static_cast<std::size_t>(r) * f.width;
      std::reverse(row, row + f.width);
    }
  }
  return out;
}

FrameSequence normalize_intensity(const FrameSequence& seq) {
  seq.validate();
  double sum = 0, sq = 0;
  std::size_t n = 0;
  for (const auto& f : seq.frames) {
    for (float v : f.pixels) {
      sum += v;
      sq += static_cast<double>(v) * v;
    }
    n += f.pixels.size();
  }
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(0.0, sq / static_cast<double>(n) - mean * mean);
  const double inv_std = var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
  FrameSequence out = seq;
  for (auto& f : out.frames) {
    for (auto& v : f.pixels) v = static_cast<float>((v - mean) * inv_std);
  }
  return out;
}

LandmarkTrack smooth_landmarks(const LandmarkTrack& track, int width) {
  AVSR_REQUIRE(width >= 1 && width % 2 == 1, "smoothing width must be odd and positive, got ", width);
  if (width == 1 || track.size() < 2) return track;
  const int half = width / 2;
  const auto n = static_cast<int>(track.size());
  LandmarkTrack out;
  std::vector<double> xs, ys;
  for (int t = 0; t < n; ++t) {
    LandmarkSet set;
    for (const auto& [name, p] : track[t].points()) {
      xs.clear();
      ys.clear();
      for (int k = std::max(0, t - half); k <= std::min(n - 1, t + half); ++k) {
        if (!track[k].contains(name)) continue;
        xs.push_back(track[k].at(name).x);
        ys.push_back(track[k].at(name).y);
      }
      auto median = [](std::vector<double>& v) {
        const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
        std::nth_element(v.begin(), mid, v.end());
        if (v.size() % 2 == 1) return *mid;
        const double hi = *mid;
        const double lo = *std::max_element(v.begin(), mid);
        return 0.5 * (lo + hi);
      };
      set.set(name, {median(xs), median(ys)});
    }
    out.push_back(std::move(set));
  }
  return out;
}

LandmarkSet TrackLandmarkProvider::detect(const GrayImage&, std::size_t frame_index) const {
  AVSR_REQUIRE(frame_index < track_.size(), "landmark track has ", track_.size(),
               " frames; frame ", frame_index, " requested");
  return track_[frame_index];
}

FrameSequence extract_roi_sequence(const FrameSequence& video, const LandmarkProvider& provider,
                                   const LandmarkSet& reference, const RoiSpec& spec,
                                   const RoiPipelineOptions& options) {
  video.validate();
  LandmarkTrack track;
  for (std::size_t t = 0; t < video.size(); ++t) {
    auto set = provider.detect(video.frames[t], t);
    AVSR_REQUIRE(set.has_stable_points(), "frame ", t, ": landmarks lack the five stable points");
    track.push_back(std::move(set));
  }
  track = smooth_landmarks(track, options.smoothing_width);
  FrameSequence out;
  out.fps = video.fps;
  for (std::size_t t = 0; t < video.size(); ++t) {
    const auto aligned = align_face(video.frames[t], track[t], reference);
    const auto moved = transform_landmarks(track[t], aligned.transform);
    out.frames.push_back(extract_mouth_roi(aligned.frame, moved, spec));
  }
  return out;
}

}  // namespace avsr
