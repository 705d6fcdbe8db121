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

#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "avsr/corpus.hpp"
#include "avsr/video_pipeline.hpp"

namespace avsr {
namespace {

LandmarkSet face(double scale = 1.0, double ox = 0.0, double oy = 0.0) {
  LandmarkSet s;
  auto put = [&](const std::string& name, double x, double y) { s.set(name, {ox + scale * x, oy + scale * y}); };
  put(LandmarkSet::kLeftEyeOuter, 60, 80);
  put(LandmarkSet::kLeftEyeInner, 90, 82);
  put(LandmarkSet::kRightEyeInner, 130, 82);
  put(LandmarkSet::kRightEyeOuter, 160, 80);
  put(LandmarkSet::kNoseTip, 110, 130);
  put("mouth_left", 90, 180);
  put("mouth_right", 130, 180);
  put("mouth_top", 110, 170);
  put("mouth_bottom", 110, 190);
  return s;
}

GrayImage random_image(Rng& rng, int h, int w) {
  GrayImage img(h, w);
  for (auto& p : img.pixels) p = static_cast<float>(rng.uniform_int(256));
  return img;
}

FrameSequence random_sequence(Rng& rng, int t, int h, int w) {
  FrameSequence s;
  for (int i = 0; i < t; ++i) s.frames.push_back(random_image(rng, h, w));
  return s;
}

TEST(RoiSpecs, StandardDimensions) {
  const auto f = RoiSpec::frontal(), p = RoiSpec::profile();
  EXPECT_EQ(f.box_w, 140);
  EXPECT_EQ(f.box_h, 200);
  EXPECT_EQ(f.crop_w, 130);
  EXPECT_EQ(f.crop_h, 190);
  EXPECT_EQ(p.box_w, 80);
  EXPECT_EQ(p.box_h, 60);
  EXPECT_EQ(p.crop_w, 75);
  EXPECT_EQ(p.crop_h, 55);
  RoiSpec bad = f;
  bad.crop_w = 140;
  EXPECT_THROW(bad.validate(), PreconditionError);
}

TEST(Affine, IdentityWhenLandmarksMatchReference) {
  const auto ref = face();
  const auto t = estimate_affine(ref.stable_points(), ref.stable_points());
  EXPECT_NEAR(t.a, 1, 1e-9);
  EXPECT_NEAR(t.d, 1, 1e-9);
  EXPECT_NEAR(t.b, 0, 1e-9);
  EXPECT_NEAR(t.tx, 0, 1e-7);
  Rng rng(1);
  const auto img = random_image(rng, 240, 220);
  const auto aligned = align_face(img, ref, ref);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) ASSERT_NEAR(aligned.frame.pixels[i], img.pixels[i], 1e-3);
}

TEST(Affine, RecoversKnownScale) {
  const auto ref = face();
  const auto big = face(2.0, 5.0, -3.0);
  const auto t = estimate_affine(big.stable_points(), ref.stable_points());
  EXPECT_NEAR(t.scale(), 0.5, 1e-6);
  const auto inv = t.inverse();
  const Point2 p = inv.apply(t.apply({17, 23}));
  EXPECT_NEAR(p.x, 17, 1e-9);
  EXPECT_NEAR(p.y, 23, 1e-9);
}

TEST(Affine, RandomTransformsRecoveredExactly) {
  Rng rng(2);
  const auto ref = face();
  for (int i = 0; i < 50; ++i) {
    const AffineTransform truth{rng.uniform(0.5, 2), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3),
                                rng.uniform(0.5, 2), rng.uniform(-20, 20), rng.uniform(-20, 20)};
    const auto moved = transform_landmarks(ref, truth);
    const auto est = estimate_affine(moved.stable_points(), ref.stable_points());
    const auto back = est.apply(truth.apply({33, 44}));
    EXPECT_NEAR(back.x, 33, 1e-6);
    EXPECT_NEAR(back.y, 44, 1e-6);
  }
}

TEST(Affine, CollinearPointsRejected) {
  const std::vector<Point2> line = {{0, 0}, {1, 1}, {2, 2}, {3, 3}};
  EXPECT_THROW(estimate_affine(line, line), PreconditionError);
  const std::vector<Point2> two = {{0, 0}, {1, 0}};
  EXPECT_THROW(estimate_affine(two, two), PreconditionError);
}

TEST(MouthRoi, FrontalDimensions) {
  Rng rng(3);
  const auto img = random_image(rng, 300, 224);
  const auto roi = extract_mouth_roi(img, face(), RoiSpec::frontal());
  EXPECT_EQ(roi.height, 200);
  EXPECT_EQ(roi.width, 140);
  const auto p = extract_mouth_roi(img, face(), RoiSpec::profile());
  EXPECT_EQ(p.height, 60);
  EXPECT_EQ(p.width, 80);
}

TEST(MouthRoi, CornerCentroidIsZeroPadded) {
  GrayImage img(100, 100, 50.0f);
  LandmarkSet marks;
  marks.set("mouth_a", {0, 0});
  const auto roi = extract_mouth_roi(img, marks, RoiSpec::frontal());
  EXPECT_EQ(roi.height, 200);
  EXPECT_EQ(roi.width, 140);
  EXPECT_EQ(roi.at(0, 0), 0.0f);
  EXPECT_EQ(roi.at(199, 139), 50.0f);
  EXPECT_EQ(roi.at(99, 69), 0.0f);
  EXPECT_EQ(roi.at(100, 70), 50.0f);
}

TEST(MouthRoi, BrightRectangleLandsInCentre) {
  GrayImage img(300, 224);
  const int cx = 111, cy = 181;
  for (int r = cy - 5; r <= cy + 5; ++r) {
    for (int c = cx - 8; c <= cx + 8; ++c) img.at(r, c) = 255;
  }
  LandmarkSet marks;
  marks.set("mouth_l", {cx - 20.0, cy + 0.0});
  marks.set("mouth_r", {cx + 20.0, cy + 0.0});
  const auto roi = extract_mouth_roi(img, marks, RoiSpec::frontal());
  double sr = 0, sc = 0, n = 0;
  for (int r = 0; r < roi.height; ++r) {
    for (int c = 0; c < roi.width; ++c) {
      if (roi.at(r, c) > 0) sr += r, sc += c, ++n;
    }
  }
  EXPECT_EQ(n, 11 * 17);
  EXPECT_NEAR(sr / n, roi.height / 2, 1e-9);
  EXPECT_NEAR(sc / n, roi.width / 2, 1e-9);
}

TEST(Augment, TestModeIsCentreCropAndDeterministic) {
  Rng rng(4);
  const auto rois = random_sequence(rng, 3, 200, 140);
  Rng r1(1), r2(99);
  const auto a = augment_rois(rois, RoiSpec::frontal(), AugmentMode::test, r1);
  const auto b = augment_rois(rois, RoiSpec::frontal(), AugmentMode::test, r2);
  EXPECT_EQ(a.frames, b.frames);
  ASSERT_EQ(a.height(), 190);
  ASSERT_EQ(a.width(), 130);
  EXPECT_EQ(a.frames[1].at(0, 0), rois.frames[1].at(5, 5));
  EXPECT_EQ(a.frames[2].at(189, 129), rois.frames[2].at(194, 134));
}

TEST(Augment, TrainOffsetsCoverTheValidRange) {
  std::set<std::pair<int, int>> offsets;
  Rng rng(5);
  for (int i = 0; i < 5000; ++i) {
    const auto c = sample_crop(RoiSpec::frontal(), AugmentMode::train, rng);
    ASSERT_GE(c.x, 0);
    ASSERT_LE(c.x, 10);
    ASSERT_GE(c.y, 0);
    ASSERT_LE(c.y, 10);
    offsets.insert({c.x, c.y});
  }
  EXPECT_EQ(offsets.size(), 121u);
}

TEST(Augment, OneDecisionPerUtterance) {
  Rng data(6);
  // Identical frames stay identical after augmentation only if every frame
  // got the same crop and flip.
  const auto img = random_image(data, 200, 140);
  FrameSequence rois;
  for (int t = 0; t < 8; ++t) rois.frames.push_back(img);
  for (int s = 0; s < 30; ++s) {
    Rng rng(100 + s);
    const auto out = augment_rois(rois, RoiSpec::frontal(), AugmentMode::train, rng);
    ASSERT_EQ(out.height(), 190);
    for (const auto& f : out.frames) EXPECT_EQ(f, out.frames[0]);
  }
}

TEST(Augment, FlipIsAnInvolutionAndHalfTheTime) {
  Rng rng(7);
  const auto rois = random_sequence(rng, 2, 20, 30);
  EXPECT_EQ(flip_horizontal(flip_horizontal(rois)).frames, rois.frames);
  EXPECT_EQ(flip_horizontal(rois).frames[0].at(3, 0), rois.frames[0].at(3, 29));
  int flips = 0;
  for (int i = 0; i < 10000; ++i) {
    Rng r(static_cast<std::uint64_t>(i));
    flips += sample_crop(RoiSpec::frontal(), AugmentMode::train, r).flip;
  }
  EXPECT_NEAR(flips / 10000.0, 0.5, 0.02);
}

TEST(Augment, MismatchedInputRejected) {
  Rng rng(8);
  const auto rois = random_sequence(rng, 2, 100, 100);
  EXPECT_THROW(augment_rois(rois, RoiSpec::frontal(), AugmentMode::test, rng), PreconditionError);
}

TEST(Intensity, ZeroMeanUnitVariance) {
  Rng rng(9);
  const auto seq = normalize_intensity(random_sequence(rng, 4, 12, 9));
  double sum = 0, sq = 0, n = 0;
  for (const auto& f : seq.frames) {
    for (float p : f.pixels) sum += p, sq += static_cast<double>(p) * p, ++n;
  }
  EXPECT_NEAR(sum / n, 0.0, 1e-5);
  EXPECT_NEAR(sq / n, 1.0, 1e-4);
}

TEST(Smoothing, MedianRemovesSingleFrameSpike) {
  LandmarkTrack track(9, face());
  track[4] = face(1.0, 40, 0);
  const auto s = smooth_landmarks(track, 5);
  ASSERT_EQ(s.size(), track.size());
  for (const auto& f : s) EXPECT_EQ(f, face());
  EXPECT_EQ(smooth_landmarks(track, 1), track);
  EXPECT_THROW(smooth_landmarks(track, 4), PreconditionError);
}

TEST(RoiPipeline, FixtureSequenceHasBoxDims) {
  Rng rng(10);
  const auto fx = synth_fixture_corpus(1, 1, SentenceGrammar::grid(), rng);
  const auto& u = fx.corpus().utterances().front();
  const TrackLandmarkProvider provider(fx.landmarks(u));
  const auto rois = extract_roi_sequence(fx.video(u), provider, FixtureCorpus::reference_landmarks(fx.options()),
                                         RoiSpec::frontal());
  EXPECT_EQ(rois.size(), fx.video(u).size());
  EXPECT_EQ(rois.height(), 200);
  EXPECT_EQ(rois.width(), 140);
  const LandmarkTrack short_track(1, fx.landmarks(u).front());
  const TrackLandmarkProvider short_provider(short_track);
  EXPECT_THROW(extract_roi_sequence(fx.video(u), short_provider, FixtureCorpus::reference_landmarks(fx.options()),
                                    RoiSpec::frontal()),
               PreconditionError);
}

}  // namespace
}  // namespace avsr
