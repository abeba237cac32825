#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace lipread {

constexpr int kNumLandmarks = 68;
constexpr int kMouthFirst = 48;  // mouth landmarks are 48..67
constexpr int kRoiSize = 96;
constexpr int kTrainCrop = 88;

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

struct LandmarkFrame {
  std::array<Point2, kNumLandmarks> points{};
};

// p -> scale * R(rotation) * p + (tx, ty)
struct SimilarityTransform {
  double scale = 1.0;
  double rotation = 0.0;  // radians
  double tx = 0.0;
  double ty = 0.0;

  Point2 apply(Point2 p) const;
  SimilarityTransform inverse() const;
  // (this ∘ other)(p) = this(other(p))
  SimilarityTransform compose(const SimilarityTransform& other) const;
};

// Closed-form least-squares similarity (Procrustes with scale) minimizing
// sum_i |T(src_i) - ref_i|^2. Throws std::invalid_argument on mismatched
// sizes, non-finite points or a source with zero spread.
SimilarityTransform estimate_similarity(std::span<const Point2> src, std::span<const Point2> ref);
SimilarityTransform estimate_similarity(const LandmarkFrame& src, const LandmarkFrame& ref);

// Canonical neutral face in ROI coordinates; its mouth centroid is (48, 48).
const LandmarkFrame& neutral_reference();

// Mean of landmarks 48..67 after applying t.
Point2 mouth_center(const LandmarkFrame& landmarks, const SimilarityTransform& t);

struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;  // row-major

  Image() = default;
  Image(int h, int w, double fill = 0.0) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}
  double& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * width + c]; }
  double at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * width + c]; }
};

// Bilinear sample with zero padding outside the image.
double sample_bilinear(const Image& image, double x, double y);

// Resamples `frame` warped by t (source -> aligned coordinates) and cuts a
// size x size patch whose top-left aligned coordinate is center - size/2.
// Samples falling outside the source image are 0.
Image warp_crop(const Image& frame, const SimilarityTransform& t, Point2 center, int size = kRoiSize);

// T x H x W grayscale clip.
struct RoiClip {
  int frames = 0;
  int height = 0;
  int width = 0;
  double fps = 25.0;
  std::vector<double> data;

  RoiClip() = default;
  RoiClip(int t, int h, int w, double fill = 0.0)
      : frames(t), height(h), width(w), data(static_cast<std::size_t>(t) * h * w, fill) {}
  std::size_t frame_size() const { return static_cast<std::size_t>(height) * width; }
  double& at(int t, int r, int c) { return data[t * frame_size() + static_cast<std::size_t>(r) * width + c]; }
  double at(int t, int r, int c) const { return data[t * frame_size() + static_cast<std::size_t>(r) * width + c]; }
  Image frame(int t) const;
  void set_frame(int t, const Image& image);
};

struct NormStats {
  double mean = 0.0;
  double variance = 1.0;
};

// Pooled mean/variance over every pixel of every clip (population variance).
// Throws std::invalid_argument when there are no pixels or the variance is 0.
NormStats fit_norm_stats(std::span<const RoiClip> clips);
void apply_norm(RoiClip& clip, const NormStats& stats);

RoiClip crop_clip(const RoiClip& clip, int top, int left, int size);
RoiClip center_crop(const RoiClip& clip, int size = kTrainCrop);
RoiClip hflip(const RoiClip& clip);
// Per-pixel mean over time.
Image mean_frame(const RoiClip& clip);

struct AugmentConfig {
  int crop = kTrainCrop;
  double hflip_prob = 0.5;
  bool time_mask = true;
};

struct Augmented {
  RoiClip clip;
  int top = 0;
  int left = 0;
  bool flipped = false;
  int mask_begin = 0;  // masked frames are [mask_begin, mask_end)
  int mask_end = 0;
};

// Random crop, optional horizontal flip, then one time mask of length uniform
// in [0, ceil(T/5)] filled with the clip's mean frame. Fully determined by seed.
Augmented augment_traced(const RoiClip& clip, uint64_t seed, const AugmentConfig& cfg = {});
RoiClip augment(const RoiClip& clip, uint64_t seed, const AugmentConfig& cfg = {});

}  // namespace lipread
