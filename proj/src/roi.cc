#include "lipread/roi.h"

#include <cmath>
#include <stdexcept>
#include <string>

#include "lipread/rng.h"

namespace lipread {

Point2 SimilarityTransform::apply(Point2 p) const {
  const double c = scale * std::cos(rotation);
  const double s = scale * std::sin(rotation);
  return {c * p.x - s * p.y + tx, s * p.x + c * p.y + ty};
}

SimilarityTransform SimilarityTransform::inverse() const {
  SimilarityTransform inv;
  inv.scale = 1.0 / scale;
  inv.rotation = -rotation;
  const Point2 t = inv.apply({tx, ty});
  inv.tx = -t.x;
  inv.ty = -t.y;
  return inv;
}

SimilarityTransform SimilarityTransform::compose(const SimilarityTransform& other) const {
  SimilarityTransform out;
  out.scale = scale * other.scale;
  out.rotation = rotation + other.rotation;
  const Point2 t = apply({other.tx, other.ty});
  out.tx = t.x;
  out.ty = t.y;
  return out;
}

SimilarityTransform estimate_similarity(std::span<const Point2> src, std::span<const Point2> ref) {
  if (src.size() != ref.size() || src.empty())
    throw std::invalid_argument("estimate_similarity: point sets must be non-empty and of equal size");
  const double n = static_cast<double>(src.size());
  Point2 ms, mr;
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (!std::isfinite(src[i].x) || !std::isfinite(src[i].y) || !std::isfinite(ref[i].x) ||
        !std::isfinite(ref[i].y))
      throw std::invalid_argument("estimate_similarity: non-finite landmark " + std::to_string(i));
    ms.x += src[i].x;
    ms.y += src[i].y;
    mr.x += ref[i].x;
    mr.y += ref[i].y;
  }
  ms.x /= n;
  ms.y /= n;
  mr.x /= n;
  mr.y /= n;

  // a = sum <s, r>, b = sum s x r over centered points; the optimal rotation
  // is atan2(b, a) and the optimal scale |(a, b)| / sum |s|^2.
  double a = 0.0, b = 0.0, spread = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double sx = src[i].x - ms.x, sy = src[i].y - ms.y;
    const double rx = ref[i].x - mr.x, ry = ref[i].y - mr.y;
    a += sx * rx + sy * ry;
    b += sx * ry - sy * rx;
    spread += sx * sx + sy * sy;
  }
  if (!(spread > 0.0)) throw std::invalid_argument("estimate_similarity: degenerate source (zero spread)");

  SimilarityTransform t;
  t.rotation = std::atan2(b, a);
  t.scale = std::hypot(a, b) / spread;
  if (!(t.scale > 0.0)) throw std::invalid_argument("estimate_similarity: reference has zero spread");
  t.tx = 0.0;
  t.ty = 0.0;
  const Point2 moved = t.apply(ms);
  t.tx = mr.x - moved.x;
  t.ty = mr.y - moved.y;
  return t;
}

SimilarityTransform estimate_similarity(const LandmarkFrame& src, const LandmarkFrame& ref) {
  return estimate_similarity(std::span<const Point2>(src.points), std::span<const Point2>(ref.points));
}

const LandmarkFrame& neutral_reference() {
  // iBUG 68-point layout drawn on a 96x96 canvas: jaw 0-16, brows 17-26,
  // nose 27-35, eyes 36-47, outer lip 48-59, inner lip 60-67.
  static const LandmarkFrame frame = [] {
    LandmarkFrame f;
    auto& p = f.points;
    const double pi = 3.14159265358979323846;
    for (int i = 0; i <= 16; ++i) {
      const double a = pi * (1.0 - i / 16.0);
      p[i] = {48.0 + 44.0 * std::cos(a), 30.0 + 44.0 * std::sin(a)};
    }
    for (int i = 0; i < 5; ++i) {
      p[17 + i] = {14.0 + 6.5 * i, -16.0 - 2.0 * std::sin(pi * i / 4.0)};
      p[22 + i] = {56.0 + 6.5 * i, -16.0 - 2.0 * std::sin(pi * i / 4.0)};
    }
    for (int i = 0; i < 4; ++i) p[27 + i] = {48.0, -8.0 + 7.0 * i};
    for (int i = 0; i < 5; ++i) p[31 + i] = {40.0 + 4.0 * i, 22.0 + (i == 2 ? 2.0 : 0.0)};
    for (int i = 0; i < 6; ++i) {
      const double a = 2.0 * pi * i / 6.0;
      p[36 + i] = {26.0 + 7.0 * std::cos(a), -6.0 - 3.0 * std::sin(a)};
      p[42 + i] = {70.0 + 7.0 * std::cos(a), -6.0 - 3.0 * std::sin(a)};
    }
    for (int i = 0; i < 12; ++i) {
      const double a = pi - 2.0 * pi * i / 12.0;
      p[48 + i] = {48.0 + 16.0 * std::cos(a), 48.0 - 8.0 * std::sin(a)};
    }
    for (int i = 0; i < 8; ++i) {
      const double a = pi - 2.0 * pi * i / 8.0;
      p[60 + i] = {48.0 + 10.0 * std::cos(a), 48.0 - 3.0 * std::sin(a)};
    }
    return f;
  }();
  return frame;
}

Point2 mouth_center(const LandmarkFrame& landmarks, const SimilarityTransform& t) {
  Point2 c;
  for (int i = kMouthFirst; i < kNumLandmarks; ++i) {
    const Point2 q = t.apply(landmarks.points[static_cast<std::size_t>(i)]);
    c.x += q.x;
    c.y += q.y;
  }
  const double n = kNumLandmarks - kMouthFirst;
  return {c.x / n, c.y / n};
}

double sample_bilinear(const Image& image, double x, double y) {
  const double fx0 = std::floor(x), fy0 = std::floor(y);
  if (fx0 < -1.0 || fy0 < -1.0 || fx0 > image.width || fy0 > image.height) return 0.0;
  const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
  const double fx = x - fx0, fy = y - fy0;
  auto pix = [&](int r, int c) {
    return (r >= 0 && r < image.height && c >= 0 && c < image.width) ? image.at(r, c) : 0.0;
  };
  return (1.0 - fy) * ((1.0 - fx) * pix(y0, x0) + fx * pix(y0, x0 + 1)) +
         fy * ((1.0 - fx) * pix(y0 + 1, x0) + fx * pix(y0 + 1, x0 + 1));
}

Image warp_crop(const Image& frame, const SimilarityTransform& t, Point2 center, int size) {
  if (size <= 0) throw std::invalid_argument("warp_crop: size must be positive");
  const SimilarityTransform inv = t.inverse();
  const double x0 = center.x - size / 2.0;
  const double y0 = center.y - size / 2.0;
  Image patch(size, size);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const Point2 q = inv.apply({x0 + c, y0 + r});
      patch.at(r, c) = sample_bilinear(frame, q.x, q.y);
    }
  }
  return patch;
}

Image RoiClip::frame(int t) const {
  Image img(height, width);
  std::copy(data.begin() + static_cast<std::ptrdiff_t>(t * frame_size()),
            data.begin() + static_cast<std::ptrdiff_t>((t + 1) * frame_size()), img.pixels.begin());
  return img;
}

void RoiClip::set_frame(int t, const Image& image) {
  if (image.height != height || image.width != width) throw std::invalid_argument("set_frame: size mismatch");
  std::copy(image.pixels.begin(), image.pixels.end(), data.begin() + static_cast<std::ptrdiff_t>(t * frame_size()));
}

NormStats fit_norm_stats(std::span<const RoiClip> clips) {
  // Chan et al. pairwise merge of per-clip (count, mean, M2).
  double count = 0.0, mean = 0.0, m2 = 0.0;
  for (const auto& clip : clips) {
    if (clip.data.empty()) continue;
    const double n = static_cast<double>(clip.data.size());
    double cm = 0.0;
    for (double v : clip.data) cm += v;
    cm /= n;
    double cm2 = 0.0;
    for (double v : clip.data) cm2 += (v - cm) * (v - cm);
    const double total = count + n;
    const double delta = cm - mean;
    mean += delta * n / total;
    m2 += cm2 + delta * delta * count * n / total;
    count = total;
  }
  if (count == 0.0) throw std::invalid_argument("fit_norm_stats: no pixels");
  NormStats stats{mean, m2 / count};
  if (!(stats.variance > 0.0)) throw std::invalid_argument("fit_norm_stats: zero variance");
  return stats;
}

void apply_norm(RoiClip& clip, const NormStats& stats) {
  const double inv_std = 1.0 / std::sqrt(stats.variance);
  for (double& v : clip.data) v = (v - stats.mean) * inv_std;
}

RoiClip crop_clip(const RoiClip& clip, int top, int left, int size) {
  if (top < 0 || left < 0 || top + size > clip.height || left + size > clip.width)
    throw std::invalid_argument("crop_clip: window outside clip");
  RoiClip out(clip.frames, size, size);
  out.fps = clip.fps;
  for (int t = 0; t < clip.frames; ++t)
    for (int r = 0; r < size; ++r)
      for (int c = 0; c < size; ++c) out.at(t, r, c) = clip.at(t, top + r, left + c);
  return out;
}

RoiClip center_crop(const RoiClip& clip, int size) {
  return crop_clip(clip, (clip.height - size) / 2, (clip.width - size) / 2, size);
}

RoiClip hflip(const RoiClip& clip) {
  RoiClip out = clip;
  for (int t = 0; t < clip.frames; ++t)
    for (int r = 0; r < clip.height; ++r)
      for (int c = 0; c < clip.width; ++c) out.at(t, r, c) = clip.at(t, r, clip.width - 1 - c);
  return out;
}

Image mean_frame(const RoiClip& clip) {
  Image m(clip.height, clip.width);
  for (int t = 0; t < clip.frames; ++t)
    for (std::size_t i = 0; i < clip.frame_size(); ++i) m.pixels[i] += clip.data[t * clip.frame_size() + i];
  for (double& v : m.pixels) v /= clip.frames;
  return m;
}

Augmented augment_traced(const RoiClip& clip, uint64_t seed, const AugmentConfig& cfg) {
  if (clip.frames == 0) throw std::invalid_argument("augment: empty clip");
  if (clip.height < cfg.crop || clip.width < cfg.crop)
    throw std::invalid_argument("augment: clip smaller than crop size");
  Rng rng(seed);
  Augmented out;
  out.top = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(clip.height - cfg.crop + 1)));
  out.left = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(clip.width - cfg.crop + 1)));
  out.clip = crop_clip(clip, out.top, out.left, cfg.crop);
  out.flipped = rng.bernoulli(cfg.hflip_prob);
  if (out.flipped) out.clip = hflip(out.clip);
  if (cfg.time_mask) {
    const int max_len = (clip.frames + 4) / 5;
    const int len = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(max_len + 1)));
    const int begin = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(clip.frames - len + 1)));
    out.mask_begin = begin;
    out.mask_end = begin + len;
    if (len > 0) {
      const Image mean = mean_frame(out.clip);
      for (int t = begin; t < begin + len; ++t) out.clip.set_frame(t, mean);
    }
  }
  return out;
}

RoiClip augment(const RoiClip& clip, uint64_t seed, const AugmentConfig& cfg) {
  return augment_traced(clip, seed, cfg).clip;
}

}  // namespace lipread
