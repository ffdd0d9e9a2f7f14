#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include "a2pm/error.hpp"
#include "a2pm/geometry.hpp"

namespace a2pm {

using Label = std::uint16_t;

/// Axis-aligned pixel box, half-open: min_x <= x < max_x. Pixel centers sit at
/// integer coordinates, so the continuous extent is [min - 0.5, max - 0.5).
struct BBox {
  int min_x = 0;
  int min_y = 0;
  int max_x = 0;
  int max_y = 0;

  friend bool operator==(const BBox&, const BBox&) = default;
  friend auto operator<=>(const BBox&, const BBox&) = default;

  int width() const { return max_x - min_x; }
  int height() const { return max_y - min_y; }
  long long area() const { return empty() ? 0 : static_cast<long long>(width()) * height(); }
  bool empty() const { return max_x <= min_x || max_y <= min_y; }

  Point2 center() const { return {(min_x + max_x - 1) / 2.0, (min_y + max_y - 1) / 2.0}; }

  bool contains_pixel(int x, int y) const { return x >= min_x && x < max_x && y >= min_y && y < max_y; }
  bool contains(const Point2& p) const {
    return p.x >= min_x - 0.5 && p.x < max_x - 0.5 && p.y >= min_y - 0.5 && p.y < max_y - 0.5;
  }

  BBox intersect(const BBox& o) const {
    return {std::max(min_x, o.min_x), std::max(min_y, o.min_y), std::min(max_x, o.max_x),
            std::min(max_y, o.max_y)};
  }
  BBox unite(const BBox& o) const {
    return {std::min(min_x, o.min_x), std::min(min_y, o.min_y), std::max(max_x, o.max_x),
            std::max(max_y, o.max_y)};
  }
  double iou(const BBox& o) const {
    const long long inter = intersect(o).area();
    const long long uni = area() + o.area() - inter;
    return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
  }

  /// Box of size (w, h) centered on a continuous point, rounded to pixels.
  static BBox centered(const Point2& c, int w, int h) {
    const int x0 = static_cast<int>(std::lround(c.x - (w - 1) / 2.0));
    const int y0 = static_cast<int>(std::lround(c.y - (h - 1) / 2.0));
    return {x0, y0, x0 + w, y0 + h};
  }
};

class SemanticMap {
 public:
  SemanticMap() = default;
  SemanticMap(int width, int height, Label fill = 0)
      : width_(width), height_(height), labels_(checked_size(width, height), fill) {}
  SemanticMap(int width, int height, std::vector<Label> labels)
      : width_(width), height_(height), labels_(std::move(labels)) {
    if (labels_.size() != checked_size(width, height)) {
      throw Error(ErrorCode::kInvalidArgument, "label buffer size does not match dimensions");
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }
  BBox bounds() const { return {0, 0, width_, height_}; }
  long long pixel_count() const { return static_cast<long long>(width_) * height_; }

  Label at(int x, int y) const { return labels_[static_cast<std::size_t>(y) * width_ + x]; }
  Label& at(int x, int y) { return labels_[static_cast<std::size_t>(y) * width_ + x]; }
  std::span<const Label> labels() const { return labels_; }

  void fill(const BBox& box, Label l) {
    const BBox b = box.intersect(bounds());
    for (int y = b.min_y; y < b.max_y; ++y)
      for (int x = b.min_x; x < b.max_x; ++x) at(x, y) = l;
  }

  /// Distinct nonzero labels, ascending.
  std::vector<Label> distinct_labels() const {
    std::vector<bool> seen(65536, false);
    for (Label l : labels_) seen[l] = true;
    std::vector<Label> out;
    for (std::size_t l = 1; l < seen.size(); ++l)
      if (seen[l]) out.push_back(static_cast<Label>(l));
    return out;
  }

  friend bool operator==(const SemanticMap&, const SemanticMap&) = default;

 private:
  static std::size_t checked_size(int w, int h) {
    if (w <= 0 || h <= 0) throw Error(ErrorCode::kInvalidArgument, "map dimensions must be positive");
    return static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<Label> labels_;
};

struct LabelRegion {
  Label label = 0;
  BBox bbox;
  std::size_t pixel_count = 0;
  Point2 centroid;
};

/// 4-connected components of every nonzero label, ordered by
/// (label, min_y, min_x).
inline std::vector<LabelRegion> connected_components(const SemanticMap& map) {
  const int w = map.width(), h = map.height();
  std::vector<char> visited(static_cast<std::size_t>(w) * h, 0);
  std::vector<LabelRegion> out;
  std::queue<std::pair<int, int>> frontier;
  for (int y0 = 0; y0 < h; ++y0) {
    for (int x0 = 0; x0 < w; ++x0) {
      const Label l = map.at(x0, y0);
      if (l == 0 || visited[static_cast<std::size_t>(y0) * w + x0]) continue;
      LabelRegion r;
      r.label = l;
      r.bbox = {x0, y0, x0 + 1, y0 + 1};
      double sx = 0.0, sy = 0.0;
      visited[static_cast<std::size_t>(y0) * w + x0] = 1;
      frontier.push({x0, y0});
      while (!frontier.empty()) {
        const auto [x, y] = frontier.front();
        frontier.pop();
        ++r.pixel_count;
        sx += x;
        sy += y;
        r.bbox = r.bbox.unite({x, y, x + 1, y + 1});
        constexpr int dx[4] = {1, -1, 0, 0};
        constexpr int dy[4] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          const int nx = x + dx[k], ny = y + dy[k];
          if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          const std::size_t idx = static_cast<std::size_t>(ny) * w + nx;
          if (visited[idx] || map.at(nx, ny) != l) continue;
          visited[idx] = 1;
          frontier.push({nx, ny});
        }
      }
      r.centroid = {sx / r.pixel_count, sy / r.pixel_count};
      out.push_back(r);
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const LabelRegion& a, const LabelRegion& b) {
    return std::tie(a.label, a.bbox.min_y, a.bbox.min_x) < std::tie(b.label, b.bbox.min_y, b.bbox.min_x);
  });
  return out;
}

using Histogram = std::map<Label, double>;

/// Turns raw per-label pixel counts inside a window of `window_area` pixels
/// into proportions. Labels covering less than 1/64 of the window are dropped
/// (exactly 1/64 is kept) before renormalizing.
inline Histogram proportions_from_counts(const std::map<Label, long long>& counts, long long window_area) {
  Histogram h;
  long long kept = 0;
  for (const auto& [label, n] : counts) {
    if (label == 0 || n <= 0) continue;
    if (n * 64 < window_area) continue;
    kept += n;
  }
  if (kept == 0) return h;
  for (const auto& [label, n] : counts) {
    if (label == 0 || n <= 0 || n * 64 < window_area) continue;
    h[label] = static_cast<double>(n) / static_cast<double>(kept);
  }
  return h;
}

/// Semantic proportions inside `window` (clipped to the map), noise filtered.
inline Histogram semantic_histogram(const SemanticMap& map, const BBox& window) {
  const BBox b = window.intersect(map.bounds());
  if (window.empty() || b.empty()) {
    throw Error(ErrorCode::kOutOfBounds, "histogram window does not intersect the map");
  }
  std::map<Label, long long> counts;
  for (int y = b.min_y; y < b.max_y; ++y)
    for (int x = b.min_x; x < b.max_x; ++x) ++counts[map.at(x, y)];
  return proportions_from_counts(counts, b.area());
}

/// Per-label summed-area tables for O(labels) window histograms.
class LabelIntegral {
 public:
  explicit LabelIntegral(const SemanticMap& map)
      : w_(map.width()), h_(map.height()), labels_(map.distinct_labels()) {
    std::vector<int> index(65536, -1);
    for (std::size_t i = 0; i < labels_.size(); ++i) index[labels_[i]] = static_cast<int>(i);
    const std::size_t stride = static_cast<std::size_t>(w_ + 1) * (h_ + 1);
    tables_.assign(labels_.size() * stride, 0);
    for (std::size_t k = 0; k < labels_.size(); ++k) {
      int* t = tables_.data() + k * stride;
      for (int y = 0; y < h_; ++y) {
        int row = 0;
        for (int x = 0; x < w_; ++x) {
          row += index[map.at(x, y)] == static_cast<int>(k);
          t[(y + 1) * (w_ + 1) + x + 1] = t[y * (w_ + 1) + x + 1] + row;
        }
      }
    }
  }

  const std::vector<Label>& labels() const { return labels_; }

  /// Pixel count of labels()[k] inside `b` (clipped).
  long long count(std::size_t k, const BBox& box) const {
    const BBox b = box.intersect({0, 0, w_, h_});
    if (b.empty()) return 0;
    const int* t = tables_.data() + k * static_cast<std::size_t>(w_ + 1) * (h_ + 1);
    auto at = [&](int x, int y) { return static_cast<long long>(t[y * (w_ + 1) + x]); };
    return at(b.max_x, b.max_y) - at(b.min_x, b.max_y) - at(b.max_x, b.min_y) + at(b.min_x, b.min_y);
  }

  Histogram histogram(const BBox& window) const {
    const BBox b = window.intersect({0, 0, w_, h_});
    if (window.empty() || b.empty()) {
      throw Error(ErrorCode::kOutOfBounds, "histogram window does not intersect the map");
    }
    std::map<Label, long long> counts;
    for (std::size_t k = 0; k < labels_.size(); ++k) {
      const long long n = count(k, b);
      if (n > 0) counts[labels_[k]] = n;
    }
    return proportions_from_counts(counts, b.area());
  }

 private:
  int w_;
  int h_;
  std::vector<Label> labels_;
  std::vector<int> tables_;
};

/// Keeps the top-left pixel of every ratio x ratio block.
inline SemanticMap downsample(const SemanticMap& map, int ratio) {
  if (ratio < 1) throw Error(ErrorCode::kInvalidArgument, "downsample ratio must be >= 1");
  if (ratio == 1) return map;
  const int w = (map.width() + ratio - 1) / ratio;
  const int h = (map.height() + ratio - 1) / ratio;
  SemanticMap out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at(x, y) = map.at(x * ratio, y * ratio);
  return out;
}

}  // namespace a2pm
