#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "a2pm/geometry.hpp"
#include "a2pm/image.hpp"
#include "a2pm/sam.hpp"

namespace a2pm {

inline std::array<std::uint8_t, 3> palette(std::size_t i) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 10> kColors = {{{230, 25, 75},
                                                                           {60, 180, 75},
                                                                           {255, 225, 25},
                                                                           {0, 130, 200},
                                                                           {245, 130, 48},
                                                                           {145, 30, 180},
                                                                           {70, 240, 240},
                                                                           {240, 50, 230},
                                                                           {210, 245, 60},
                                                                           {250, 190, 212}}};
  return kColors[i % kColors.size()];
}

inline void set_pixel(RgbImage& img, int x, int y, const std::array<std::uint8_t, 3>& c) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  std::copy(c.begin(), c.end(), img.px(x, y));
}

inline void draw_box(RgbImage& img, const BBox& b, const std::array<std::uint8_t, 3>& c, int dx = 0, int thick = 2) {
  for (int k = 0; k < thick; ++k) {
    for (int x = b.min_x; x < b.max_x; ++x) {
      set_pixel(img, dx + x, b.min_y + k, c);
      set_pixel(img, dx + x, b.max_y - 1 - k, c);
    }
    for (int y = b.min_y; y < b.max_y; ++y) {
      set_pixel(img, dx + b.min_x + k, y, c);
      set_pixel(img, dx + b.max_x - 1 - k, y, c);
    }
  }
}

inline void draw_dot(RgbImage& img, const Point2& p, const std::array<std::uint8_t, 3>& c, int dx = 0) {
  const int x = static_cast<int>(std::lround(p.x)) + dx, y = static_cast<int>(std::lround(p.y));
  for (int v = -1; v <= 1; ++v)
    for (int u = -1; u <= 1; ++u) set_pixel(img, x + u, y + v, c);
}

/// I0 and I1 side by side; matched areas share a color, matches are dots.
inline RgbImage render_overlay(const RgbImage& img0, const RgbImage& img1,
                               const std::vector<std::pair<Area, Area>>& areas, const MatchSet& matches) {
  RgbImage out(img0.width + img1.width, std::max(img0.height, img1.height));
  for (int y = 0; y < img0.height; ++y) std::copy_n(img0.px(0, y), img0.width * 3, out.px(0, y));
  for (int y = 0; y < img1.height; ++y) std::copy_n(img1.px(0, y), img1.width * 3, out.px(img0.width, y));
  for (const auto& c : matches.matches) {
    draw_dot(out, c.q, {255, 255, 255});
    draw_dot(out, c.p, {255, 255, 255}, img0.width);
  }
  for (std::size_t i = 0; i < areas.size(); ++i) {
    draw_box(out, areas[i].first.bbox, palette(i));
    draw_box(out, areas[i].second.bbox, palette(i), img0.width);
  }
  return out;
}

}  // namespace a2pm
