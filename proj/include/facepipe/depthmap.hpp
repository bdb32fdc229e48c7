#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "facepipe/pointcloud.hpp"

namespace facepipe {

// Row-major W x H depth grid with a validity mask. Invalid pixels hold 0.
class DepthMap {
 public:
  DepthMap() = default;
  DepthMap(int width, int height);
  DepthMap(int width, int height, std::vector<double> depth, std::vector<std::uint8_t> valid);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t pixel_count() const noexcept { return depth_.size(); }

  double depth(int x, int y) const { return depth_[index(x, y)]; }
  bool valid(int x, int y) const { return valid_[index(x, y)] != 0; }
  void set(int x, int y, double depth);
  void invalidate(int x, int y);

  const std::vector<double>& depth_values() const noexcept { return depth_; }
  const std::vector<std::uint8_t>& valid_mask() const noexcept { return valid_; }
  std::size_t valid_count() const;

  bool operator==(const DepthMap&) const = default;

 private:
  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width_ + x; }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> depth_;
  std::vector<std::uint8_t> valid_;
};

struct RenderParams {
  double crop_radius = 100.0;  // r, mm; pixels per mm = output_size / r
  int output_size = 200;

  void validate() const;
};

inline constexpr int kEmbeddingInputSize = 224;

struct PixelWeight {
  int x, y;
  double weight;
};

// Bilinear weights of continuous pixel position (u, v) on its four
// surrounding integer pixels: (u0,v0), (u0+1,v0), (u0,v0+1), (u0+1,v0+1).
std::array<PixelWeight, 4> bilinear_weights(double u, double v);

// Orthographic projection: (x, y, z) -> (s*x + W/2, -s*y + H/2) with
// s = output_size / crop_radius. Each point's z is splatted with bilinear
// weights; a pixel's value is the weighted mean of what it received.
// Points outside [0, W-1] x [0, H-1] are dropped. Throws EmptyRenderError
// when no pixel receives weight.
DepthMap render_depth(const PointCloud& cloud, const RenderParams& params);

// Median of the valid pixels in each kernel x kernel window, applied to
// valid pixels only. Even-sized samples (at borders and holes) take the
// mean of the two middle values.
DepthMap median_filter(const DepthMap& map, int kernel = 3);

// Per-image min/max stretch of valid pixels to [0, 255]; constant maps go to 128.
DepthMap normalize(const DepthMap& map);
// Fixed window [near, far] -> [0, 255], clamped. For cross-image comparability.
DepthMap normalize_window(const DepthMap& map, double lo, double hi);

// Align-corners bilinear resampling. Invalid source pixels are excluded
// from the blend; an output pixel is valid if any contributing source
// pixel with non-zero weight is valid.
DepthMap resize(const DepthMap& map, int target_width, int target_height);
inline DepthMap resize(const DepthMap& map, int target) { return resize(map, target, target); }

// 16-bit big-endian binary PGM (P5), sample = round(depth * 257).
// Requires depth values in [0, 255].
std::string encode_pgm(const DepthMap& map);
void export_pgm(const DepthMap& map, const std::filesystem::path& path);
// Inverse of encode_pgm; every pixel comes back valid.
DepthMap decode_pgm(const std::string& bytes);
DepthMap import_pgm(const std::filesystem::path& path);

}  // namespace facepipe
