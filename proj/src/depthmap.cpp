#include "facepipe/depthmap.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <fstream>
#include <iterator>
#include <sstream>

#include "facepipe/error.hpp"

namespace facepipe {

DepthMap::DepthMap(int width, int height) : width_(width), height_(height) {
  if (width <= 0 || height <= 0) throw ContractViolation("DepthMap: dimensions must be positive");
  depth_.assign(static_cast<std::size_t>(width) * height, 0.0);
  valid_.assign(depth_.size(), 0);
}

DepthMap::DepthMap(int width, int height, std::vector<double> depth, std::vector<std::uint8_t> valid)
    : width_(width), height_(height), depth_(std::move(depth)), valid_(std::move(valid)) {
  if (width <= 0 || height <= 0) throw ContractViolation("DepthMap: dimensions must be positive");
  const std::size_t n = static_cast<std::size_t>(width) * height;
  if (depth_.size() != n || valid_.size() != n) throw DimensionMismatch("DepthMap: buffer size mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    if (valid_[i]) {
      valid_[i] = 1;
      if (!std::isfinite(depth_[i])) throw ContractViolation("DepthMap: non-finite depth on a valid pixel");
    } else {
      depth_[i] = 0.0;
    }
  }
}

void DepthMap::set(int x, int y, double depth) {
  if (!std::isfinite(depth)) throw ContractViolation("DepthMap::set: non-finite depth");
  depth_[index(x, y)] = depth;
  valid_[index(x, y)] = 1;
}

void DepthMap::invalidate(int x, int y) {
  depth_[index(x, y)] = 0.0;
  valid_[index(x, y)] = 0;
}

std::size_t DepthMap::valid_count() const {
  return static_cast<std::size_t>(std::count(valid_.begin(), valid_.end(), std::uint8_t{1}));
}

void RenderParams::validate() const {
  if (!(crop_radius > 0.0)) throw ContractViolation("RenderParams: crop_radius must be > 0");
  if (output_size < 2) throw ContractViolation("RenderParams: output_size must be >= 2");
}

std::array<PixelWeight, 4> bilinear_weights(double u, double v) {
  const double u0 = std::floor(u), v0 = std::floor(v);
  const double fu = u - u0, fv = v - v0;
  const int x = static_cast<int>(u0), y = static_cast<int>(v0);
  return {{{x, y, (1.0 - fu) * (1.0 - fv)},
           {x + 1, y, fu * (1.0 - fv)},
           {x, y + 1, (1.0 - fu) * fv},
           {x + 1, y + 1, fu * fv}}};
}

DepthMap render_depth(const PointCloud& cloud, const RenderParams& params) {
  params.validate();
  const int w = params.output_size, h = params.output_size;
  const double s = params.output_size / params.crop_radius;
  const double cx = w / 2.0, cy = h / 2.0;

  std::vector<double> sum_w(static_cast<std::size_t>(w) * h, 0.0);
  std::vector<double> sum_wz(sum_w.size(), 0.0);
  for (const Vec3& p : cloud.points()) {
    const double u = s * p.x() + cx;
    const double v = -s * p.y() + cy;
    if (!(u >= 0.0 && v >= 0.0 && u <= w - 1 && v <= h - 1)) continue;
    for (const PixelWeight& pw : bilinear_weights(u, v)) {
      if (pw.weight == 0.0 || pw.x >= w || pw.y >= h) continue;
      const std::size_t i = static_cast<std::size_t>(pw.y) * w + pw.x;
      sum_w[i] += pw.weight;
      sum_wz[i] += pw.weight * p.z();
    }
  }

  std::vector<double> depth(sum_w.size(), 0.0);
  std::vector<std::uint8_t> valid(sum_w.size(), 0);
  bool any = false;
  for (std::size_t i = 0; i < sum_w.size(); ++i) {
    if (sum_w[i] > 0.0) {
      depth[i] = sum_wz[i] / sum_w[i];
      valid[i] = 1;
      any = true;
    }
  }
  if (!any) throw EmptyRenderError("render_depth: no point landed on the canvas");
  return DepthMap(w, h, std::move(depth), std::move(valid));
}

DepthMap median_filter(const DepthMap& map, int kernel) {
  if (kernel < 3 || kernel % 2 == 0) throw ContractViolation("median_filter: kernel must be odd and >= 3");
  const int half = kernel / 2;
  DepthMap out = map;
  std::vector<double> window;
  window.reserve(static_cast<std::size_t>(kernel) * kernel);
  for (int y = 0; y < map.height(); ++y) {
    for (int x = 0; x < map.width(); ++x) {
      if (!map.valid(x, y)) continue;
      window.clear();
      for (int dy = -half; dy <= half; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= map.height()) continue;
        for (int dx = -half; dx <= half; ++dx) {
          const int xx = x + dx;
          if (xx < 0 || xx >= map.width() || !map.valid(xx, yy)) continue;
          window.push_back(map.depth(xx, yy));
        }
      }
      const std::size_t n = window.size();
      auto mid = window.begin() + static_cast<std::ptrdiff_t>(n / 2);
      std::nth_element(window.begin(), mid, window.end());
      double median = *mid;
      if (n % 2 == 0) {
        const double lower = *std::max_element(window.begin(), mid);
        median = 0.5 * (lower + median);
      }
      out.set(x, y, median);
    }
  }
  return out;
}

DepthMap normalize(const DepthMap& map) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (int y = 0; y < map.height(); ++y)
    for (int x = 0; x < map.width(); ++x)
      if (map.valid(x, y)) {
        lo = std::min(lo, map.depth(x, y));
        hi = std::max(hi, map.depth(x, y));
      }
  if (lo > hi) throw ContractViolation("normalize: map has no valid pixels");

  DepthMap out = map;
  const double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;
  for (int y = 0; y < map.height(); ++y)
    for (int x = 0; x < map.width(); ++x)
      if (map.valid(x, y)) out.set(x, y, hi > lo ? std::min(255.0, (map.depth(x, y) - lo) * scale) : 128.0);
  return out;
}

DepthMap normalize_window(const DepthMap& map, double lo, double hi) {
  if (!(hi > lo)) throw ContractViolation("normalize_window: window must satisfy lo < hi");
  DepthMap out = map;
  const double scale = 255.0 / (hi - lo);
  for (int y = 0; y < map.height(); ++y)
    for (int x = 0; x < map.width(); ++x)
      if (map.valid(x, y)) out.set(x, y, std::clamp((map.depth(x, y) - lo) * scale, 0.0, 255.0));
  return out;
}

DepthMap resize(const DepthMap& map, int target_width, int target_height) {
  if (target_width < 2 || target_height < 2) throw ContractViolation("resize: target must be >= 2");
  const double sx = map.width() > 1 ? static_cast<double>(map.width() - 1) / (target_width - 1) : 0.0;
  const double sy = map.height() > 1 ? static_cast<double>(map.height() - 1) / (target_height - 1) : 0.0;
  DepthMap out(target_width, target_height);
  for (int y = 0; y < target_height; ++y) {
    for (int x = 0; x < target_width; ++x) {
      double sum_w = 0.0, sum_wd = 0.0;
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (const PixelWeight& pw : bilinear_weights(x * sx, y * sy)) {
        if (pw.weight == 0.0 || pw.x >= map.width() || pw.y >= map.height()) continue;
        if (!map.valid(pw.x, pw.y)) continue;
        const double d = map.depth(pw.x, pw.y);
        sum_w += pw.weight;
        sum_wd += pw.weight * d;
        lo = std::min(lo, d);
        hi = std::max(hi, d);
      }
      // Clamped so rounding cannot push a blend outside its inputs.
      if (sum_w > 0.0) out.set(x, y, std::clamp(sum_wd / sum_w, lo, hi));
    }
  }
  return out;
}

std::string encode_pgm(const DepthMap& map) {
  for (double d : map.depth_values()) {
    if (!(d >= 0.0 && d <= 255.0))
      throw ContractViolation("export_pgm: depth values must be normalized to [0, 255]");
  }
  std::string out = "P5\n" + std::to_string(map.width()) + " " + std::to_string(map.height()) + "\n65535\n";
  out.reserve(out.size() + 2 * map.pixel_count());
  for (double d : map.depth_values()) {
    const auto v = static_cast<std::uint16_t>(std::lround(d * 257.0));
    out.push_back(static_cast<char>(v >> 8));
    out.push_back(static_cast<char>(v & 0xff));
  }
  return out;
}

void export_pgm(const DepthMap& map, const std::filesystem::path& path) {
  const std::string bytes = encode_pgm(map);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

DepthMap decode_pgm(const std::string& bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    for (;;) {
      while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  if (token() != "P5") throw FormatError("PGM: expected P5 magic");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw FormatError("PGM: malformed header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw FormatError("PGM: bad header values");
  ++pos;  // single whitespace before raster
  const std::size_t bpp = maxval > 255 ? 2 : 1;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (bytes.size() < pos + n * bpp) throw FormatError("PGM: raster truncated");
  std::vector<double> depth(n);
  const double unit = maxval > 255 ? 257.0 : 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos + i * bpp);
    const unsigned v = bpp == 2 ? (unsigned{p[0]} << 8) | p[1] : p[0];
    depth[i] = v / unit;
  }
  return DepthMap(w, h, std::move(depth), std::vector<std::uint8_t>(n, 1));
}

DepthMap import_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_pgm(bytes);
}

}  // namespace facepipe
