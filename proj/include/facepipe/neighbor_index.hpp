#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "facepipe/pointcloud.hpp"

namespace facepipe {

// Static 3-d tree over a point list. Queries return the index of the point
// minimizing squared Euclidean distance, with ties going to the lowest index.
// Read-only after construction, so one index can serve many threads.
class NeighborIndex {
 public:
  explicit NeighborIndex(std::span<const Vec3> points);
  explicit NeighborIndex(const PointCloud& cloud) : NeighborIndex(std::span(cloud.points())) {}

  struct Hit {
    std::size_t index;
    double squared_distance;
  };

  Hit nearest(const Vec3& query) const;
  std::size_t size() const noexcept { return points_.size(); }

 private:
  struct Node {
    std::uint32_t begin, end;     // range in order_
    std::int32_t left = -1, right = -1;
    int axis = -1;                // -1 for leaf
    double split = 0.0;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end);
  void search(std::int32_t node, const Vec3& q, Hit& best) const;

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

inline std::size_t nearest(const NeighborIndex& index, const Vec3& p) {
  return index.nearest(p).index;
}

}  // namespace facepipe
