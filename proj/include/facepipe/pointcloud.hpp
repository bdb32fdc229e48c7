#pragma once

#include <Eigen/Core>
#include <map>
#include <string>
#include <vector>

namespace facepipe {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Unordered facial scan in millimeters, plus optional named landmarks.
// Coordinates are validated finite on construction.
class PointCloud {
 public:
  using Landmarks = std::map<std::string, Vec3>;

  PointCloud() = default;
  explicit PointCloud(std::vector<Vec3> points, Landmarks landmarks = {});

  const std::vector<Vec3>& points() const noexcept { return points_; }
  const Landmarks& landmarks() const noexcept { return landmarks_; }
  std::size_t size() const noexcept { return points_.size(); }
  bool empty() const noexcept { return points_.empty(); }
  const Vec3& operator[](std::size_t i) const { return points_[i]; }

  const Vec3* landmark(const std::string& name) const;

 private:
  std::vector<Vec3> points_;
  Landmarks landmarks_;
};

// p -> rotation * p + translation. Rotation is checked orthonormal with
// determinant +1 (1e-6 per entry) on construction.
class RigidTransform {
 public:
  RigidTransform() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}
  RigidTransform(const Mat3& rotation, const Vec3& translation);

  static RigidTransform identity() { return {}; }
  static RigidTransform translation(const Vec3& t) { return {Mat3::Identity(), t}; }

  // R = Rz(az) * Ry(ay) * Rx(ax), angles in radians, right-handed. With y up
  // and the face looking along +z, ax is pitch, ay is yaw and az is roll.
  static RigidTransform from_euler_zyx(double ax, double ay, double az, const Vec3& t = Vec3::Zero());

  const Mat3& rotation() const noexcept { return rotation_; }
  const Vec3& translation() const noexcept { return translation_; }

  Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }
  RigidTransform inverse() const;
  // (*this) after `first`: x -> this(first(x)).
  RigidTransform compose(const RigidTransform& first) const;

  // (ax, ay, az) in radians such that from_euler_zyx reproduces the
  // rotation; ay is restricted to [-pi/2, pi/2].
  Vec3 euler_zyx() const;
  // Rotation angle in radians of the axis-angle form.
  double angle() const;

 private:
  Mat3 rotation_;
  Vec3 translation_;
};

bool is_valid_rotation(const Mat3& r, double tol = 1e-6);

PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& transform);

// Keeps points with |p - center| <= radius in their original order.
// Throws EmptyCropError when nothing survives.
PointCloud crop_sphere(const PointCloud& cloud, const Vec3& center, double radius);

// Rebuild with the same landmarks but different points.
PointCloud with_points(const PointCloud& like, std::vector<Vec3> points);

}  // namespace facepipe
