#include "facepipe/pointcloud.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>

#include "facepipe/error.hpp"

namespace facepipe {

namespace {

bool finite(const Vec3& p) { return std::isfinite(p.x()) && std::isfinite(p.y()) && std::isfinite(p.z()); }

}  // namespace

PointCloud::PointCloud(std::vector<Vec3> points, Landmarks landmarks)
    : points_(std::move(points)), landmarks_(std::move(landmarks)) {
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (!finite(points_[i]))
      throw ContractViolation("PointCloud: non-finite coordinate at point " + std::to_string(i));
  }
  for (const auto& [name, p] : landmarks_) {
    if (!finite(p)) throw ContractViolation("PointCloud: non-finite landmark '" + name + "'");
  }
}

const Vec3* PointCloud::landmark(const std::string& name) const {
  auto it = landmarks_.find(name);
  return it == landmarks_.end() ? nullptr : &it->second;
}

bool is_valid_rotation(const Mat3& r, double tol) {
  if (!r.allFinite()) return false;
  const Mat3 gram = r.transpose() * r;
  if (((gram - Mat3::Identity()).array().abs() > tol).any()) return false;
  return std::abs(r.determinant() - 1.0) <= tol;
}

RigidTransform::RigidTransform(const Mat3& rotation, const Vec3& translation)
    : rotation_(rotation), translation_(translation) {
  if (!is_valid_rotation(rotation_))
    throw ContractViolation("RigidTransform: rotation is not orthonormal with det +1");
  if (!translation_.allFinite()) throw ContractViolation("RigidTransform: non-finite translation");
}

RigidTransform RigidTransform::from_euler_zyx(double ax, double ay, double az, const Vec3& t) {
  const Mat3 r = (Eigen::AngleAxisd(az, Vec3::UnitZ()) * Eigen::AngleAxisd(ay, Vec3::UnitY()) *
                  Eigen::AngleAxisd(ax, Vec3::UnitX()))
                     .toRotationMatrix();
  return {r, t};
}

RigidTransform RigidTransform::inverse() const {
  const Mat3 rt = rotation_.transpose();
  return {rt, -(rt * translation_)};
}

RigidTransform RigidTransform::compose(const RigidTransform& first) const {
  return {rotation_ * first.rotation_, rotation_ * first.translation_ + translation_};
}

Vec3 RigidTransform::euler_zyx() const {
  const Mat3& r = rotation_;
  const double ay = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
  const double ax = std::atan2(r(2, 1), r(2, 2));
  const double az = std::atan2(r(1, 0), r(0, 0));
  return {ax, ay, az};
}

double RigidTransform::angle() const { return Eigen::AngleAxisd(rotation_).angle(); }

PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& transform) {
  std::vector<Vec3> out;
  out.reserve(cloud.size());
  for (const Vec3& p : cloud.points()) out.push_back(transform.apply(p));
  PointCloud::Landmarks marks;
  for (const auto& [name, p] : cloud.landmarks()) marks.emplace(name, transform.apply(p));
  return PointCloud(std::move(out), std::move(marks));
}

PointCloud crop_sphere(const PointCloud& cloud, const Vec3& center, double radius) {
  if (!(radius > 0.0)) throw ContractViolation("crop_sphere: radius must be positive");
  const double r2 = radius * radius;
  std::vector<Vec3> kept;
  kept.reserve(cloud.size());
  for (const Vec3& p : cloud.points()) {
    if ((p - center).squaredNorm() <= r2) kept.push_back(p);
  }
  if (kept.empty()) throw EmptyCropError("crop_sphere: no points within radius of the crop center");
  return PointCloud(std::move(kept), cloud.landmarks());
}

PointCloud with_points(const PointCloud& like, std::vector<Vec3> points) {
  return PointCloud(std::move(points), like.landmarks());
}

}  // namespace facepipe
