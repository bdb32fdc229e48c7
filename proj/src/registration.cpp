#include "facepipe/registration.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>

#include "facepipe/error.hpp"

namespace facepipe {

void IcpParams::validate() const {
  if (max_iterations < 1) throw ContractViolation("IcpParams: max_iterations must be >= 1");
  if (!(convergence_eps > 0.0)) throw ContractViolation("IcpParams: convergence_eps must be > 0");
  if (!(rejection_multiplier > 1.0)) throw ContractViolation("IcpParams: rejection_multiplier must be > 1");
}

RigidTransform fit_rigid(std::span<const Vec3> from, std::span<const Vec3> to) {
  if (from.size() != to.size() || from.empty())
    throw DimensionMismatch("fit_rigid: point lists must be non-empty and of equal length");
  const double n = static_cast<double>(from.size());
  Vec3 cf = Vec3::Zero(), ct = Vec3::Zero();
  for (std::size_t i = 0; i < from.size(); ++i) {
    cf += from[i];
    ct += to[i];
  }
  cf /= n;
  ct /= n;
  Mat3 cov = Mat3::Zero();
  for (std::size_t i = 0; i < from.size(); ++i) cov += (from[i] - cf) * (to[i] - ct).transpose();

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  if ((v * u.transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  const Mat3 r = v * d * u.transpose();
  return {r, ct - r * cf};
}

Vec3 detect_nose_tip(const PointCloud& cloud) {
  if (const Vec3* nose = cloud.landmark("nose_tip")) return *nose;
  if (cloud.size() < 100)
    throw NoseDetectionError("nose tip heuristic needs at least 100 points; supply a 'nose_tip' landmark");

  const auto& pts = cloud.points();
  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : pts) centroid += p;
  centroid /= static_cast<double>(pts.size());
  Mat3 cov = Mat3::Zero();
  for (const Vec3& p : pts) cov += (p - centroid) * (p - centroid).transpose();
  cov /= static_cast<double>(pts.size());

  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  const Vec3 lambda = eig.eigenvalues();  // ascending
  if (!(lambda(2) > 0.0) || lambda(0) <= 1e-9 * lambda(2))
    throw NoseDetectionError("cloud is flat or degenerate; supply a 'nose_tip' landmark");
  Vec3 depth_axis = eig.eigenvectors().col(0);
  if (depth_axis.z() < 0.0) depth_axis = -depth_axis;
  const Vec3 horizontal_axis = eig.eigenvectors().col(1);

  double hmin = std::numeric_limits<double>::infinity(), hmax = -hmin;
  for (const Vec3& p : pts) {
    const double h = (p - centroid).dot(horizontal_axis);
    hmin = std::min(hmin, h);
    hmax = std::max(hmax, h);
  }
  const double mid = 0.5 * (hmin + hmax);
  const double half_band = 0.2 * (hmax - hmin);

  std::size_t best = pts.size();
  double best_depth = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Vec3 q = pts[i] - centroid;
    if (std::abs(q.dot(horizontal_axis) - mid) > half_band) continue;
    const double d = q.dot(depth_axis);
    if (d > best_depth) {
      best_depth = d;
      best = i;
    }
  }
  if (best == pts.size()) throw NoseDetectionError("no points in the central band; supply a 'nose_tip' landmark");
  return pts[best];
}

ReferenceFace::ReferenceFace(PointCloud cloud)
    : cloud_(std::move(cloud)),
      index_(std::make_shared<NeighborIndex>(cloud_)),
      nose_(detect_nose_tip(cloud_)) {}

namespace {

struct Correspondences {
  std::vector<Vec3> source;     // transformed source points
  std::vector<Vec3> reference;  // matched reference points
  double mean_distance = 0.0;
  double rmse = 0.0;
};

Correspondences correspond(const std::vector<Vec3>& samples, const ReferenceFace& reference,
                           const RigidTransform& transform, double rejection_multiplier) {
  const std::size_t n = samples.size();
  std::vector<Vec3> moved(n), target(n);
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    moved[i] = transform.apply(samples[i]);
    const auto hit = reference.index().nearest(moved[i]);
    target[i] = reference.cloud()[hit.index];
    dist[i] = std::sqrt(hit.squared_distance);
  }
  std::vector<double> sorted = dist;
  auto mid = sorted.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(sorted.begin(), mid, sorted.end());
  const double threshold = rejection_multiplier * *mid;

  Correspondences c;
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(dist[i] <= threshold)) continue;
    c.source.push_back(moved[i]);
    c.reference.push_back(target[i]);
    sum += dist[i];
    sum_sq += dist[i] * dist[i];
  }
  if (c.source.empty()) throw DivergenceError("ICP: every correspondence was rejected");
  const double m = static_cast<double>(c.source.size());
  c.mean_distance = sum / m;
  c.rmse = std::sqrt(sum_sq / m);
  return c;
}

std::vector<Vec3> sample_points(const PointCloud& cloud, std::size_t max_count) {
  if (max_count == 0 || cloud.size() <= max_count) return cloud.points();
  const std::size_t stride = (cloud.size() + max_count - 1) / max_count;
  std::vector<Vec3> out;
  out.reserve(max_count);
  for (std::size_t i = 0; i < cloud.size(); i += stride) out.push_back(cloud[i]);
  return out;
}

}  // namespace

IcpResult rigid_icp(const PointCloud& source, const ReferenceFace& reference, const RigidTransform& init,
                    const IcpParams& params) {
  params.validate();
  if (source.empty() || reference.cloud().empty()) throw ContractViolation("rigid_icp: empty cloud");
  const std::vector<Vec3> samples = sample_points(source, params.max_correspondences);

  IcpResult result;
  result.transform = init;
  double previous = std::numeric_limits<double>::infinity();
  for (int it = 0; it < params.max_iterations; ++it) {
    const Correspondences c = correspond(samples, reference, result.transform, params.rejection_multiplier);
    result.mean_distance_history.push_back(c.mean_distance);
    if (std::abs(previous - c.mean_distance) < params.convergence_eps) {
      result.converged = true;
      break;
    }
    previous = c.mean_distance;
    const RigidTransform step = fit_rigid(c.source, c.reference);
    result.transform = step.compose(result.transform);
    result.iterations_used = it + 1;
  }
  result.rmse = correspond(samples, reference, result.transform, params.rejection_multiplier).rmse;
  return result;
}

IcpResult rigid_icp(const PointCloud& source, const PointCloud& reference, const RigidTransform& init,
                    const IcpParams& params) {
  return rigid_icp(source, ReferenceFace(reference), init, params);
}

PreprocessResult preprocess(const PointCloud& cloud, const ReferenceFace& reference, const IcpParams& params,
                            double crop_radius) {
  Vec3 nose;
  try {
    nose = detect_nose_tip(cloud);
  } catch (const Error& e) {
    throw StageError("nose_detection", e.what());
  }
  PointCloud cropped;
  try {
    cropped = crop_sphere(cloud, nose, crop_radius);
  } catch (const Error& e) {
    throw StageError("crop", e.what());
  }
  const RigidTransform init = RigidTransform::translation(reference.nose_tip() - nose);
  IcpResult icp;
  try {
    icp = rigid_icp(cropped, reference, init, params);
  } catch (const Error& e) {
    throw StageError("icp", e.what());
  }
  return {apply_transform(cropped, icp.transform), std::move(icp)};
}

PointCloud preprocess(const PointCloud& cloud, const PointCloud& reference, const IcpParams& params,
                      double crop_radius) {
  return preprocess(cloud, ReferenceFace(reference), params, crop_radius).aligned;
}

}  // namespace facepipe
