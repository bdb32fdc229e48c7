#pragma once

#include <memory>
#include <span>
#include <vector>

#include "facepipe/neighbor_index.hpp"
#include "facepipe/pointcloud.hpp"

namespace facepipe {

struct IcpParams {
  int max_iterations = 100;
  // Stop when the mean accepted correspondence distance changes by less
  // than this (mm) between iterations.
  double convergence_eps = 1e-4;
  // Correspondences farther than multiplier * median distance are dropped.
  double rejection_multiplier = 2.5;
  // 0 uses every source point; otherwise an evenly strided subset of at
  // most this many points drives the correspondence step.
  std::size_t max_correspondences = 0;

  void validate() const;
};

struct IcpResult {
  RigidTransform transform;  // source -> reference
  double rmse = 0.0;         // over accepted correspondences at exit, mm
  int iterations_used = 0;
  bool converged = false;
  // Mean accepted correspondence distance observed at each iteration.
  std::vector<double> mean_distance_history;
};

// Least-squares rigid transform mapping `from` onto `to` (Kabsch/Umeyama,
// no scale). Requires equal, non-zero lengths.
RigidTransform fit_rigid(std::span<const Vec3> from, std::span<const Vec3> to);

// Returns the "nose_tip" landmark when present. Otherwise aligns the cloud
// to its principal axes (largest = vertical, smallest = depth, oriented
// toward +z) and takes the deepest point inside the central 40% of the
// horizontal extent. Throws NoseDetectionError on flat or tiny clouds.
Vec3 detect_nose_tip(const PointCloud& cloud);

// Reference face with its neighbor index and nose tip computed once.
class ReferenceFace {
 public:
  explicit ReferenceFace(PointCloud cloud);

  const PointCloud& cloud() const noexcept { return cloud_; }
  const NeighborIndex& index() const noexcept { return *index_; }
  const Vec3& nose_tip() const noexcept { return nose_; }

 private:
  PointCloud cloud_;
  std::shared_ptr<const NeighborIndex> index_;
  Vec3 nose_;
};

// Point-to-point ICP: nearest correspondences, median-based rejection,
// SVD rigid update. Throws DivergenceError if every correspondence is
// rejected.
IcpResult rigid_icp(const PointCloud& source, const ReferenceFace& reference, const RigidTransform& init,
                    const IcpParams& params);
IcpResult rigid_icp(const PointCloud& source, const PointCloud& reference, const RigidTransform& init,
                    const IcpParams& params);

struct PreprocessResult {
  PointCloud aligned;
  IcpResult icp;
};

inline constexpr double kDefaultCropRadius = 100.0;

// nose tip -> sphere crop -> nose-to-nose translation -> ICP -> transform.
// Failures are rethrown as StageError tagged with the failing stage.
PreprocessResult preprocess(const PointCloud& cloud, const ReferenceFace& reference, const IcpParams& params,
                            double crop_radius = kDefaultCropRadius);
PointCloud preprocess(const PointCloud& cloud, const PointCloud& reference, const IcpParams& params,
                      double crop_radius = kDefaultCropRadius);

}  // namespace facepipe
