#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "facepipe/depthmap.hpp"
#include "facepipe/morphable.hpp"
#include "facepipe/pointcloud.hpp"
#include "facepipe/rng.hpp"

namespace facepipe {

struct AugmentPlan {
  int expressions_per_subject = 25;
  int poses_per_scan = 10;
  int patch_variants_per_scan = 10;
  double angle_bound = 10.0;        // degrees
  double translation_bound = 10.0;  // mm
  int patch_count = 8;
  int patch_size = 18;              // pixels
  std::uint64_t seed = 0;

  void validate() const;
};

// R = Rz(t3) Ry(t2) Rx(t1), each angle Uniform(-bound, bound) degrees,
// then t = (x, y, z) each Uniform(-translation_bound, translation_bound).
// Draw order: t1, t2, t3, x, y, z. A zero bound pins its values to 0.
RigidTransform random_rigid(Rng& rng, double angle_bound_deg, double translation_bound);

// `count` size x size squares at uniform top-left positions fully inside
// the canvas are zeroed and invalidated. Overlaps are allowed.
DepthMap apply_patches(const DepthMap& map, Rng& rng, int count, int size);

struct AugmentedCloud {
  enum class Kind { Expression, Pose };

  Kind kind;
  PointCloud cloud;
  Eigen::VectorXd beta;       // Expression only
  RigidTransform transform;   // Pose only
};

std::string to_string(AugmentedCloud::Kind kind);

// Fits the model once, then emits plan.expressions_per_subject
// expression-transferred clouds followed by plan.poses_per_scan rigidly
// perturbed copies of the input. All randomness comes from plan.seed.
std::vector<AugmentedCloud> augment_subject(const PointCloud& scan, const MorphableModel& model,
                                            const AugmentPlan& plan, const FitSettings& fit_settings = {});

}  // namespace facepipe
