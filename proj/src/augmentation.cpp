#include "facepipe/augmentation.hpp"

#include <numbers>

#include "facepipe/error.hpp"

namespace facepipe {

void AugmentPlan::validate() const {
  if (expressions_per_subject < 0 || poses_per_scan < 0 || patch_variants_per_scan < 0 || patch_count < 0)
    throw ContractViolation("AugmentPlan: counts must be >= 0");
  if (!(angle_bound >= 0.0) || !(translation_bound >= 0.0)) throw ContractViolation("AugmentPlan: bounds must be >= 0");
  if (patch_size <= 0) throw ContractViolation("AugmentPlan: patch_size must be > 0");
}

RigidTransform random_rigid(Rng& rng, double angle_bound_deg, double translation_bound) {
  if (!(angle_bound_deg >= 0.0) || !(translation_bound >= 0.0))
    throw ContractViolation("random_rigid: bounds must be >= 0");
  // A zero bound still consumes its draw so the stream layout is fixed.
  auto draw = [&rng](double bound) {
    if (bound > 0.0) return rng.uniform(-bound, bound);
    rng.next();
    return 0.0;
  };
  constexpr double kDeg = std::numbers::pi / 180.0;
  const double ax = draw(angle_bound_deg) * kDeg;
  const double ay = draw(angle_bound_deg) * kDeg;
  const double az = draw(angle_bound_deg) * kDeg;
  Vec3 t;
  for (int i = 0; i < 3; ++i) t[i] = draw(translation_bound);
  return RigidTransform::from_euler_zyx(ax, ay, az, t);
}

DepthMap apply_patches(const DepthMap& map, Rng& rng, int count, int size) {
  if (count < 0) throw ContractViolation("apply_patches: count must be >= 0");
  if (size <= 0 || size > map.width() || size > map.height())
    throw ContractViolation("apply_patches: patch size must fit inside the map");
  DepthMap out = map;
  for (int k = 0; k < count; ++k) {
    const auto x0 = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(map.width() - size + 1)));
    const auto y0 = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(map.height() - size + 1)));
    for (int y = y0; y < y0 + size; ++y)
      for (int x = x0; x < x0 + size; ++x) out.invalidate(x, y);
  }
  return out;
}

std::string to_string(AugmentedCloud::Kind kind) {
  return kind == AugmentedCloud::Kind::Expression ? "expression" : "pose";
}

std::vector<AugmentedCloud> augment_subject(const PointCloud& scan, const MorphableModel& model,
                                            const AugmentPlan& plan, const FitSettings& fit_settings) {
  plan.validate();
  Rng rng(plan.seed);
  std::vector<AugmentedCloud> out;
  out.reserve(static_cast<std::size_t>(plan.expressions_per_subject + plan.poses_per_scan));

  if (plan.expressions_per_subject > 0) {
    const FitResult fitted = fit(model, scan, fit_settings);
    for (int e = 0; e < plan.expressions_per_subject; ++e) {
      Eigen::VectorXd beta = random_expression(rng, model.expr_dim());
      const DisplacementField field = displacement_field(fitted, beta, model);
      out.push_back({AugmentedCloud::Kind::Expression, transfer_expression(scan, fitted, field), std::move(beta),
                     RigidTransform::identity()});
    }
  }
  for (int p = 0; p < plan.poses_per_scan; ++p) {
    const RigidTransform t = random_rigid(rng, plan.angle_bound, plan.translation_bound);
    out.push_back({AugmentedCloud::Kind::Pose, apply_transform(scan, t), Eigen::VectorXd(), t});
  }
  return out;
}

}  // namespace facepipe
