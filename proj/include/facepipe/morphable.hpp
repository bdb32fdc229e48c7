#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <optional>

#include "facepipe/pointcloud.hpp"
#include "facepipe/rng.hpp"

namespace facepipe {

inline constexpr int kDefaultExpressionDim = 29;
inline constexpr double kExpressionBound = 0.05;

// Linear face model: X = mean + shape_basis * alpha + expr_basis * beta.
// Coordinates are interleaved (x0, y0, z0, x1, ...), so the bases are 3N rows.
class MorphableModel {
 public:
  MorphableModel(Eigen::VectorXd mean, Eigen::MatrixXd shape_basis, Eigen::MatrixXd expr_basis,
                 std::optional<std::size_t> nose_index = std::nullopt);

  std::size_t vertex_count() const noexcept { return static_cast<std::size_t>(mean_.size() / 3); }
  int shape_dim() const noexcept { return static_cast<int>(shape_basis_.cols()); }
  int expr_dim() const noexcept { return static_cast<int>(expr_basis_.cols()); }

  const Eigen::VectorXd& mean() const noexcept { return mean_; }
  const Eigen::MatrixXd& shape_basis() const noexcept { return shape_basis_; }
  const Eigen::MatrixXd& expr_basis() const noexcept { return expr_basis_; }
  const std::optional<std::size_t>& nose_index() const noexcept { return nose_index_; }

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd shape_basis_;
  Eigen::MatrixXd expr_basis_;
  std::optional<std::size_t> nose_index_;
};

struct ModelParams {
  Eigen::VectorXd alpha;  // shape coefficients
  Eigen::VectorXd beta;   // expression coefficients

  static ModelParams zero(const MorphableModel& model);
};

struct FitSettings {
  int max_iterations = 20;
  double convergence_eps = 1e-4;  // mm, change in correspondence rmse
  // Ridge weight on alpha (and beta), relative to the per-correspondence
  // mean squared data term.
  double ridge = 1e-3;
  // 0 keeps every correspondence; otherwise those farther than
  // multiplier * median distance are dropped. Rejection slows convergence on
  // clean scans because the largest residuals carry the most signal.
  double rejection_multiplier = 0.0;
  RigidTransform initial_pose;
};

struct FitResult {
  ModelParams params;
  RigidTransform pose;       // model -> scan
  PointCloud fitted_points;  // pose applied to the synthesized model
  double residual_rmse = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Per-vertex offsets from the fitted model to an expression-deformed copy.
struct DisplacementField {
  std::vector<Vec3> vectors;
};

// Model vertices for the given coefficients. Carries a "nose_tip" landmark
// when the model records a nose vertex.
PointCloud synthesize(const MorphableModel& model, const ModelParams& params);
PointCloud synthesize(const MorphableModel& model, const ModelParams& params, const RigidTransform& pose);

// Alternates nearest-point correspondences (model vertex -> scan), an SVD
// pose update and ridge least squares for alpha then beta. A fit that hits
// the iteration cap is returned with converged = false.
FitResult fit(const MorphableModel& model, const PointCloud& scan, const FitSettings& settings = {});

// 1..ke randomly chosen components set to Uniform(-0.05, 0.05), rest zero.
Eigen::VectorXd random_expression(Rng& rng, int ke = kDefaultExpressionDim);

// Psi = pose(synthesize(alpha_fitted, target_beta)); returns Psi - Omega.
DisplacementField displacement_field(const FitResult& fitted, const Eigen::VectorXd& target_beta,
                                     const MorphableModel& model);
// Psi supplied directly.
DisplacementField displacement_field(const PointCloud& deformed, const FitResult& fitted);

// Each scan point moves by the displacement of its nearest fitted vertex
// (lowest index on ties). Point count, order and landmarks are kept.
PointCloud transfer_expression(const PointCloud& scan, const FitResult& fitted, const DisplacementField& field);

// Procedural face-like model: a half-ellipsoid (65 x 85 mm, 90 mm deep)
// with a nose at the origin and coarse eye, brow, cheek, mouth and chin
// relief, sampled on a jittered grid with vertex 0 at the nose tip. Bases
// are smooth radial-basis fields orthogonalized jointly and against rigid
// motion of the mean; a unit shape coefficient moves vertices 5 mm rms and a
// unit expression coefficient 20 mm rms.
MorphableModel make_toy_model(std::size_t n_vertices, int ks, int ke, std::uint64_t seed);

// "MLMM1" binary model format.
void save_model(const MorphableModel& model, const std::filesystem::path& path);
MorphableModel load_model(const std::filesystem::path& path);

}  // namespace facepipe
