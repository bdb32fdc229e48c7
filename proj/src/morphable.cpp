#include "facepipe/morphable.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Geometry>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <numbers>
#include <tuple>

#include "facepipe/error.hpp"
#include "facepipe/neighbor_index.hpp"
#include "facepipe/registration.hpp"

namespace facepipe {

MorphableModel::MorphableModel(Eigen::VectorXd mean, Eigen::MatrixXd shape_basis, Eigen::MatrixXd expr_basis,
                               std::optional<std::size_t> nose_index)
    : mean_(std::move(mean)),
      shape_basis_(std::move(shape_basis)),
      expr_basis_(std::move(expr_basis)),
      nose_index_(nose_index) {
  if (mean_.size() == 0 || mean_.size() % 3 != 0)
    throw DimensionMismatch("MorphableModel: mean must hold 3N coordinates");
  if (shape_basis_.rows() != mean_.size() || expr_basis_.rows() != mean_.size())
    throw DimensionMismatch("MorphableModel: basis rows must equal 3N");
  if (!mean_.allFinite()) throw ContractViolation("MorphableModel: non-finite mean");
  for (const Eigen::MatrixXd* basis : {&shape_basis_, &expr_basis_}) {
    for (Eigen::Index c = 0; c < basis->cols(); ++c) {
      const double norm = basis->col(c).norm();
      if (!std::isfinite(norm) || norm == 0.0)
        throw ContractViolation("MorphableModel: basis column norms must be finite and non-zero");
    }
  }
  if (nose_index_ && *nose_index_ >= vertex_count())
    throw ContractViolation("MorphableModel: nose index out of range");
}

ModelParams ModelParams::zero(const MorphableModel& model) {
  return {Eigen::VectorXd::Zero(model.shape_dim()), Eigen::VectorXd::Zero(model.expr_dim())};
}

namespace {

Eigen::VectorXd coordinates(const MorphableModel& model, const ModelParams& params) {
  if (params.alpha.size() != model.shape_dim() || params.beta.size() != model.expr_dim())
    throw DimensionMismatch("synthesize: coefficient lengths do not match the model");
  return model.mean() + model.shape_basis() * params.alpha + model.expr_basis() * params.beta;
}

std::vector<Vec3> to_points(const Eigen::VectorXd& x, const RigidTransform* pose) {
  std::vector<Vec3> pts(static_cast<std::size_t>(x.size() / 3));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Vec3 p = x.segment<3>(3 * static_cast<Eigen::Index>(i));
    pts[i] = pose ? pose->apply(p) : p;
  }
  return pts;
}

PointCloud::Landmarks nose_landmark(const MorphableModel& model, const std::vector<Vec3>& pts) {
  PointCloud::Landmarks marks;
  if (model.nose_index()) marks.emplace("nose_tip", pts[*model.nose_index()]);
  return marks;
}

}  // namespace

PointCloud synthesize(const MorphableModel& model, const ModelParams& params) {
  auto pts = to_points(coordinates(model, params), nullptr);
  auto marks = nose_landmark(model, pts);
  return PointCloud(std::move(pts), std::move(marks));
}

PointCloud synthesize(const MorphableModel& model, const ModelParams& params, const RigidTransform& pose) {
  auto pts = to_points(coordinates(model, params), &pose);
  auto marks = nose_landmark(model, pts);
  return PointCloud(std::move(pts), std::move(marks));
}

namespace {

// Rows of `basis` for the accepted vertices.
Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& basis, const std::vector<std::size_t>& vertices) {
  Eigen::MatrixXd out(3 * static_cast<Eigen::Index>(vertices.size()), basis.cols());
  for (std::size_t k = 0; k < vertices.size(); ++k)
    out.middleRows<3>(3 * static_cast<Eigen::Index>(k)) = basis.middleRows<3>(3 * static_cast<Eigen::Index>(vertices[k]));
  return out;
}

Eigen::VectorXd ridge_solve(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double correspondences,
                            double ridge) {
  Eigen::MatrixXd normal = a.transpose() * a / correspondences;
  normal.diagonal().array() += ridge;
  Eigen::LLT<Eigen::MatrixXd> llt(normal);
  if (llt.info() != Eigen::Success) throw RegularizationError("fit: normal equations are singular");
  Eigen::VectorXd x = llt.solve(a.transpose() * b / correspondences);
  if (!x.allFinite()) throw RegularizationError("fit: normal equations are singular");
  return x;
}

struct VertexMatches {
  std::vector<std::size_t> vertices;  // accepted model vertices
  std::vector<Vec3> targets;          // matched scan points
  double rmse = 0.0;
};

VertexMatches match_vertices(const std::vector<Vec3>& posed, const PointCloud& scan, const NeighborIndex& index,
                             double rejection_multiplier) {
  const std::size_t n = posed.size();
  std::vector<std::size_t> hit(n);
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto h = index.nearest(posed[i]);
    hit[i] = h.index;
    dist[i] = std::sqrt(h.squared_distance);
  }
  std::vector<double> sorted = dist;
  auto mid = sorted.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(sorted.begin(), mid, sorted.end());
  const double threshold =
      rejection_multiplier > 0.0 ? rejection_multiplier * *mid : std::numeric_limits<double>::infinity();

  VertexMatches m;
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(dist[i] <= threshold)) continue;
    m.vertices.push_back(i);
    m.targets.push_back(scan[hit[i]]);
    sum_sq += dist[i] * dist[i];
  }
  if (m.vertices.empty()) throw DivergenceError("fit: every correspondence was rejected");
  m.rmse = std::sqrt(sum_sq / static_cast<double>(m.vertices.size()));
  return m;
}

}  // namespace

FitResult fit(const MorphableModel& model, const PointCloud& scan, const FitSettings& settings) {
  if (settings.max_iterations < 1) throw ContractViolation("fit: max_iterations must be >= 1");
  if (!(settings.ridge >= 0.0)) throw ContractViolation("fit: ridge must be >= 0");
  if (!(settings.convergence_eps > 0.0)) throw ContractViolation("fit: convergence_eps must be > 0");
  if (settings.rejection_multiplier != 0.0 && !(settings.rejection_multiplier > 1.0))
    throw ContractViolation("fit: rejection_multiplier must be 0 (off) or > 1");
  if (scan.empty() || scan.size() * 10 < model.vertex_count())
    throw ContractViolation("fit: scan needs at least N/10 points");
  const NeighborIndex index(scan);

  FitResult result;
  result.params = ModelParams::zero(model);
  result.pose = settings.initial_pose;
  double previous = std::numeric_limits<double>::infinity();

  for (int it = 0; it < settings.max_iterations; ++it) {
    const std::vector<Vec3> local = to_points(coordinates(model, result.params), nullptr);
    std::vector<Vec3> posed(local.size());
    for (std::size_t i = 0; i < local.size(); ++i) posed[i] = result.pose.apply(local[i]);
    const VertexMatches m = match_vertices(posed, scan, index, settings.rejection_multiplier);
    if (std::abs(previous - m.rmse) < settings.convergence_eps) {
      result.converged = true;
      break;
    }
    previous = m.rmse;

    std::vector<Vec3> from(m.vertices.size());
    for (std::size_t k = 0; k < m.vertices.size(); ++k) from[k] = local[m.vertices[k]];
    result.pose = fit_rigid(from, m.targets);

    // Targets pulled back into model coordinates.
    const Mat3 rt = result.pose.rotation().transpose();
    Eigen::VectorXd target(3 * static_cast<Eigen::Index>(m.vertices.size()));
    Eigen::VectorXd mean_rows(target.size());
    for (std::size_t k = 0; k < m.vertices.size(); ++k) {
      const auto row = 3 * static_cast<Eigen::Index>(k);
      target.segment<3>(row) = rt * (m.targets[k] - result.pose.translation());
      mean_rows.segment<3>(row) = model.mean().segment<3>(3 * static_cast<Eigen::Index>(m.vertices[k]));
    }
    const Eigen::MatrixXd shape_rows = gather_rows(model.shape_basis(), m.vertices);
    const Eigen::MatrixXd expr_rows = gather_rows(model.expr_basis(), m.vertices);
    const double count = static_cast<double>(m.vertices.size());

    result.params.alpha =
        ridge_solve(shape_rows, target - mean_rows - expr_rows * result.params.beta, count, settings.ridge);
    result.params.beta =
        ridge_solve(expr_rows, target - mean_rows - shape_rows * result.params.alpha, count, settings.ridge);
    result.iterations = it + 1;
  }

  result.fitted_points = synthesize(model, result.params, result.pose);
  result.residual_rmse =
      match_vertices(result.fitted_points.points(), scan, index, settings.rejection_multiplier).rmse;
  return result;
}

Eigen::VectorXd random_expression(Rng& rng, int ke) {
  if (ke < 1) throw ContractViolation("random_expression: ke must be >= 1");
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(ke);
  const auto active = 1 + rng.uniform_index(static_cast<std::uint64_t>(ke));
  std::vector<int> slots(static_cast<std::size_t>(ke));
  for (int i = 0; i < ke; ++i) slots[static_cast<std::size_t>(i)] = i;
  for (std::uint64_t k = 0; k < active; ++k) {
    const auto j = k + rng.uniform_index(static_cast<std::uint64_t>(ke) - k);
    std::swap(slots[k], slots[j]);
    double value = 0.0;
    while (value == 0.0) value = rng.uniform(-kExpressionBound, kExpressionBound);
    beta(slots[k]) = value;
  }
  return beta;
}

DisplacementField displacement_field(const PointCloud& deformed, const FitResult& fitted) {
  const auto& omega = fitted.fitted_points.points();
  if (deformed.size() != omega.size())
    throw DimensionMismatch("displacement_field: deformed model must have one point per fitted vertex");
  DisplacementField field;
  field.vectors.resize(omega.size());
  for (std::size_t i = 0; i < omega.size(); ++i) field.vectors[i] = deformed[i] - omega[i];
  return field;
}

DisplacementField displacement_field(const FitResult& fitted, const Eigen::VectorXd& target_beta,
                                     const MorphableModel& model) {
  if (target_beta.size() != model.expr_dim())
    throw DimensionMismatch("displacement_field: target beta length does not match the model");
  const ModelParams target{fitted.params.alpha, target_beta};
  return displacement_field(synthesize(model, target, fitted.pose), fitted);
}

PointCloud transfer_expression(const PointCloud& scan, const FitResult& fitted, const DisplacementField& field) {
  if (fitted.fitted_points.empty()) throw ContractViolation("transfer_expression: empty fitted model");
  if (field.vectors.size() != fitted.fitted_points.size())
    throw DimensionMismatch("transfer_expression: field length must equal the fitted vertex count");
  const NeighborIndex index(fitted.fitted_points);
  std::vector<Vec3> out(scan.size());
  for (std::size_t i = 0; i < scan.size(); ++i) out[i] = scan[i] + field.vectors[index.nearest(scan[i]).index];
  return with_points(scan, std::move(out));
}

namespace {

constexpr double kToyHalfWidth = 65.0;
constexpr double kToyHalfHeight = 85.0;
constexpr double kToyDepth = 90.0;
constexpr double kToyNoseHeight = 25.0;
constexpr double kToyNoseSigma = 9.0;
constexpr double kShapeRms = 5.0;
constexpr double kExpressionRms = 20.0;

double gauss(double x, double y, double cx, double cy, double sx, double sy) {
  const double dx = (x - cx) / sx, dy = (y - cy) / sy;
  return std::exp(-0.5 * (dx * dx + dy * dy));
}

// Shell plus facial relief; the nose tip at the origin is the unique maximum.
double toy_depth(double x, double y) {
  const double rho2 = (x * x) / (kToyHalfWidth * kToyHalfWidth) + (y * y) / (kToyHalfHeight * kToyHalfHeight);
  const double shell = kToyDepth * std::sqrt(std::max(0.0, 1.0 - rho2));
  const double nose = kToyNoseHeight * gauss(x, y, 0.0, 0.0, kToyNoseSigma, kToyNoseSigma);
  const double bridge = 8.0 * gauss(x, y, 0.0, 22.0, 6.0, 14.0);
  const double brow = 6.0 * gauss(x, y, 0.0, 38.0, 30.0, 6.0);
  const double eyes = -9.0 * (gauss(x, y, -30.0, 22.0, 10.0, 7.0) + gauss(x, y, 30.0, 22.0, 10.0, 7.0));
  const double cheeks = 5.0 * (gauss(x, y, -35.0, -10.0, 12.0, 12.0) + gauss(x, y, 35.0, -10.0, 12.0, 12.0));
  const double mouth = 4.0 * gauss(x, y, 0.0, -38.0, 18.0, 4.0) - 3.0 * gauss(x, y, 0.0, -45.0, 16.0, 3.0);
  const double chin = 7.0 * gauss(x, y, 0.0, -62.0, 14.0, 8.0);
  return shell + nose + bridge + brow + eyes + cheeks + mouth + chin - (kToyDepth + kToyNoseHeight);
}

double ellipse_rho2(double x, double y) {
  return (x * x) / (kToyHalfWidth * kToyHalfWidth) + (y * y) / (kToyHalfHeight * kToyHalfHeight);
}

// Jittered grid over the ellipse, innermost cells first; vertex 0 sits
// exactly on the nose tip. Unlike a spiral, the layout has no rotational
// near-symmetry, so a rotated copy only matches itself at the true pose.
std::vector<Vec3> toy_samples(std::size_t n, std::uint64_t seed) {
  struct Cell {
    double rho2;
    long i, j;
  };
  double step = std::sqrt(std::numbers::pi * kToyHalfWidth * kToyHalfHeight / static_cast<double>(n));
  std::vector<Cell> cells;
  for (;;) {
    cells.clear();
    const long ni = static_cast<long>(kToyHalfWidth / step) + 1, nj = static_cast<long>(kToyHalfHeight / step) + 1;
    for (long j = -nj; j <= nj; ++j)
      for (long i = -ni; i <= ni; ++i) {
        const double r2 = ellipse_rho2(static_cast<double>(i) * step, static_cast<double>(j) * step);
        if (r2 < 1.0) cells.push_back({r2, i, j});
      }
    if (cells.size() >= n) break;
    step *= 0.98;
  }
  std::sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) {
    return std::tie(a.rho2, a.j, a.i) < std::tie(b.rho2, b.j, b.i);
  });
  Rng rng(seed);
  std::vector<Vec3> pts(n);
  for (std::size_t k = 0; k < n; ++k) {
    double x = static_cast<double>(cells[k].i) * step, y = static_cast<double>(cells[k].j) * step;
    if (k > 0) {
      const double jx = x + rng.uniform(-0.4, 0.4) * step, jy = y + rng.uniform(-0.4, 0.4) * step;
      if (ellipse_rho2(jx, jy) < 1.0) {
        x = jx;
        y = jy;
      }
    }
    pts[k] = Vec3(x, y, toy_depth(x, y));
  }
  return pts;
}

// Sum of a few Gaussian bumps with random 3D amplitudes.
Eigen::VectorXd smooth_field(const std::vector<Vec3>& pts, Rng& rng) {
  constexpr int kBumps = 6;
  Eigen::VectorXd col = Eigen::VectorXd::Zero(3 * static_cast<Eigen::Index>(pts.size()));
  for (int b = 0; b < kBumps; ++b) {
    const double cx = rng.uniform(-kToyHalfWidth, kToyHalfWidth);
    const double cy = rng.uniform(-kToyHalfHeight, kToyHalfHeight);
    const double width = rng.uniform(15.0, 40.0);
    // Mostly along depth, like the dominant modes of a real face model.
    const Vec3 amp(0.3 * rng.uniform(-1.0, 1.0), 0.3 * rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    const double inv = 1.0 / (2.0 * width * width);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double dx = pts[i].x() - cx, dy = pts[i].y() - cy;
      col.segment<3>(3 * static_cast<Eigen::Index>(i)) += amp * std::exp(-(dx * dx + dy * dy) * inv);
    }
  }
  return col;
}

}  // namespace

MorphableModel make_toy_model(std::size_t n_vertices, int ks, int ke, std::uint64_t seed) {
  if (n_vertices < 50 || ks < 1 || ke < 1)
    throw ContractViolation("make_toy_model: need n_vertices >= 50, ks >= 1, ke >= 1");
  const std::vector<Vec3> pts = toy_samples(n_vertices, mix_seed(seed, 1));
  Eigen::VectorXd mean(3 * static_cast<Eigen::Index>(n_vertices));
  for (std::size_t k = 0; k < n_vertices; ++k) mean.segment<3>(3 * static_cast<Eigen::Index>(k)) = pts[k];

  // The first six columns span the infinitesimal rigid motions of the mean;
  // orthogonalizing against them keeps shape and expression free of pose.
  constexpr int kRigid = 6;
  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : pts) centroid += p;
  centroid /= static_cast<double>(n_vertices);
  Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(mean.size(), kRigid + ks + ke);
  for (std::size_t k = 0; k < n_vertices; ++k) {
    const auto row = 3 * static_cast<Eigen::Index>(k);
    const Vec3 q = pts[k] - centroid;
    for (int a = 0; a < 3; ++a) {
      basis(row + a, a) = 1.0;
      basis.block<3, 1>(row, 3 + a) = Vec3(Vec3::Unit(a)).cross(q);
    }
  }
  Rng rng(seed);
  for (int c = kRigid; c < basis.cols(); ++c) basis.col(c) = smooth_field(pts, rng);
  // Modified Gram-Schmidt, two passes.
  for (int pass = 0; pass < 2; ++pass) {
    for (int c = 0; c < basis.cols(); ++c) {
      for (int p = 0; p < c; ++p) basis.col(c) -= basis.col(p).dot(basis.col(c)) * basis.col(p);
      const double norm = basis.col(c).norm();
      if (!(norm > 1e-12)) throw ContractViolation("make_toy_model: degenerate basis draw; use another seed");
      basis.col(c) /= norm;
    }
  }
  const double root_n = std::sqrt(static_cast<double>(n_vertices));
  Eigen::MatrixXd shape = basis.middleCols(kRigid, ks) * (kShapeRms * root_n);
  Eigen::MatrixXd expr = basis.rightCols(ke) * (kExpressionRms * root_n);
  return MorphableModel(std::move(mean), std::move(shape), std::move(expr), std::size_t{0});
}

namespace {

constexpr char kModelMagic[5] = {'M', 'L', 'M', 'M', '1'};
constexpr std::uint64_t kNoNose = std::numeric_limits<std::uint64_t>::max();

static_assert(std::endian::native == std::endian::little, "model I/O assumes a little-endian host");

void put_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

void put_doubles(std::ostream& out, const double* data, Eigen::Index n) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
}

}  // namespace

void save_model(const MorphableModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kModelMagic, sizeof kModelMagic);
  put_u64(out, model.vertex_count());
  put_u64(out, static_cast<std::uint64_t>(model.shape_dim()));
  put_u64(out, static_cast<std::uint64_t>(model.expr_dim()));
  // Eigen's default storage is column-major, matching the file layout.
  put_doubles(out, model.mean().data(), model.mean().size());
  put_doubles(out, model.shape_basis().data(), model.shape_basis().size());
  put_doubles(out, model.expr_basis().data(), model.expr_basis().size());
  put_u64(out, model.nose_index() ? *model.nose_index() : kNoNose);
  if (!out) throw IoError("write failed for " + path.string());
}

MorphableModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto take = [&](void* dst, std::size_t n) {
    if (bytes.size() - pos < n) throw FormatError("model file " + path.string() + " is truncated");
    std::memcpy(dst, bytes.data() + pos, n);
    pos += n;
  };
  char magic[5];
  take(magic, sizeof magic);
  if (std::memcmp(magic, kModelMagic, sizeof magic) != 0) throw FormatError(path.string() + ": not an MLMM1 model");
  std::uint64_t n = 0, ks = 0, ke = 0;
  take(&n, 8);
  take(&ks, 8);
  take(&ke, 8);
  constexpr std::uint64_t kLimit = std::uint64_t{1} << 32;
  if (n == 0 || n >= kLimit || ks >= kLimit || ke >= kLimit)
    throw FormatError(path.string() + ": implausible model dimensions");
  const std::uint64_t need = 8 * 3 * n * (1 + ks + ke) + 8;
  if (bytes.size() - pos < need) throw FormatError("model file " + path.string() + " is truncated");
  const auto rows = static_cast<Eigen::Index>(3 * n);
  Eigen::VectorXd mean(rows);
  Eigen::MatrixXd shape(rows, static_cast<Eigen::Index>(ks));
  Eigen::MatrixXd expr(rows, static_cast<Eigen::Index>(ke));
  take(mean.data(), static_cast<std::size_t>(mean.size()) * 8);
  take(shape.data(), static_cast<std::size_t>(shape.size()) * 8);
  take(expr.data(), static_cast<std::size_t>(expr.size()) * 8);
  std::uint64_t nose = 0;
  take(&nose, 8);
  std::optional<std::size_t> nose_index;
  if (nose != kNoNose) nose_index = static_cast<std::size_t>(nose);
  return MorphableModel(std::move(mean), std::move(shape), std::move(expr), nose_index);
}

}  // namespace facepipe
