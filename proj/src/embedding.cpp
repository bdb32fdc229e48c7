#include "facepipe/embedding.hpp"

#include <openssl/evp.h>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>

#include "facepipe/error.hpp"

namespace facepipe {

FeatureVector sqrt_normalize(const FeatureVector& v) {
  FeatureVector out{v.values};
  for (Eigen::Index i = 0; i < out.values.size(); ++i) {
    const double x = out.values(i);
    out.values(i) = std::copysign(std::sqrt(std::abs(x)), x);
  }
  return out;
}

namespace {

using SelectK = std::function<int(const Eigen::VectorXd& descending_eigenvalues)>;

// Orthonormalize rows in order (two MGS passes). Rows that vanish are
// replaced with the standard basis vector having the largest residual.
void orthonormalize_rows(Eigen::MatrixXd& rows) {
  const Eigen::Index dim = rows.cols();
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    for (int pass = 0; pass < 2; ++pass) {
      for (Eigen::Index p = 0; p < r; ++p) rows.row(r) -= rows.row(p).dot(rows.row(r)) * rows.row(p);
    }
    double norm = rows.row(r).norm();
    if (norm < 1e-10) {
      Eigen::RowVectorXd best;
      double best_norm = 0.0;
      for (Eigen::Index e = 0; e < dim; ++e) {
        Eigen::RowVectorXd cand = Eigen::RowVectorXd::Unit(dim, e);
        for (int pass = 0; pass < 2; ++pass)
          for (Eigen::Index p = 0; p < r; ++p) cand -= rows.row(p).dot(cand) * rows.row(p);
        const double n = cand.norm();
        if (n > best_norm + 1e-12) {
          best_norm = n;
          best = cand;
        }
      }
      rows.row(r) = best;
      norm = best_norm;
    }
    rows.row(r) /= norm;
  }
}

void fix_signs(Eigen::MatrixXd& rows) {
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    Eigen::Index arg = 0;
    rows.row(r).cwiseAbs().maxCoeff(&arg);
    if (rows(r, arg) < 0.0) rows.row(r) = -rows.row(r);
  }
}

// `data` holds one sample per row; it is centered in place.
PcaModel pca_from_rows(Eigen::MatrixXd data, const SelectK& select_k) {
  const Eigen::Index n = data.rows(), dim = data.cols();
  if (n < 2) throw ContractViolation("pca_fit: need at least 2 feature vectors");
  PcaModel model;
  model.mean = data.colwise().mean().transpose();
  data.rowwise() -= model.mean.transpose();
  if (data.cwiseAbs().maxCoeff() == 0.0) throw DegenerateInputError("pca_fit: all feature vectors are identical");
  const double denom = static_cast<double>(n - 1);

  const bool use_gram = n < dim;
  Eigen::MatrixXd scatter = use_gram ? Eigen::MatrixXd(data * data.transpose() / denom)
                                     : Eigen::MatrixXd(data.transpose() * data / denom);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(scatter);
  if (eig.info() != Eigen::Success) throw DegenerateInputError("pca_fit: eigendecomposition failed");
  const Eigen::VectorXd descending = eig.eigenvalues().reverse().cwiseMax(0.0);
  model.total_variance = descending.sum();

  const int k = select_k(descending);
  const Eigen::Index max_k = std::min<Eigen::Index>(dim, n - 1);
  if (k < 1 || k > max_k)
    throw ContractViolation("pca_fit: k = " + std::to_string(k) + " outside [1, " + std::to_string(max_k) + "]");

  Eigen::MatrixXd components(k, dim);
  const double lambda_max = descending(0);
  for (int j = 0; j < k; ++j) {
    const Eigen::Index col = eig.eigenvalues().size() - 1 - j;
    if (!use_gram) {
      components.row(j) = eig.eigenvectors().col(col).transpose();
    } else if (descending(j) > 1e-12 * lambda_max) {
      components.row(j) = (data.transpose() * eig.eigenvectors().col(col)).transpose() /
                          std::sqrt(denom * descending(j));
    } else {
      components.row(j).setZero();  // filled by orthonormalize_rows
    }
  }
  orthonormalize_rows(components);
  fix_signs(components);
  model.components = std::move(components);
  model.explained_variance = descending.head(k);
  return model;
}

Eigen::MatrixXd stack(std::span<const FeatureVector> features) {
  if (features.empty()) throw ContractViolation("pca_fit: need at least 2 feature vectors");
  const Eigen::Index dim = features.front().size();
  Eigen::MatrixXd data(static_cast<Eigen::Index>(features.size()), dim);
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].size() != dim) throw DimensionMismatch("pca_fit: feature dimensions differ");
    data.row(static_cast<Eigen::Index>(i)) = features[i].values.transpose();
  }
  return data;
}

}  // namespace

PcaModel pca_fit(std::span<const FeatureVector> features, int k) {
  return pca_from_rows(stack(features), [k](const Eigen::VectorXd&) { return k; });
}

PcaModel pca_fit_variance(std::span<const FeatureVector> features, double variance_target, int max_k) {
  if (!(variance_target > 0.0 && variance_target <= 1.0))
    throw ContractViolation("pca_fit_variance: target must be in (0, 1]");
  Eigen::MatrixXd data = stack(features);
  const Eigen::Index cap = std::min<Eigen::Index>({data.cols(), data.rows() - 1, std::max(1, max_k)});
  return pca_from_rows(std::move(data), [&](const Eigen::VectorXd& ev) {
    const double total = ev.sum();
    double acc = 0.0;
    Eigen::Index k = 0;
    while (k < cap && acc < variance_target * total) acc += ev(k++);
    return static_cast<int>(std::max<Eigen::Index>(k, 1));
  });
}

FeatureVector pca_transform(const PcaModel& model, const FeatureVector& v) {
  if (v.size() != model.input_dim()) throw DimensionMismatch("pca_transform: dimension mismatch");
  return {model.components * (v.values - model.mean)};
}

BaselineBackend::BaselineBackend(PcaModel pca, int width, int height)
    : pca_(std::move(pca)), width_(width), height_(height) {
  if (pca_.input_dim() != static_cast<Eigen::Index>(width) * height)
    throw DimensionMismatch("BaselineBackend: PCA input size does not match the map size");
}

FeatureVector BaselineBackend::embed(const DepthMap& map) const {
  if (map.width() != width_ || map.height() != height_)
    throw DimensionMismatch("BaselineBackend: map is " + std::to_string(map.width()) + "x" +
                            std::to_string(map.height()) + ", expected " + std::to_string(width_) + "x" +
                            std::to_string(height_));
  const Eigen::Map<const Eigen::VectorXd> flat(map.depth_values().data(),
                                               static_cast<Eigen::Index>(map.pixel_count()));
  return {pca_.components * (flat - pca_.mean)};
}

std::unique_ptr<BaselineBackend> baseline_train(std::span<const DepthMap> maps, int d) {
  if (d < 1) throw ContractViolation("baseline_train: dimension must be >= 1");
  if (maps.size() < static_cast<std::size_t>(d) + 1)
    throw ContractViolation("baseline_train: need at least d + 1 = " + std::to_string(d + 1) + " maps, got " +
                            std::to_string(maps.size()));
  const int w = maps.front().width(), h = maps.front().height();
  Eigen::MatrixXd data(static_cast<Eigen::Index>(maps.size()), static_cast<Eigen::Index>(w) * h);
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const DepthMap& m = maps[i];
    if (m.width() != w || m.height() != h) throw DimensionMismatch("baseline_train: maps differ in size");
    for (std::size_t p = 0; p < m.pixel_count(); ++p) {
      const double v = m.depth_values()[p];
      if (!(v >= 0.0 && v <= 255.0)) throw ContractViolation("baseline_train: maps must be normalized");
      data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p)) = v;
    }
  }
  PcaModel pca = pca_from_rows(std::move(data), [d](const Eigen::VectorXd&) { return d; });
  return std::make_unique<BaselineBackend>(std::move(pca), w, h);
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

namespace {

constexpr char kFeatureMagic[5] = {'F', 'V', 'E', 'C', '1'};
static_assert(std::endian::native == std::endian::little, "feature I/O assumes a little-endian host");

}  // namespace

void write_feature_file(const FeatureVector& v, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kFeatureMagic, sizeof kFeatureMagic);
  const auto n = static_cast<std::uint64_t>(v.size());
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  out.write(reinterpret_cast<const char*>(v.values.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!out) throw IoError("write failed for " + path.string());
}

FeatureVector read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 13 || std::memcmp(bytes.data(), kFeatureMagic, 5) != 0)
    throw FormatError(path.string() + ": not an FVEC1 feature file");
  std::uint64_t n = 0;
  std::memcpy(&n, bytes.data() + 5, 8);
  if (n == 0 || (bytes.size() - 13) / 8 != n || (bytes.size() - 13) % 8 != 0)
    throw FormatError(path.string() + ": declared length " + std::to_string(n) + " does not match the payload (" +
                      std::to_string(bytes.size() - 13) + " bytes)");
  FeatureVector v{Eigen::VectorXd(static_cast<Eigen::Index>(n))};
  std::memcpy(v.values.data(), bytes.data() + 13, n * 8);
  if (!v.values.allFinite()) throw FormatError(path.string() + ": non-finite feature values");
  return v;
}

ExternalBackend::ExternalBackend(std::filesystem::path directory, int dimension)
    : directory_(std::move(directory)), dimension_(dimension) {
  if (!std::filesystem::is_directory(directory_))
    throw IoError("feature directory " + directory_.string() + " does not exist");
  if (dimension_ <= 0) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(directory_))
      if (entry.path().extension() == ".fvec") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    dimension_ = files.empty() ? 0 : static_cast<int>(read_feature_file(files.front()).size());
  }
}

FeatureVector ExternalBackend::lookup(const std::string& hash) const {
  const auto path = directory_ / (hash + ".fvec");
  if (!std::filesystem::exists(path))
    throw LookupError("no feature file for map hash " + hash + " in " + directory_.string());
  FeatureVector v = read_feature_file(path);
  if (dimension_ > 0 && v.size() != dimension_)
    throw FormatError(path.string() + ": expected " + std::to_string(dimension_) + " values, found " +
                      std::to_string(v.size()));
  return v;
}

FeatureVector ExternalBackend::embed(const DepthMap& map) const { return lookup(sha256_hex(encode_pgm(map))); }

std::unique_ptr<ExternalBackend> external_backend(const std::filesystem::path& directory, int dimension) {
  return std::make_unique<ExternalBackend>(directory, dimension);
}

}  // namespace facepipe
