#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "facepipe/depthmap.hpp"

namespace facepipe {

struct FeatureVector {
  Eigen::VectorXd values;

  Eigen::Index size() const noexcept { return values.size(); }
};

// x -> sign(x) * sqrt(|x|), element-wise.
FeatureVector sqrt_normalize(const FeatureVector& v);

struct PcaModel {
  Eigen::VectorXd mean;                // D
  Eigen::MatrixXd components;          // k x D, orthonormal rows
  Eigen::VectorXd explained_variance;  // k, descending
  double total_variance = 0.0;         // trace of the sample covariance

  Eigen::Index input_dim() const noexcept { return mean.size(); }
  Eigen::Index output_dim() const noexcept { return components.rows(); }
};

// Sample-covariance PCA (n - 1 denominator). Uses the n x n Gram matrix
// when there are fewer samples than dimensions. Each component is signed
// so that its largest-magnitude entry is positive.
PcaModel pca_fit(std::span<const FeatureVector> features, int k);
// Smallest k whose components explain `variance_target` of the total
// variance, capped at max_k (and at n - 1).
PcaModel pca_fit_variance(std::span<const FeatureVector> features, double variance_target, int max_k);

FeatureVector pca_transform(const PcaModel& model, const FeatureVector& v);

// Maps a normalized depth map to a fixed-length feature vector.
// Implementations are deterministic and immutable after construction.
class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;
  virtual FeatureVector embed(const DepthMap& map) const = 0;
  virtual int dimension() const = 0;
};

// "Eigen-depth-map" projection: PCA over flattened training maps.
class BaselineBackend final : public EmbeddingBackend {
 public:
  BaselineBackend(PcaModel pca, int width, int height);

  FeatureVector embed(const DepthMap& map) const override;
  int dimension() const override { return static_cast<int>(pca_.output_dim()); }
  const PcaModel& pca() const noexcept { return pca_; }

 private:
  PcaModel pca_;
  int width_, height_;
};

// Requires at least d + 1 maps of identical size with values in [0, 255].
std::unique_ptr<BaselineBackend> baseline_train(std::span<const DepthMap> maps, int d);

// Looks features up in a directory of <sha256-of-pgm>.fvec files. This is
// where features from an externally trained network are plugged in.
class ExternalBackend final : public EmbeddingBackend {
 public:
  // dimension <= 0 infers it from the first feature file in the directory.
  explicit ExternalBackend(std::filesystem::path directory, int dimension = 0);

  FeatureVector embed(const DepthMap& map) const override;
  FeatureVector lookup(const std::string& hash) const;
  int dimension() const override { return dimension_; }

 private:
  std::filesystem::path directory_;
  int dimension_ = 0;
};

std::unique_ptr<ExternalBackend> external_backend(const std::filesystem::path& directory, int dimension = 0);

// Lowercase hex SHA-256.
std::string sha256_hex(const std::string& bytes);

// "FVEC1" magic, little-endian u64 length D, then D little-endian doubles.
void write_feature_file(const FeatureVector& v, const std::filesystem::path& path);
FeatureVector read_feature_file(const std::filesystem::path& path);

}  // namespace facepipe
