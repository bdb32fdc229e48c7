#pragma once

#include <string>
#include <vector>

#include "facepipe/embedding.hpp"

namespace facepipe {

struct GalleryEntry {
  std::string subject_id;
  FeatureVector feature;
};

// Enrolled identities. Dimension is fixed by the first entry.
class Gallery {
 public:
  Gallery() = default;
  explicit Gallery(std::vector<GalleryEntry> entries);

  void enroll(std::string subject_id, FeatureVector feature);
  const std::vector<GalleryEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  Eigen::Index dimension() const noexcept { return entries_.empty() ? 0 : entries_.front().feature.size(); }
  bool contains(const std::string& subject_id) const;

 private:
  std::vector<GalleryEntry> entries_;
};

struct Match {
  std::string subject_id;
  double distance;
  std::size_t gallery_index;
};

// Ascending distance; ties keep gallery order.
using RankedMatches = std::vector<Match>;

// 1 - a.b / (|a| |b|), clamped to [0, 2]. Throws UndefinedDistanceError on
// a zero vector.
double cosine_distance(const FeatureVector& a, const FeatureVector& b);

RankedMatches identify(const FeatureVector& probe, const Gallery& gallery);

struct ProbeResult {
  std::string probe_name;
  std::string true_id;
  RankedMatches matches;
};

// 1-based rank of the first entry carrying true_id; 0 when absent.
std::size_t rank_of(const ProbeResult& result);

// curve[r - 1] = fraction of probes whose true identity is within the top r.
// Throws AccountingError naming the probe if a true id is not in its ranking.
std::vector<double> cmc(const std::vector<ProbeResult>& results, std::size_t max_rank);

struct RocPoint {
  double threshold;
  double far;  // fraction of impostor distances <= threshold
  double vr;   // fraction of genuine distances <= threshold
};

inline constexpr int kDefaultRocThresholds = 1000;

// Evenly spaced thresholds spanning [min, max] of the pooled distances.
std::vector<RocPoint> roc(const std::vector<double>& genuine, const std::vector<double>& impostor,
                          int thresholds = kDefaultRocThresholds);

}  // namespace facepipe
