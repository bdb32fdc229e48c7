#include "facepipe/matching.hpp"

#include <algorithm>
#include <cmath>

#include "facepipe/error.hpp"

namespace facepipe {

Gallery::Gallery(std::vector<GalleryEntry> entries) {
  for (auto& e : entries) enroll(std::move(e.subject_id), std::move(e.feature));
}

void Gallery::enroll(std::string subject_id, FeatureVector feature) {
  if (!entries_.empty() && feature.size() != dimension())
    throw DimensionMismatch("Gallery: feature dimension " + std::to_string(feature.size()) + " != " +
                            std::to_string(dimension()));
  entries_.push_back({std::move(subject_id), std::move(feature)});
}

bool Gallery::contains(const std::string& subject_id) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.subject_id == subject_id; });
}

double cosine_distance(const FeatureVector& a, const FeatureVector& b) {
  if (a.size() != b.size()) throw DimensionMismatch("cosine_distance: dimension mismatch");
  const double* pa = a.values.data();
  const double* pb = b.values.data();
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    dot += pa[i] * pb[i];
    na += pa[i] * pa[i];
    nb += pb[i] * pb[i];
  }
  if (na == 0.0 || nb == 0.0) throw UndefinedDistanceError("cosine_distance: zero-norm feature vector");
  return std::clamp(1.0 - dot / (std::sqrt(na) * std::sqrt(nb)), 0.0, 2.0);
}

RankedMatches identify(const FeatureVector& probe, const Gallery& gallery) {
  if (gallery.size() == 0) throw ContractViolation("identify: empty gallery");
  RankedMatches out;
  out.reserve(gallery.size());
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    const auto& entry = gallery.entries()[i];
    out.push_back({entry.subject_id, cosine_distance(probe, entry.feature), i});
  }
  std::stable_sort(out.begin(), out.end(), [](const Match& a, const Match& b) { return a.distance < b.distance; });
  return out;
}

std::size_t rank_of(const ProbeResult& result) {
  for (std::size_t i = 0; i < result.matches.size(); ++i)
    if (result.matches[i].subject_id == result.true_id) return i + 1;
  return 0;
}

std::vector<double> cmc(const std::vector<ProbeResult>& results, std::size_t max_rank) {
  if (results.empty()) throw ContractViolation("cmc: no probe results");
  if (max_rank == 0) throw ContractViolation("cmc: max_rank must be >= 1");
  std::vector<std::size_t> hits(max_rank, 0);
  for (const ProbeResult& r : results) {
    const std::size_t rank = rank_of(r);
    if (rank == 0)
      throw AccountingError("cmc: probe '" + r.probe_name + "' has true id '" + r.true_id +
                            "' which is not in the gallery");
    if (rank <= max_rank) ++hits[rank - 1];
  }
  std::vector<double> curve(max_rank);
  std::size_t cumulative = 0;
  for (std::size_t r = 0; r < max_rank; ++r) {
    cumulative += hits[r];
    curve[r] = static_cast<double>(cumulative) / static_cast<double>(results.size());
  }
  return curve;
}

std::vector<RocPoint> roc(const std::vector<double>& genuine, const std::vector<double>& impostor, int thresholds) {
  if (genuine.empty() || impostor.empty()) throw ContractViolation("roc: score lists must be non-empty");
  if (thresholds < 2) throw ContractViolation("roc: need at least 2 thresholds");
  std::vector<double> g = genuine, im = impostor;
  std::sort(g.begin(), g.end());
  std::sort(im.begin(), im.end());
  const double lo = std::min(g.front(), im.front());
  const double hi = std::max(g.back(), im.back());

  std::vector<RocPoint> curve;
  curve.reserve(static_cast<std::size_t>(thresholds));
  for (int i = 0; i < thresholds; ++i) {
    // Last threshold pinned to hi so the curve always ends at (1, 1).
    const double t = i + 1 == thresholds ? hi : lo + (hi - lo) * i / (thresholds - 1);
    const auto ng = std::upper_bound(g.begin(), g.end(), t) - g.begin();
    const auto ni = std::upper_bound(im.begin(), im.end(), t) - im.begin();
    curve.push_back({t, static_cast<double>(ni) / static_cast<double>(im.size()),
                     static_cast<double>(ng) / static_cast<double>(g.size())});
  }
  return curve;
}

}  // namespace facepipe
