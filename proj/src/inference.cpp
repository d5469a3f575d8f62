#include "geosurge/inference.hpp"

#include <algorithm>
#include <cmath>

#include "geosurge/error.hpp"

namespace geosurge::inference {

using geodesy::CellId;
using geodesy::GeoPoint;

GeoPoint decode_location(const partition::CellEntry& cell,
                         std::span<const GeoPoint> member_locations) {
  if (cell.decoded_location) return *cell.decoded_location;
  if (!member_locations.empty()) {
    auto mean = geodesy::spherical_mean(member_locations);
    if (mean) return *mean;
  }
  return geodesy::cell_center(cell.id);
}

HierScorer::HierScorer(const partition::PartitionHierarchy& hierarchy,
                       std::vector<autodiff::Tensor<double>> level_embeddings,
                       std::vector<double> taus, ScoreMode mode)
    : taus_(std::move(taus)), mode_(mode) {
  size_t levels = hierarchy.levels.size();
  if (level_embeddings.size() != levels || taus_.size() != levels || levels == 0) {
    throw DataError("HierScorer: level count mismatch between hierarchy and representation");
  }
  size_t dim = level_embeddings[0].cols();
  for (size_t l = 0; l < levels; ++l) {
    const auto& E = level_embeddings[l];
    if (E.rows() != hierarchy.levels[l].cells.size() || E.cols() != dim) {
      throw DataError("HierScorer: embedding shape " + E.shape_str() + " at level " +
                      std::to_string(l) + " does not match the partition");
    }
    if (taus_[l] <= 0) throw DataError("HierScorer: non-positive temperature");
    autodiff::Tensor<double> N(E.rows(), E.cols());
    for (size_t i = 0; i < E.rows(); ++i) {
      double s = 0;
      for (size_t j = 0; j < dim; ++j) s += E.at(i, j) * E.at(i, j);
      double r = std::max(std::sqrt(s), 1e-12);
      for (size_t j = 0; j < dim; ++j) N.at(i, j) = E.at(i, j) / r;
    }
    embeds_.push_back(std::move(N));
  }

  // Per-level row index maps.
  std::vector<std::map<CellId, size_t>> row_of(levels);
  for (size_t l = 0; l < levels; ++l) {
    for (size_t i = 0; i < hierarchy.levels[l].cells.size(); ++i) {
      row_of[l].emplace(hierarchy.levels[l].cells[i].id, i);
    }
  }
  for (const partition::CellEntry& fine : hierarchy.levels.back().cells) {
    auto it = hierarchy.parent_links.find(fine.id);
    if (it == hierarchy.parent_links.end() || it->second.size() != levels) {
      throw IntegrityError("HierScorer: finest cell " + fine.id.to_string() +
                           " has no complete ancestor chain");
    }
    std::vector<size_t> rows;
    rows.reserve(levels);
    for (size_t l = 0; l < levels; ++l) {
      auto rit = row_of[l].find(it->second[l]);
      if (rit == row_of[l].end()) {
        throw IntegrityError("HierScorer: ancestor " + it->second[l].to_string() +
                             " of " + fine.id.to_string() + " missing from level " +
                             std::to_string(l));
      }
      rows.push_back(rit->second);
    }
    ancestor_rows_.push_back(std::move(rows));
    finest_cells_.push_back(fine.id);
    finest_locations_.push_back(decode_location(fine));
  }
}

namespace {

std::vector<double> normalize_input(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x * x;
  double r = std::max(std::sqrt(s), 1e-12);
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= r;
  return out;
}

}  // namespace

std::vector<double> HierScorer::level_scores(std::span<const double> v, size_t level) const {
  const autodiff::Tensor<double>& E = embeds_.at(level);
  if (v.size() != E.cols()) {
    throw DataError("level_scores: feature dim " + std::to_string(v.size()) +
                    " does not match embedding dim " + std::to_string(E.cols()));
  }
  std::vector<double> vn = normalize_input(v);
  std::vector<double> out(E.rows(), 0.0);
  for (size_t i = 0; i < E.rows(); ++i) {
    double s = 0;
    for (size_t j = 0; j < E.cols(); ++j) s += E.at(i, j) * vn[j];
    out[i] = s;
  }
  return out;
}

std::vector<double> HierScorer::level_probs(std::span<const double> sims, size_t level) const {
  std::vector<double> p(sims.begin(), sims.end());
  if (mode_ == ScoreMode::kSoftmax) {
    double tau = taus_[level];
    double m = *std::max_element(p.begin(), p.end());
    double sum = 0;
    for (double& x : p) {
      x = std::exp((x - m) / tau);
      sum += x;
    }
    for (double& x : p) x /= sum;
  } else {
    for (double& x : p) x = std::max(x, 0.0);
  }
  return p;
}

std::vector<double> HierScorer::hierarchical_scores(std::span<const double> v) const {
  std::vector<std::vector<double>> probs;
  probs.reserve(embeds_.size());
  for (size_t l = 0; l < embeds_.size(); ++l) {
    probs.push_back(level_probs(level_scores(v, l), l));
  }
  std::vector<double> joint(finest_cells_.size(), 1.0);
  for (size_t r = 0; r < joint.size(); ++r) {
    for (size_t l = 0; l < probs.size(); ++l) joint[r] *= probs[l][ancestor_rows_[r][l]];
  }
  double sum = 0;
  for (double x : joint) sum += x;
  if (sum > 0) {
    for (double& x : joint) x /= sum;
  } else {
    std::fill(joint.begin(), joint.end(), 1.0 / double(joint.size()));
  }
  return joint;
}

HierPrediction HierScorer::from_joint(std::vector<double> joint) const {
  HierPrediction pred;
  pred.ranked.reserve(joint.size());
  for (size_t r = 0; r < joint.size(); ++r) pred.ranked.emplace_back(finest_cells_[r], joint[r]);
  std::stable_sort(pred.ranked.begin(), pred.ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  size_t win = 0;
  for (size_t r = 1; r < joint.size(); ++r) {
    if (joint[r] > joint[win]) win = r;
  }
  pred.cell = finest_cells_[win];
  pred.location = finest_locations_[win];
  pred.joint_score = joint[win];
  return pred;
}

HierPrediction HierScorer::predict(std::span<const double> v, bool want_level_probs) const {
  HierPrediction pred = from_joint(hierarchical_scores(v));
  if (want_level_probs) {
    for (size_t l = 0; l < embeds_.size(); ++l) {
      pred.level_probs.push_back(level_probs(level_scores(v, l), l));
    }
  }
  return pred;
}

HierPrediction HierScorer::predict_multi(std::span<const std::vector<double>> features) const {
  if (features.empty()) throw DataError("predict_multi: no features");
  std::vector<double> mean(finest_cells_.size(), 0.0);
  for (const std::vector<double>& f : features) {
    std::vector<double> joint = hierarchical_scores(f);
    for (size_t r = 0; r < mean.size(); ++r) mean[r] += joint[r];
  }
  for (double& x : mean) x /= double(features.size());
  return from_joint(std::move(mean));
}

}  // namespace geosurge::inference
