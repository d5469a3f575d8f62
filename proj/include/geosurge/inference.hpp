#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "geosurge/geodesy.hpp"
#include "geosurge/partition.hpp"
#include "geosurge/tensor.hpp"

namespace geosurge::inference {

// How per-level similarities become the per-level factor of the joint score.
// kSoftmax (default) runs each level's cosine similarities through a softmax
// at the level's learned temperature, keeping the product positive.
// kRawProduct multiplies the raw cosines clamped at zero; diagnostic only.
enum class ScoreMode { kSoftmax, kRawProduct };

struct HierPrediction {
  std::vector<std::pair<geodesy::CellId, double>> ranked;  // descending score
  geodesy::CellId cell;
  geodesy::GeoPoint location;
  double joint_score = 0;
  std::vector<std::vector<double>> level_probs;  // filled on request
};

// Decoding rule: the cell's precomputed decoded location if present, else the
// spherical mean of listed member locations, else the cell center.
geodesy::GeoPoint decode_location(const partition::CellEntry& cell,
                                  std::span<const geodesy::GeoPoint> member_locations = {});

// Scores every finest cell by combining its own similarity with those of all
// its ancestors. Read-only after construction; safe for parallel queries.
class HierScorer {
 public:
  HierScorer(const partition::PartitionHierarchy& hierarchy,
             std::vector<autodiff::Tensor<double>> level_embeddings, std::vector<double> taus,
             ScoreMode mode = ScoreMode::kSoftmax);

  size_t level_count() const { return embeds_.size(); }
  size_t finest_count() const { return finest_cells_.size(); }
  const std::vector<geodesy::CellId>& finest_cells() const { return finest_cells_; }

  // Cosine similarity of v against every cell embedding of one level.
  std::vector<double> level_scores(std::span<const double> v, size_t level) const;

  // Joint score per finest cell (canonical order), renormalized to sum 1.
  std::vector<double> hierarchical_scores(std::span<const double> v) const;

  HierPrediction predict(std::span<const double> v, bool want_level_probs = false) const;
  HierPrediction predict_multi(std::span<const std::vector<double>> features) const;

 private:
  std::vector<double> level_probs(std::span<const double> sims, size_t level) const;
  HierPrediction from_joint(std::vector<double> joint) const;

  std::vector<autodiff::Tensor<double>> embeds_;  // normalized rows
  std::vector<double> taus_;
  std::vector<geodesy::CellId> finest_cells_;
  std::vector<std::vector<size_t>> ancestor_rows_;  // [finest][level]
  std::vector<geodesy::GeoPoint> finest_locations_;
  ScoreMode mode_;
};

}  // namespace geosurge::inference
