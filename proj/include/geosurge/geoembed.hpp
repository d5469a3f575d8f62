#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "geosurge/autodiff.hpp"
#include "geosurge/error.hpp"
#include "geosurge/geodesy.hpp"
#include "geosurge/partition.hpp"
#include "geosurge/rng.hpp"

namespace geosurge::geoembed {

inline constexpr double kInitialTau = 0.07;

// One learnable matrix per hierarchy level plus the level's temperature,
// parameterized as log_tau so tau stays positive no matter what the
// optimizer does. Rows are stored unnormalized and normalized on read.
template <typename T>
struct LevelEmbedding {
  std::vector<geodesy::CellId> cells;  // canonical order = row order
  std::map<geodesy::CellId, size_t> index;
  autodiff::Param<T> embedding;  // |cells| x dim
  autodiff::Param<T> log_tau;    // 1x1

  double tau() const { return std::exp(static_cast<double>(log_tau.value[0])); }
};

template <typename T>
struct GeoRepresentation {
  size_t dim = 0;
  std::vector<LevelEmbedding<T>> levels;

  size_t level_count() const { return levels.size(); }

  size_t cell_row(size_t level, const geodesy::CellId& cell) const {
    const LevelEmbedding<T>& le = levels.at(level);
    auto it = le.index.find(cell);
    if (it == le.index.end()) {
      throw DataError("geoembed: unknown cell " + cell.to_string() + " at level " +
                      std::to_string(level));
    }
    return it->second;
  }

  // The normalized row for one cell: this is g.
  autodiff::Tensor<T> lookup_normalized(size_t level, const geodesy::CellId& cell) const {
    size_t row = cell_row(level, cell);
    const autodiff::Tensor<T>& E = levels[level].embedding.value;
    autodiff::Tensor<T> out(1, dim);
    T s{0};
    for (size_t j = 0; j < dim; ++j) s += E.at(row, j) * E.at(row, j);
    T r = std::max(std::sqrt(s), static_cast<T>(1e-12));
    for (size_t j = 0; j < dim; ++j) out.at(0, j) = E.at(row, j) / r;
    return out;
  }

  // All rows normalized, in canonical cell order.
  autodiff::Tensor<T> all_normalized(size_t level) const {
    const autodiff::Tensor<T>& E = levels.at(level).embedding.value;
    autodiff::Tensor<T> out(E.rows(), dim);
    for (size_t i = 0; i < E.rows(); ++i) {
      T s{0};
      for (size_t j = 0; j < dim; ++j) s += E.at(i, j) * E.at(i, j);
      T r = std::max(std::sqrt(s), static_cast<T>(1e-12));
      for (size_t j = 0; j < dim; ++j) out.at(i, j) = E.at(i, j) / r;
    }
    return out;
  }

  size_t parameter_count() const {
    size_t n = 0;
    for (const LevelEmbedding<T>& le : levels) {
      n += le.embedding.value.size() + le.log_tau.value.size();
    }
    return n;
  }

  std::vector<autodiff::Param<T>*> params() {
    std::vector<autodiff::Param<T>*> out;
    for (LevelEmbedding<T>& le : levels) {
      out.push_back(&le.embedding);
      out.push_back(&le.log_tau);
    }
    return out;
  }
};

// Gaussian init with sigma 1/sqrt(dim); log_tau = ln(0.07) per level.
template <typename T>
GeoRepresentation<T> init_embeddings(const partition::PartitionHierarchy& h, size_t dim,
                                     uint64_t seed) {
  if (dim == 0) throw ConfigError("geoembed: embedding dim must be positive");
  GeoRepresentation<T> rep;
  rep.dim = dim;
  Rng rng(Rng::mix(seed, 0x67656f65ULL));
  double sigma = 1.0 / std::sqrt(static_cast<double>(dim));
  for (size_t l = 0; l < h.levels.size(); ++l) {
    LevelEmbedding<T> le;
    for (const partition::CellEntry& e : h.levels[l].cells) {
      le.index.emplace(e.id, le.cells.size());
      le.cells.push_back(e.id);
    }
    autodiff::Tensor<T> E(le.cells.size(), dim);
    for (size_t k = 0; k < E.size(); ++k) E[k] = static_cast<T>(rng.normal() * sigma);
    std::string pre = "geo/level_" + std::to_string(l) + "/";
    le.embedding = autodiff::Param<T>(pre + "embedding", std::move(E));
    le.log_tau = autodiff::Param<T>(
        pre + "log_tau", autodiff::Tensor<T>::scalar(static_cast<T>(std::log(kInitialTau))));
    rep.levels.push_back(std::move(le));
  }
  return rep;
}

}  // namespace geosurge::geoembed
