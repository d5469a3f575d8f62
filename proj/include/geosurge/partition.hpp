#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "geosurge/geodesy.hpp"

namespace geosurge::partition {

// One geotagged training record; feature_ref indexes the feature store row
// the sample came from.
struct Sample {
  std::string id;
  geodesy::GeoPoint location;
  size_t feature_ref = 0;
};

struct CellEntry {
  geodesy::CellId id;
  std::vector<std::string> member_ids;  // sorted
  size_t member_count = 0;
  std::optional<geodesy::GeoPoint> decoded_location;
};

// Non-overlapping geocells, each holding between tau_min and tau_max samples.
// Cells are kept in canonical CellId order.
struct Partition {
  size_t tau_min = 0;
  size_t tau_max = 0;
  std::vector<CellEntry> cells;

  std::optional<size_t> find(const geodesy::CellId& c) const;
};

// Ordered coarsest -> finest; shared tau_min, strictly decreasing tau_max.
// parent_links maps every finest cell to its ancestor at every level
// (coarsest first, the finest cell itself last).
struct PartitionHierarchy {
  size_t tau_min = 0;
  std::vector<size_t> schedule;
  std::vector<Partition> levels;
  std::map<geodesy::CellId, std::vector<geodesy::CellId>> parent_links;
};

struct CoverageLevel {
  size_t tau_max = 0;
  size_t cell_count = 0;
  size_t min_members = 0;
  size_t median_members = 0;
  size_t max_members = 0;
  double covered_fraction = 0.0;
};

struct CoverageReport {
  size_t sample_count = 0;
  std::vector<CoverageLevel> levels;
  // Fraction of samples assigned to a kept cell at every level at once.
  double fully_covered_fraction = 0.0;
  // Samples whose finest-level cell was discarded; these are dropped from
  // training entirely so the per-level loss stays defined for every sample.
  size_t excluded_samples = 0;
};

Partition build_partition(std::span<const Sample> samples, size_t tau_min, size_t tau_max);

PartitionHierarchy build_hierarchy(std::span<const Sample> samples, size_t tau_min,
                                   std::span<const size_t> tau_max_schedule);

// The unique kept cell containing p, if any. Absence is a value, not an error.
std::optional<geodesy::CellId> assign(const geodesy::GeoPoint& p, const Partition& part);

CoverageReport coverage_report(const PartitionHierarchy& h, std::span<const Sample> samples);

nlohmann::json hierarchy_to_json(const PartitionHierarchy& h, bool include_member_ids);
PartitionHierarchy hierarchy_from_json(const nlohmann::json& doc);

nlohmann::json coverage_to_json(const CoverageReport& r);

}  // namespace geosurge::partition
