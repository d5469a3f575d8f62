#include "geosurge/partition.hpp"

#include <algorithm>
#include <array>
#include <numeric>

#include "geosurge/error.hpp"

namespace geosurge::partition {

using geodesy::CellId;
using geodesy::GeoPoint;

namespace {

struct Leaf {
  CellId cell;  // depth-30 cell of the sample
  size_t sample;
};

// Splits cells with more than tau_max members into their four children,
// depth-first in digit order so kept leaves come out in canonical order.
void split_recursive(const CellId& cell, std::vector<size_t>& members,
                     std::span<const Leaf> leaves, size_t tau_max,
                     std::vector<std::pair<CellId, std::vector<size_t>>>& out) {
  if (members.size() <= tau_max) {
    out.emplace_back(cell, std::move(members));
    return;
  }
  if (cell.depth() >= geodesy::kMaxDepth) {
    throw DataError("build_partition: cell " + cell.to_string() + " still holds " +
                    std::to_string(members.size()) +
                    " samples above tau_max at max depth (duplicate coordinates?)");
  }
  std::array<std::vector<size_t>, 4> buckets;
  int d = cell.depth();
  for (size_t idx : members) {
    buckets[leaves[idx].cell.digit(d)].push_back(idx);
  }
  members.clear();
  for (int q = 0; q < 4; ++q) {
    if (buckets[q].empty()) continue;
    split_recursive(cell.child(q), buckets[q], leaves, tau_max, out);
  }
}

CellEntry make_entry(const CellId& cell, std::vector<size_t>& members,
                     std::span<const Sample> samples) {
  CellEntry e;
  e.id = cell;
  e.member_count = members.size();
  e.member_ids.reserve(members.size());
  for (size_t idx : members) e.member_ids.push_back(samples[idx].id);
  std::sort(e.member_ids.begin(), e.member_ids.end());
  // Decode in sorted-id order so the value depends on the sample set only.
  std::vector<GeoPoint> locs;
  locs.reserve(members.size());
  std::sort(members.begin(), members.end(), [&](size_t a, size_t b) {
    return samples[a].id < samples[b].id;
  });
  for (size_t idx : members) locs.push_back(samples[idx].location);
  auto mean = geodesy::spherical_mean(locs);
  e.decoded_location = mean.has_value() ? *mean : geodesy::cell_center(cell);
  return e;
}

}  // namespace

std::optional<size_t> Partition::find(const CellId& c) const {
  auto it = std::lower_bound(cells.begin(), cells.end(), c,
                             [](const CellEntry& e, const CellId& id) { return e.id < id; });
  if (it == cells.end() || !(it->id == c)) return std::nullopt;
  return static_cast<size_t>(it - cells.begin());
}

Partition build_partition(std::span<const Sample> samples, size_t tau_min, size_t tau_max) {
  if (samples.empty()) throw DataError("build_partition: no samples");
  if (tau_min < 1 || tau_max < tau_min) {
    throw ConfigError("build_partition: need 1 <= tau_min <= tau_max");
  }
  std::vector<Leaf> leaves(samples.size());
  std::array<std::vector<size_t>, 6> by_face;
  for (size_t i = 0; i < samples.size(); ++i) {
    leaves[i] = {geodesy::cell_id_at_level(samples[i].location, geodesy::kMaxDepth), i};
    by_face[leaves[i].cell.face()].push_back(i);
  }
  Partition part;
  part.tau_min = tau_min;
  part.tau_max = tau_max;
  std::vector<std::pair<CellId, std::vector<size_t>>> kept;
  for (int f = 0; f < 6; ++f) {
    if (by_face[f].empty()) continue;
    split_recursive(CellId(f), by_face[f], leaves, tau_max, kept);
  }
  // Counts were taken before any discarding; exclusion is a final filter.
  for (auto& [cell, members] : kept) {
    if (members.size() < tau_min) continue;
    part.cells.push_back(make_entry(cell, members, samples));
  }
  return part;
}

PartitionHierarchy build_hierarchy(std::span<const Sample> samples, size_t tau_min,
                                   std::span<const size_t> schedule) {
  if (schedule.empty()) throw ConfigError("build_hierarchy: empty tau_max schedule");
  for (size_t i = 0; i < schedule.size(); ++i) {
    if (schedule[i] < tau_min) {
      throw ConfigError("build_hierarchy: tau_max " + std::to_string(schedule[i]) +
                        " below tau_min " + std::to_string(tau_min));
    }
    if (i > 0 && schedule[i] >= schedule[i - 1]) {
      throw ConfigError("build_hierarchy: tau_max schedule must be strictly decreasing");
    }
  }
  PartitionHierarchy h;
  h.tau_min = tau_min;
  h.schedule.assign(schedule.begin(), schedule.end());
  for (size_t tau_max : schedule) {
    h.levels.push_back(build_partition(samples, tau_min, tau_max));
  }
  const Partition& finest = h.levels.back();
  for (const CellEntry& fine : finest.cells) {
    std::vector<CellId> chain;
    chain.reserve(h.levels.size());
    for (const Partition& level : h.levels) {
      std::optional<CellId> anc;
      CellId probe(fine.id.face());
      if (level.find(probe)) anc = probe;
      for (int d = 0; d < fine.id.depth() && !anc; ++d) {
        probe = probe.child(fine.id.digit(d));
        if (level.find(probe)) anc = probe;
      }
      if (!anc) {
        throw DataError("build_hierarchy: finest cell " + fine.id.to_string() +
                        " has no ancestor in a coarser level");
      }
      chain.push_back(*anc);
    }
    h.parent_links.emplace(fine.id, std::move(chain));
  }
  return h;
}

std::optional<CellId> assign(const GeoPoint& p, const Partition& part) {
  CellId leaf = geodesy::cell_id_at_level(p, geodesy::kMaxDepth);
  CellId probe(leaf.face());
  if (part.find(probe)) return probe;
  for (int d = 0; d < geodesy::kMaxDepth; ++d) {
    probe = probe.child(leaf.digit(d));
    if (part.find(probe)) return probe;
  }
  return std::nullopt;
}

CoverageReport coverage_report(const PartitionHierarchy& h, std::span<const Sample> samples) {
  CoverageReport r;
  r.sample_count = samples.size();
  std::vector<size_t> covered_levels(samples.size(), 0);
  for (size_t l = 0; l < h.levels.size(); ++l) {
    const Partition& part = h.levels[l];
    CoverageLevel cl;
    cl.tau_max = h.schedule[l];
    cl.cell_count = part.cells.size();
    std::vector<size_t> counts;
    counts.reserve(part.cells.size());
    for (const CellEntry& e : part.cells) counts.push_back(e.member_count);
    if (!counts.empty()) {
      std::sort(counts.begin(), counts.end());
      cl.min_members = counts.front();
      cl.max_members = counts.back();
      cl.median_members = counts[counts.size() / 2];
    }
    size_t covered = 0;
    for (size_t i = 0; i < samples.size(); ++i) {
      if (assign(samples[i].location, part)) {
        ++covered;
        ++covered_levels[i];
      }
    }
    cl.covered_fraction = samples.empty() ? 0.0 : static_cast<double>(covered) / samples.size();
    r.levels.push_back(cl);
  }
  size_t full = 0;
  for (size_t c : covered_levels) {
    if (c == h.levels.size()) ++full;
  }
  r.fully_covered_fraction = samples.empty() ? 0.0 : static_cast<double>(full) / samples.size();
  if (!h.levels.empty()) {
    size_t finest_covered = 0;
    for (const Sample& s : samples) {
      if (assign(s.location, h.levels.back())) ++finest_covered;
    }
    r.excluded_samples = samples.size() - finest_covered;
  }
  return r;
}

nlohmann::json hierarchy_to_json(const PartitionHierarchy& h, bool include_member_ids) {
  nlohmann::json doc;
  doc["format_version"] = 1;
  doc["tau_min"] = h.tau_min;
  doc["schedule"] = h.schedule;
  nlohmann::json levels = nlohmann::json::array();
  for (size_t l = 0; l < h.levels.size(); ++l) {
    nlohmann::json cells = nlohmann::json::array();
    for (const CellEntry& e : h.levels[l].cells) {
      nlohmann::json c;
      c["cell_id"] = e.id.to_string();
      c["member_count"] = e.member_count;
      if (e.decoded_location) {
        c["decoded_location"] = {{"lat", e.decoded_location->lat},
                                 {"lon", e.decoded_location->lon}};
      }
      if (include_member_ids) c["member_ids"] = e.member_ids;
      cells.push_back(std::move(c));
    }
    levels.push_back({{"tau_max", h.schedule[l]}, {"cells", std::move(cells)}});
  }
  doc["levels"] = std::move(levels);
  nlohmann::json links = nlohmann::json::object();
  for (const auto& [fine, chain] : h.parent_links) {
    nlohmann::json arr = nlohmann::json::array();
    for (const CellId& c : chain) arr.push_back(c.to_string());
    links[fine.to_string()] = std::move(arr);
  }
  doc["parent_links"] = std::move(links);
  return doc;
}

PartitionHierarchy hierarchy_from_json(const nlohmann::json& doc) {
  PartitionHierarchy h;
  try {
    h.tau_min = doc.at("tau_min").get<size_t>();
    h.schedule = doc.at("schedule").get<std::vector<size_t>>();
    const auto& levels = doc.at("levels");
    if (levels.size() != h.schedule.size()) {
      throw DataError("hierarchy: level count does not match schedule");
    }
    for (size_t l = 0; l < levels.size(); ++l) {
      Partition part;
      part.tau_min = h.tau_min;
      part.tau_max = h.schedule[l];
      for (const auto& c : levels[l].at("cells")) {
        CellEntry e;
        e.id = CellId::parse(c.at("cell_id").get<std::string>());
        e.member_count = c.at("member_count").get<size_t>();
        if (c.contains("decoded_location")) {
          e.decoded_location = GeoPoint(c["decoded_location"].at("lat").get<double>(),
                                        c["decoded_location"].at("lon").get<double>());
        }
        if (c.contains("member_ids")) {
          e.member_ids = c["member_ids"].get<std::vector<std::string>>();
        }
        part.cells.push_back(std::move(e));
      }
      if (!std::is_sorted(part.cells.begin(), part.cells.end(),
                          [](const CellEntry& a, const CellEntry& b) { return a.id < b.id; })) {
        throw DataError("hierarchy: cells not in canonical order");
      }
      h.levels.push_back(std::move(part));
    }
    for (const auto& [key, arr] : doc.at("parent_links").items()) {
      std::vector<CellId> chain;
      for (const auto& s : arr) chain.push_back(CellId::parse(s.get<std::string>()));
      if (chain.size() != h.levels.size()) {
        throw DataError("hierarchy: parent link for " + key + " has wrong length");
      }
      h.parent_links.emplace(CellId::parse(key), std::move(chain));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("hierarchy: malformed document: ") + e.what());
  }
  return h;
}

nlohmann::json coverage_to_json(const CoverageReport& r) {
  nlohmann::json doc;
  doc["sample_count"] = r.sample_count;
  doc["fully_covered_fraction"] = r.fully_covered_fraction;
  doc["excluded_samples"] = r.excluded_samples;
  nlohmann::json levels = nlohmann::json::array();
  for (const CoverageLevel& l : r.levels) {
    levels.push_back({{"tau_max", l.tau_max},
                      {"cell_count", l.cell_count},
                      {"min_members", l.min_members},
                      {"median_members", l.median_members},
                      {"max_members", l.max_members},
                      {"covered_fraction", l.covered_fraction}});
  }
  doc["levels"] = std::move(levels);
  return doc;
}

}  // namespace geosurge::partition
