#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "geosurge/geodesy.hpp"

namespace geosurge::evalkit {

// Default thresholds, street through continent.
inline const std::vector<double> kDefaultThresholdsKm = {1, 25, 200, 750, 2500};

struct EvalRecord {
  std::string query_id;
  geodesy::GeoPoint predicted;
  geodesy::GeoPoint truth;
  double gcd_km = 0;
};

EvalRecord make_record(std::string query_id, geodesy::GeoPoint predicted, geodesy::GeoPoint truth);

struct ThresholdReport {
  std::vector<double> thresholds_km;
  std::vector<double> fractions;  // within-threshold fraction, boundary inclusive
  size_t count = 0;
};

ThresholdReport gcd_accuracy(std::span<const EvalRecord> records,
                             std::span<const double> thresholds_km);

enum class ReportFormat { kText, kCsv, kJson };
ReportFormat parse_report_format(const std::string& name);

std::string render_report(const ThresholdReport& report, ReportFormat format);
ThresholdReport report_from_json(const nlohmann::json& doc);

// Reads a "query_id,lat,lon" CSV (header required).
struct CsvRow {
  std::string query_id;
  geodesy::GeoPoint location;
};
std::vector<CsvRow> read_location_csv(const std::string& path);

// Joins predictions against ground truth on query_id. Every prediction must
// have a truth row; missing ids raise a DataError listing them.
std::vector<EvalRecord> join_predictions(std::span<const CsvRow> predictions,
                                         std::span<const CsvRow> truth);

}  // namespace geosurge::evalkit
