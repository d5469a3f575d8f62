#include "geosurge/evalkit.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "geosurge/error.hpp"

namespace geosurge::evalkit {

EvalRecord make_record(std::string query_id, geodesy::GeoPoint predicted,
                       geodesy::GeoPoint truth) {
  double d = geodesy::haversine_km(predicted, truth);
  return EvalRecord{std::move(query_id), predicted, truth, d};
}

ThresholdReport gcd_accuracy(std::span<const EvalRecord> records,
                             std::span<const double> thresholds_km) {
  if (records.empty()) throw DataError("gcd_accuracy: no records");
  if (thresholds_km.empty()) throw ConfigError("gcd_accuracy: no thresholds");
  for (size_t i = 0; i < thresholds_km.size(); ++i) {
    if (thresholds_km[i] <= 0 || (i > 0 && thresholds_km[i] <= thresholds_km[i - 1])) {
      throw ConfigError("gcd_accuracy: thresholds must be positive and strictly increasing");
    }
  }
  ThresholdReport rep;
  rep.thresholds_km.assign(thresholds_km.begin(), thresholds_km.end());
  rep.count = records.size();
  for (double t : thresholds_km) {
    size_t within = 0;
    for (const EvalRecord& r : records) {
      if (r.gcd_km <= t) ++within;
    }
    rep.fractions.push_back(static_cast<double>(within) / static_cast<double>(records.size()));
  }
  return rep;
}

ReportFormat parse_report_format(const std::string& name) {
  if (name == "text") return ReportFormat::kText;
  if (name == "csv") return ReportFormat::kCsv;
  if (name == "json") return ReportFormat::kJson;
  throw ConfigError("unknown report format \"" + name + "\" (text|csv|json)");
}

namespace {

const char* kLevelNames[] = {"Street", "City", "Region", "Country", "Continent"};

std::string threshold_label(double km, size_t i, size_t n) {
  char buf[64];
  if (n == 5 && i < 5) {
    std::snprintf(buf, sizeof(buf), "%s (%g km)", kLevelNames[i], km);
  } else {
    std::snprintf(buf, sizeof(buf), "<= %g km", km);
  }
  return buf;
}

}  // namespace

std::string render_report(const ThresholdReport& report, ReportFormat format) {
  switch (format) {
    case ReportFormat::kJson: {
      nlohmann::json doc;
      doc["count"] = report.count;
      doc["thresholds_km"] = report.thresholds_km;
      doc["fractions"] = report.fractions;
      return doc.dump(2) + "\n";
    }
    case ReportFormat::kCsv: {
      std::string out = "threshold_km,fraction\n";
      char buf[64];
      for (size_t i = 0; i < report.thresholds_km.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%g,%.6f\n", report.thresholds_km[i],
                      report.fractions[i]);
        out += buf;
      }
      return out;
    }
    case ReportFormat::kText: {
      std::string out;
      char buf[96];
      std::snprintf(buf, sizeof(buf), "queries: %zu\n", report.count);
      out += buf;
      for (size_t i = 0; i < report.thresholds_km.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%-20s %6.1f%%\n",
                      threshold_label(report.thresholds_km[i], i,
                                      report.thresholds_km.size()).c_str(),
                      100.0 * report.fractions[i]);
        out += buf;
      }
      return out;
    }
  }
  throw ConfigError("render_report: bad format");
}

ThresholdReport report_from_json(const nlohmann::json& doc) {
  try {
    ThresholdReport rep;
    rep.count = doc.at("count").get<size_t>();
    rep.thresholds_km = doc.at("thresholds_km").get<std::vector<double>>();
    rep.fractions = doc.at("fractions").get<std::vector<double>>();
    if (rep.fractions.size() != rep.thresholds_km.size()) {
      throw DataError("report: fraction/threshold count mismatch");
    }
    return rep;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("report: malformed document: ") + e.what());
  }
}

std::vector<CsvRow> read_location_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "query_id,lat,lon") {
    throw DataError(path + ": expected header \"query_id,lat,lon\", got \"" + line + "\"");
  }
  std::vector<CsvRow> rows;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    size_t c1 = line.find(',');
    size_t c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    if (c2 == std::string::npos) {
      throw DataError(path + ":" + std::to_string(lineno) + ": expected 3 fields");
    }
    try {
      double lat = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
      double lon = std::stod(line.substr(c2 + 1));
      rows.push_back({line.substr(0, c1), geodesy::GeoPoint(lat, lon)});
    } catch (const std::exception&) {
      throw DataError(path + ":" + std::to_string(lineno) + ": malformed row");
    }
  }
  return rows;
}

std::vector<EvalRecord> join_predictions(std::span<const CsvRow> predictions,
                                         std::span<const CsvRow> truth) {
  std::map<std::string, geodesy::GeoPoint> truth_by_id;
  for (const CsvRow& r : truth) {
    if (!truth_by_id.emplace(r.query_id, r.location).second) {
      throw DataError("duplicate truth id " + r.query_id);
    }
  }
  std::vector<std::string> missing;
  std::vector<EvalRecord> out;
  out.reserve(predictions.size());
  for (const CsvRow& p : predictions) {
    auto it = truth_by_id.find(p.query_id);
    if (it == truth_by_id.end()) {
      missing.push_back(p.query_id);
      continue;
    }
    out.push_back(make_record(p.query_id, p.location, it->second));
  }
  if (!missing.empty()) {
    std::string msg = "predictions without ground truth:";
    size_t show = std::min<size_t>(missing.size(), 10);
    for (size_t i = 0; i < show; ++i) msg += " " + missing[i];
    if (missing.size() > show) {
      msg += " (+" + std::to_string(missing.size() - show) + " more)";
    }
    throw DataError(msg);
  }
  return out;
}

}  // namespace geosurge::evalkit
