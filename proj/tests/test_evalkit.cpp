#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "geosurge/error.hpp"
#include "geosurge/evalkit.hpp"
#include "geosurge/rng.hpp"

using namespace geosurge;
using namespace geosurge::evalkit;
using geodesy::GeoPoint;

namespace {

std::vector<EvalRecord> random_records(Rng& rng, size_t n) {
  std::vector<EvalRecord> out;
  for (size_t i = 0; i < n; ++i) {
    GeoPoint truth(rng.uniform(-80, 80), rng.uniform(-180, 180));
    GeoPoint pred(rng.uniform(-80, 80), rng.uniform(-180, 180));
    out.push_back(make_record("q" + std::to_string(i), pred, truth));
  }
  return out;
}

}  // namespace

TEST_CASE("exact predictions hit every threshold") {
  std::vector<EvalRecord> recs;
  for (int i = 0; i < 5; ++i) {
    GeoPoint p(10.0 * i - 20.0, 30.0 * i - 60.0);
    recs.push_back(make_record("q" + std::to_string(i), p, p));
  }
  ThresholdReport rep = gcd_accuracy(recs, kDefaultThresholdsKm);
  for (double f : rep.fractions) CHECK(f == 1.0);
  CHECK(rep.count == 5);
}

TEST_CASE("a single record at ~10 km error splits the thresholds") {
  // ~0.09 degrees of latitude is ~10 km.
  std::vector<EvalRecord> recs = {make_record("q", GeoPoint(0.09, 0), GeoPoint(0, 0))};
  CHECK(recs[0].gcd_km == doctest::Approx(10.0).epsilon(0.01));
  ThresholdReport rep = gcd_accuracy(recs, kDefaultThresholdsKm);
  CHECK(rep.fractions[0] == 0.0);  // 1 km
  CHECK(rep.fractions[1] == 1.0);  // 25 km
  CHECK(rep.fractions[2] == 1.0);
  CHECK(rep.fractions[3] == 1.0);
  CHECK(rep.fractions[4] == 1.0);
}

TEST_CASE("boundary is inclusive") {
  std::vector<EvalRecord> recs = {make_record("q", GeoPoint(0, 0), GeoPoint(0, 0))};
  recs[0].gcd_km = 25.0;
  std::vector<double> thresholds = {25.0};
  CHECK(gcd_accuracy(recs, thresholds).fractions[0] == 1.0);
}

TEST_CASE("empty inputs and bad thresholds are errors") {
  std::vector<EvalRecord> none;
  CHECK_THROWS_AS(gcd_accuracy(none, kDefaultThresholdsKm), DataError);
  Rng rng(1);
  std::vector<EvalRecord> recs = random_records(rng, 3);
  std::vector<double> decreasing = {100.0, 10.0};
  CHECK_THROWS_AS(gcd_accuracy(recs, decreasing), ConfigError);
}

TEST_CASE("fractions are monotone and order-invariant on random data") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<EvalRecord> recs = random_records(rng, 50 + rng.below(200));
    ThresholdReport rep = gcd_accuracy(recs, kDefaultThresholdsKm);
    for (size_t i = 1; i < rep.fractions.size(); ++i) {
      CHECK(rep.fractions[i] >= rep.fractions[i - 1]);
    }
    // Naive per-record loop oracle.
    for (size_t ti = 0; ti < rep.thresholds_km.size(); ++ti) {
      size_t within = 0;
      for (const EvalRecord& r : recs) {
        if (geodesy::haversine_km(r.predicted, r.truth) <= rep.thresholds_km[ti]) ++within;
      }
      CHECK(rep.fractions[ti] == doctest::Approx(double(within) / recs.size()).epsilon(1e-12));
    }
    // Reversing record order changes nothing.
    std::vector<EvalRecord> rev(recs.rbegin(), recs.rend());
    ThresholdReport rep2 = gcd_accuracy(rev, kDefaultThresholdsKm);
    CHECK(rep.fractions == rep2.fractions);
  }
}

TEST_CASE("json render round trip is stable") {
  Rng rng(11);
  std::vector<EvalRecord> recs = random_records(rng, 40);
  ThresholdReport rep = gcd_accuracy(recs, kDefaultThresholdsKm);
  std::string json1 = render_report(rep, ReportFormat::kJson);
  ThresholdReport back = report_from_json(nlohmann::json::parse(json1));
  CHECK(render_report(back, ReportFormat::kJson) == json1);
}

TEST_CASE("csv has one row per threshold plus a header") {
  Rng rng(13);
  std::vector<EvalRecord> recs = random_records(rng, 10);
  std::string csv = render_report(gcd_accuracy(recs, kDefaultThresholdsKm), ReportFormat::kCsv);
  size_t lines = 0;
  for (char c : csv) {
    if (c == '\n') ++lines;
  }
  CHECK(lines == 1 + kDefaultThresholdsKm.size());
  CHECK(csv.rfind("threshold_km,fraction\n", 0) == 0);
}

TEST_CASE("text table runs street through continent in order") {
  Rng rng(17);
  std::vector<EvalRecord> recs = random_records(rng, 10);
  std::string text = render_report(gcd_accuracy(recs, kDefaultThresholdsKm), ReportFormat::kText);
  size_t street = text.find("Street");
  size_t city = text.find("City");
  size_t region = text.find("Region");
  size_t country = text.find("Country");
  size_t continent = text.find("Continent");
  REQUIRE(street != std::string::npos);
  CHECK(street < city);
  CHECK(city < region);
  CHECK(region < country);
  CHECK(country < continent);
}

TEST_CASE("format parsing") {
  CHECK(parse_report_format("text") == ReportFormat::kText);
  CHECK(parse_report_format("csv") == ReportFormat::kCsv);
  CHECK(parse_report_format("json") == ReportFormat::kJson);
  CHECK_THROWS_AS(parse_report_format("xml"), ConfigError);
}

TEST_CASE("csv reading and joining") {
  std::string dir = "/tmp/geosurge_evalkit";
  std::filesystem::create_directories(dir);
  {
    std::ofstream pred(dir + "/pred.csv");
    pred << "query_id,lat,lon\nq1,10.5,20.25\nq2,-33.0,151.2\n";
    std::ofstream truth(dir + "/truth.csv");
    truth << "query_id,lat,lon\nq2,-33.1,151.3\nq1,10.5,20.25\nq3,0,0\n";
  }
  auto preds = read_location_csv(dir + "/pred.csv");
  auto truth = read_location_csv(dir + "/truth.csv");
  REQUIRE(preds.size() == 2);
  REQUIRE(truth.size() == 3);
  std::vector<EvalRecord> joined = join_predictions(preds, truth);
  REQUIRE(joined.size() == 2);
  CHECK(joined[0].query_id == "q1");
  CHECK(joined[0].gcd_km == 0.0);
  CHECK(joined[1].gcd_km > 0.0);

  // A prediction without truth is an error that names the id.
  {
    std::ofstream pred(dir + "/pred2.csv");
    pred << "query_id,lat,lon\nq1,1,1\nqMISSING,2,2\n";
  }
  auto preds2 = read_location_csv(dir + "/pred2.csv");
  CHECK_THROWS_WITH_AS(join_predictions(preds2, truth),
                       "predictions without ground truth: qMISSING", DataError);
}

TEST_CASE("csv header and row validation") {
  std::string dir = "/tmp/geosurge_evalkit";
  std::filesystem::create_directories(dir);
  {
    std::ofstream bad(dir + "/bad_header.csv");
    bad << "id,lat,lon\nq1,1,1\n";
  }
  CHECK_THROWS_AS(read_location_csv(dir + "/bad_header.csv"), DataError);
  {
    std::ofstream bad(dir + "/bad_row.csv");
    bad << "query_id,lat,lon\nq1,1\n";
  }
  CHECK_THROWS_AS(read_location_csv(dir + "/bad_row.csv"), DataError);
  CHECK_THROWS_AS(read_location_csv(dir + "/does_not_exist.csv"), DataError);
}
