#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

namespace geosurge::geodesy {

inline constexpr double kEarthRadiusKm = 6371.0;  // mean radius
inline constexpr int kMaxDepth = 30;

// Latitude/longitude in degrees. lat in [-90, 90], lon normalized to
// (-180, 180] on construction.
struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;

  GeoPoint() = default;
  GeoPoint(double lat_deg, double lon_deg);
};

struct UnitVec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  static UnitVec3 from_point(const GeoPoint& p);
  GeoPoint to_point() const;
};

// A cell of the cube-face quadtree: face 0..5, then one quadrant digit (0..3)
// per subdivision level. Faces 0..5 are +X, +Y, +Z, -X, -Y, -Z. Digits are
// packed two bits each, left-aligned, so numeric path order matches
// lexicographic digit order.
class CellId {
 public:
  CellId() = default;
  explicit CellId(int face);
  CellId(int face, std::span<const int> digits);

  int face() const { return face_; }
  int depth() const { return depth_; }
  int digit(int k) const { return static_cast<int>((path_ >> shift(k)) & 3u); }

  CellId child(int quadrant) const;
  CellId parent() const;  // error on depth 0
  bool is_prefix_of(const CellId& other) const;

  // Text form "F/dddd...", e.g. "2/013"; depth 0 renders as "F/".
  std::string to_string() const;
  static CellId parse(const std::string& text);

  bool operator==(const CellId& o) const {
    return face_ == o.face_ && depth_ == o.depth_ && path_ == o.path_;
  }
  // Canonical order: face, then digit string lexicographically (prefixes
  // first). Used everywhere a partition is serialized or iterated.
  bool operator<(const CellId& o) const {
    if (face_ != o.face_) return face_ < o.face_;
    if (path_ != o.path_) return path_ < o.path_;
    return depth_ < o.depth_;
  }

 private:
  static int shift(int k) { return 2 * (kMaxDepth - 1 - k); }
  int8_t face_ = 0;
  int8_t depth_ = 0;
  uint64_t path_ = 0;
};

struct FaceCoord {
  int face = 0;
  double u = 0.0, v = 0.0;  // gnomonic coordinates in [-1, 1]
};

double haversine_km(const GeoPoint& a, const GeoPoint& b);

// Face picked by the dominant-magnitude axis of the unit vector; ties go to
// the lowest face index.
FaceCoord to_face_coord(const GeoPoint& p);
GeoPoint from_face_coord(const FaceCoord& fc);

CellId cell_id_at_level(const GeoPoint& p, int depth);
GeoPoint cell_center(const CellId& c);
bool cell_contains(const CellId& c, const GeoPoint& p);
CellId parent(const CellId& c);

// Normalized mean of the unit vectors; nullopt when the mean direction is
// degenerate (norm < 1e-6).
std::optional<GeoPoint> spherical_mean(std::span<const GeoPoint> points);

}  // namespace geosurge::geodesy
