#include "geosurge/geodesy.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "geosurge/error.hpp"

namespace geosurge::geodesy {

namespace {

constexpr double kPi = std::numbers::pi;

double deg2rad(double d) { return d * kPi / 180.0; }
double rad2deg(double r) { return r * 180.0 / kPi; }

double normalize_lon(double lon) {
  lon = std::fmod(lon, 360.0);
  if (lon <= -180.0) lon += 360.0;
  if (lon > 180.0) lon -= 360.0;
  return lon;
}

}  // namespace

GeoPoint::GeoPoint(double lat_deg, double lon_deg) {
  if (!std::isfinite(lat_deg) || !std::isfinite(lon_deg)) {
    throw DataError("GeoPoint: non-finite coordinate");
  }
  if (lat_deg < -90.0 || lat_deg > 90.0) {
    throw DataError("GeoPoint: latitude " + std::to_string(lat_deg) +
                    " outside [-90, 90]");
  }
  lat = lat_deg;
  lon = normalize_lon(lon_deg);
}

UnitVec3 UnitVec3::from_point(const GeoPoint& p) {
  double la = deg2rad(p.lat), lo = deg2rad(p.lon);
  return {std::cos(la) * std::cos(lo), std::cos(la) * std::sin(lo),
          std::sin(la)};
}

GeoPoint UnitVec3::to_point() const {
  double lat = rad2deg(std::asin(std::clamp(z, -1.0, 1.0)));
  double lon = rad2deg(std::atan2(y, x));
  return GeoPoint(lat, lon);
}

CellId::CellId(int face) {
  if (face < 0 || face > 5) throw DataError("CellId: face out of range");
  face_ = static_cast<int8_t>(face);
}

CellId::CellId(int face, std::span<const int> digits) : CellId(face) {
  if (digits.size() > static_cast<size_t>(kMaxDepth)) {
    throw DataError("CellId: path longer than max depth");
  }
  for (int d : digits) {
    if (d < 0 || d > 3) throw DataError("CellId: digit out of range");
    *this = child(d);
  }
}

CellId CellId::child(int quadrant) const {
  if (quadrant < 0 || quadrant > 3) throw DataError("CellId: bad quadrant");
  if (depth_ >= kMaxDepth) throw DataError("CellId: max depth exceeded");
  CellId c = *this;
  c.path_ |= static_cast<uint64_t>(quadrant) << shift(depth_);
  c.depth_ = static_cast<int8_t>(depth_ + 1);
  return c;
}

CellId CellId::parent() const {
  if (depth_ == 0) throw DataError("root cell has no parent");
  CellId c = *this;
  c.depth_ = static_cast<int8_t>(depth_ - 1);
  c.path_ &= ~(uint64_t{3} << shift(c.depth_));
  return c;
}

bool CellId::is_prefix_of(const CellId& other) const {
  if (face_ != other.face_ || depth_ > other.depth_) return false;
  if (depth_ == 0) return true;
  uint64_t mask = ~uint64_t{0} << (2 * (kMaxDepth - depth_));
  return (path_ & mask) == (other.path_ & mask);
}

std::string CellId::to_string() const {
  std::string s;
  s.reserve(2 + depth_);
  s += static_cast<char>('0' + face_);
  s += '/';
  for (int k = 0; k < depth_; ++k) s += static_cast<char>('0' + digit(k));
  return s;
}

CellId CellId::parse(const std::string& text) {
  if (text.size() < 2 || text[0] < '0' || text[0] > '5' || text[1] != '/') {
    throw DataError("CellId: malformed id \"" + text + "\"");
  }
  CellId c(text[0] - '0');
  for (size_t i = 2; i < text.size(); ++i) {
    if (text[i] < '0' || text[i] > '3') {
      throw DataError("CellId: malformed id \"" + text + "\"");
    }
    c = c.child(text[i] - '0');
  }
  return c;
}

double haversine_km(const GeoPoint& a, const GeoPoint& b) {
  double la1 = deg2rad(a.lat), la2 = deg2rad(b.lat);
  double dlat = deg2rad(b.lat - a.lat);
  double dlon = deg2rad(b.lon - a.lon);
  double s1 = std::sin(dlat / 2.0);
  double s2 = std::sin(dlon / 2.0);
  double h = s1 * s1 + std::cos(la1) * std::cos(la2) * s2 * s2;
  h = std::clamp(h, 0.0, 1.0);
  return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(h));
}

FaceCoord to_face_coord(const GeoPoint& p) {
  UnitVec3 n = UnitVec3::from_point(p);
  // Signed component toward each face, in face-index order.
  std::array<double, 6> comp = {n.x, n.y, n.z, -n.x, -n.y, -n.z};
  int face = 0;
  for (int f = 1; f < 6; ++f) {
    if (comp[f] > comp[face]) face = f;
  }
  // Ties break to the lowest index.
  for (int f = 0; f < face; ++f) {
    if (comp[f] == comp[face]) {
      face = f;
      break;
    }
  }
  double a = comp[face];  // |dominant axis|, > 0 on the unit sphere
  double u = 0.0, v = 0.0;
  switch (face % 3) {
    case 0: u = n.y / a; v = n.z / a; break;  // +-X: others (y, z)
    case 1: u = n.x / a; v = n.z / a; break;  // +-Y: others (x, z)
    case 2: u = n.x / a; v = n.y / a; break;  // +-Z: others (x, y)
  }
  return {face, std::clamp(u, -1.0, 1.0), std::clamp(v, -1.0, 1.0)};
}

GeoPoint from_face_coord(const FaceCoord& fc) {
  double s = fc.face < 3 ? 1.0 : -1.0;
  double x = 0, y = 0, z = 0;
  switch (fc.face % 3) {
    case 0: x = s; y = fc.u; z = fc.v; break;
    case 1: y = s; x = fc.u; z = fc.v; break;
    case 2: z = s; x = fc.u; y = fc.v; break;
  }
  double norm = std::sqrt(x * x + y * y + z * z);
  return UnitVec3{x / norm, y / norm, z / norm}.to_point();
}

CellId cell_id_at_level(const GeoPoint& p, int depth) {
  if (depth < 0 || depth > kMaxDepth) {
    throw DataError("cell_id_at_level: depth out of range");
  }
  FaceCoord fc = to_face_coord(p);
  CellId c(fc.face);
  double lo_u = -1.0, hi_u = 1.0, lo_v = -1.0, hi_v = 1.0;
  for (int d = 0; d < depth; ++d) {
    double mid_u = 0.5 * (lo_u + hi_u);
    double mid_v = 0.5 * (lo_v + hi_v);
    // Intervals are half-open [lo, mid) / [mid, hi); the face boundary u=1
    // lands in the topmost interval, which is effectively closed.
    int bu = fc.u >= mid_u ? 1 : 0;
    int bv = fc.v >= mid_v ? 1 : 0;
    c = c.child(bu + 2 * bv);
    (bu ? lo_u : hi_u) = mid_u;
    (bv ? lo_v : hi_v) = mid_v;
  }
  return c;
}

GeoPoint cell_center(const CellId& c) {
  double lo_u = -1.0, hi_u = 1.0, lo_v = -1.0, hi_v = 1.0;
  for (int k = 0; k < c.depth(); ++k) {
    int d = c.digit(k);
    double mid_u = 0.5 * (lo_u + hi_u);
    double mid_v = 0.5 * (lo_v + hi_v);
    ((d & 1) ? lo_u : hi_u) = mid_u;
    ((d & 2) ? lo_v : hi_v) = mid_v;
  }
  return from_face_coord(
      {c.face(), 0.5 * (lo_u + hi_u), 0.5 * (lo_v + hi_v)});
}

bool cell_contains(const CellId& c, const GeoPoint& p) {
  // Defined directly off cell_id_at_level so the half-open boundary
  // convention is applied in exactly one place.
  return cell_id_at_level(p, c.depth()) == c;
}

CellId parent(const CellId& c) { return c.parent(); }

std::optional<GeoPoint> spherical_mean(std::span<const GeoPoint> points) {
  if (points.empty()) return std::nullopt;
  double sx = 0, sy = 0, sz = 0;
  for (const GeoPoint& p : points) {
    UnitVec3 n = UnitVec3::from_point(p);
    sx += n.x;
    sy += n.y;
    sz += n.z;
  }
  double n = static_cast<double>(points.size());
  sx /= n;
  sy /= n;
  sz /= n;
  double norm = std::sqrt(sx * sx + sy * sy + sz * sz);
  if (norm < 1e-6) return std::nullopt;
  return UnitVec3{sx / norm, sy / norm, sz / norm}.to_point();
}

}  // namespace geosurge::geodesy
