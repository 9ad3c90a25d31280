#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

namespace geolgm {

inline constexpr double kEarthRadiusKm = 6371.0;
inline constexpr double kDegToRad = std::numbers::pi / 180.0;
inline constexpr double kRadToDeg = 180.0 / std::numbers::pi;

/// Geographic location in degrees. `lon` lives in [-180, 180).
struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;

  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

/// Wraps longitude into [-180, 180) and clamps latitude into [-90, 90].
/// Idempotent.
inline GeoPoint normalize(GeoPoint p) {
  p.lat = std::clamp(p.lat, -90.0, 90.0);
  double lon = std::fmod(p.lon + 180.0, 360.0);
  if (lon < 0.0) lon += 360.0;
  p.lon = lon - 180.0;
  if (p.lon >= 180.0) p.lon -= 360.0;
  return p;
}

inline bool in_bounds(const GeoPoint& p) {
  return std::isfinite(p.lat) && std::isfinite(p.lon) && p.lat >= -90.0 &&
         p.lat <= 90.0 && p.lon >= -180.0 && p.lon < 180.0;
}

/// Point on the unit sphere.
struct UnitVec3 {
  double x = 1.0;
  double y = 0.0;
  double z = 0.0;

  Eigen::Vector3d vec() const { return {x, y, z}; }

  /// Projects an arbitrary nonzero vector onto the sphere.
  static UnitVec3 from(const Eigen::Vector3d& v) {
    const Eigen::Vector3d u = v.normalized();
    return {u.x(), u.y(), u.z()};
  }

  friend bool operator==(const UnitVec3&, const UnitVec3&) = default;
};

inline UnitVec3 to_unit_vector(const GeoPoint& p) {
  const double lat = p.lat * kDegToRad;
  const double lon = p.lon * kDegToRad;
  return {std::cos(lat) * std::cos(lon), std::cos(lat) * std::sin(lon),
          std::sin(lat)};
}

inline GeoPoint to_geopoint(const UnitVec3& u) {
  const double horizontal = std::hypot(u.x, u.y);
  GeoPoint p{std::atan2(u.z, horizontal) * kRadToDeg,
             std::atan2(u.y, u.x) * kRadToDeg};
  return normalize(p);
}

/// Angle between two unit vectors in radians. The atan2 form stays accurate
/// for nearly coincident and nearly antipodal points.
inline double central_angle(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

inline double central_angle(const GeoPoint& a, const GeoPoint& b) {
  return central_angle(to_unit_vector(a).vec(), to_unit_vector(b).vec());
}

inline double great_circle_distance(const GeoPoint& a, const GeoPoint& b,
                                    double radius = kEarthRadiusKm) {
  return central_angle(a, b) * radius;
}

}  // namespace geolgm
